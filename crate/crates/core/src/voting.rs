//! Speaker-level soft voting over segment probabilities.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVote {
    pub speaker_id: String,
    pub predicted: Label,
    pub mean_probs: [f64; 2],
}

/// Averages the probability rows of `nodes`. An exact tie goes to healthy.
pub fn vote(probs: &Array2<f64>, nodes: &[usize]) -> Option<([f64; 2], Label)> {
    if nodes.is_empty() {
        return None;
    }
    let mut acc = [0.0; 2];
    for &i in nodes {
        acc[0] += probs[[i, 0]];
        acc[1] += probs[[i, 1]];
    }
    let n = nodes.len() as f64;
    let mean = [acc[0] / n, acc[1] / n];
    let predicted = if mean[1] > mean[0] {
        Label::Pd
    } else {
        Label::Healthy
    };
    Some((mean, predicted))
}

/// One vote per speaker, in the order given.
pub fn soft_vote<'a, I>(probs: &Array2<f64>, speakers: I) -> Result<Vec<SpeakerVote>>
where
    I: IntoIterator<Item = (&'a str, &'a [usize])>,
{
    speakers
        .into_iter()
        .map(|(id, nodes)| {
            let (mean_probs, predicted) =
                vote(probs, nodes).ok_or_else(|| Error::EmptySpeaker(id.to_string()))?;
            Ok(SpeakerVote {
                speaker_id: id.to_string(),
                predicted,
                mean_probs,
            })
        })
        .collect()
}

/// Percentage of correctly voted speakers; `None` when there are none.
pub fn accuracy<'a>(
    probs: &Array2<f64>,
    groups: impl IntoIterator<Item = (Label, &'a [usize])>,
) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (label, nodes) in groups {
        if let Some((_, p)) = vote(probs, nodes) {
            total += 1;
            hit += usize::from(p == label);
        }
    }
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

/// Mean segment-level cross-entropy of the true class, with probabilities
/// floored at `1e-12`; `None` when there are no segments.
pub fn log_loss<'a>(
    probs: &Array2<f64>,
    groups: impl IntoIterator<Item = (Label, &'a [usize])>,
) -> Option<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for (label, nodes) in groups {
        for &i in nodes {
            total -= probs[[i, label.index()]].max(1e-12).ln();
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}
