//! FC and KNN baselines operating on raw segment embeddings.

use ndarray::{concatenate, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::gcn::{self, GcnModel, History, PropagationMatrix, Supervision, TrainConfig};
use crate::graph::{check_cosine_rows, DistanceMeasure};

/// Single linear layer followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcModel {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl FcModel {
    /// The equivalent zero-layer GCN.
    pub fn as_gcn(&self) -> GcnModel {
        GcnModel {
            layer_weights: Vec::new(),
            head_weight: self.weight.clone(),
            head_bias: self.bias.clone(),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, probs) = gcn::forward(&self.as_gcn(), &PropagationMatrix::identity(x.nrows()), x)?;
        Ok(probs)
    }
}

/// Rows of one split with their labels and speaker keys.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRows<'a> {
    pub x: &'a Array2<f64>,
    pub labels: &'a [Label],
    pub speakers: &'a [usize],
}

/// Trains the FC baseline with the same Adam/early-stopping loop as the GCN.
/// Validation rows only drive model selection.
pub fn fc_train(
    train: LabeledRows<'_>,
    val: LabeledRows<'_>,
    cfg: &TrainConfig,
) -> Result<(FcModel, History)> {
    if train.x.nrows() == 0 {
        return Err(Error::EmptyMask);
    }
    if train.x.ncols() != val.x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} columns, val has {}",
            train.x.ncols(),
            val.x.ncols()
        )));
    }
    for part in [&train, &val] {
        if part.labels.len() != part.x.nrows() || part.speakers.len() != part.x.nrows() {
            return Err(Error::ShapeMismatch(
                "labels/speakers length differs from rows".into(),
            ));
        }
    }
    let x = concatenate(Axis(0), &[train.x.view(), val.x.view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let (nt, nv) = (train.x.nrows(), val.x.nrows());
    let labels: Vec<Label> = train.labels.iter().chain(val.labels).copied().collect();
    let speakers: Vec<usize> = train.speakers.iter().chain(val.speakers).copied().collect();
    let train_mask: Vec<bool> = (0..nt + nv).map(|i| i < nt).collect();
    let val_mask: Vec<bool> = train_mask.iter().map(|t| !t).collect();
    let sup = Supervision::new(&labels, &speakers, &train_mask, &val_mask)?;

    let model = GcnModel::new(x.ncols(), cfg.hidden_width, 0, cfg.seed);
    let (trained, history) =
        gcn::train(model, &PropagationMatrix::identity(nt + nv), &x, &sup, cfg)?;
    Ok((
        FcModel {
            weight: trained.head_weight,
            bias: trained.head_bias,
        },
        history,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub distance: DistanceMeasure,
}

/// Class fractions among the `k` nearest training rows of each query.
/// Equal distances go to the lower training-row index.
pub fn knn_predict(
    train_x: &Array2<f64>,
    train_labels: &[Label],
    query_x: &Array2<f64>,
    cfg: &KnnConfig,
) -> Result<Array2<f64>> {
    let n = train_x.nrows();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::KTooLarge {
            k: cfg.k,
            limit: n + 1,
        });
    }
    if train_labels.len() != n {
        return Err(Error::ShapeMismatch(
            "train labels length differs from rows".into(),
        ));
    }
    if train_x.ncols() != query_x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} columns, queries have {}",
            train_x.ncols(),
            query_x.ncols()
        )));
    }
    if cfg.distance == DistanceMeasure::Cosine {
        check_cosine_rows(train_x)?;
        check_cosine_rows(query_x)?;
    }

    let rows: Vec<[f64; 2]> = (0..query_x.nrows())
        .into_par_iter()
        .map(|q| {
            let query = query_x.row(q);
            let dist: Vec<f64> = train_x
                .rows()
                .into_iter()
                .map(|r| cfg.distance.eval(query, r))
                .collect();
            let mut idx: Vec<usize> = (0..n).collect();
            let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
            if cfg.k < n {
                idx.select_nth_unstable_by(cfg.k - 1, cmp);
            }
            let pd = idx[..cfg.k]
                .iter()
                .filter(|&&i| train_labels[i] == Label::Pd)
                .count();
            let k = cfg.k as f64;
            [(cfg.k - pd) as f64 / k, pd as f64 / k]
        })
        .collect();
    let mut out = Array2::zeros((rows.len(), 2));
    for (mut o, r) in out.rows_mut().into_iter().zip(rows) {
        o[0] = r[0];
        o[1] = r[1];
    }
    Ok(out)
}
