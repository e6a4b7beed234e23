//! Gaussian-mixture stand-in for a speaker corpus.
//!
//! Two class centroids sit at `±separation/2` along a random unit direction.
//! Every speaker draws a sub-centroid around its class centroid, and every
//! segment adds unit isotropic noise to its speaker's sub-centroid. A fixed
//! fraction of each PD speaker's segments is instead drawn from the healthy
//! class mixture while keeping the PD label.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, SegmentRecord};
use crate::error::{Error, Result};

pub const NOISE_FLAGS_FILE: &str = "noise_flags.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub speakers_per_class: usize,
    pub segments_per_speaker: usize,
    pub dim: usize,
    /// Distance between class centroids, in units of the segment noise std.
    pub class_separation: f64,
    /// Std of speaker sub-centroids around their class centroid.
    pub speaker_spread: f64,
    /// Fraction of each PD speaker's segments drawn from the healthy class.
    pub label_noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speakers_per_class: 20,
            segments_per_speaker: 20,
            dim: 16,
            class_separation: 10.0,
            speaker_spread: 1.0,
            label_noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.speakers_per_class == 0 || self.segments_per_speaker == 0 || self.dim == 0 {
            return bad("speakers_per_class, segments_per_speaker and dim must be positive");
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be finite and nonnegative");
        }
        if !(self.speaker_spread >= 0.0 && self.speaker_spread.is_finite()) {
            return bad("speaker_spread must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return bad("label_noise_rate must lie in [0, 1)");
        }
        Ok(())
    }

    /// Noised segments per PD speaker, `floor(rate * segments)`.
    pub fn noised_per_speaker(&self) -> usize {
        // the epsilon keeps e.g. 0.29 * 100 from flooring to 28
        (self.label_noise_rate * self.segments_per_speaker as f64 + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    /// Parallel to the records: true where a PD segment came from the healthy class.
    pub noised: Vec<bool>,
}

impl SynthDataset {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.dataset.write_dir(dir)?;
        let mut out = Vec::new();
        writeln!(out, "segment_id\tis_noised").unwrap();
        for (r, &f) in self.dataset.records().iter().zip(&self.noised) {
            writeln!(out, "{}\t{}", r.segment_id, u8::from(f)).unwrap();
        }
        let path = dir.join(NOISE_FLAGS_FILE);
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Healthy speakers first (`hc000`..), then PD speakers (`pd000`..).
/// Embeddings are rounded to `f32` so the in-memory set equals what a
/// write/load cycle produces.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dir = loop {
        let v = gaussian(&mut rng, cfg.dim, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let half = cfg.class_separation / 2.0;
    let healthy_c: Vec<f64> = dir.iter().map(|d| -half * d).collect();
    let pd_c: Vec<f64> = dir.iter().map(|d| half * d).collect();
    let noised_count = cfg.noised_per_speaker();

    let mut records = Vec::new();
    let mut noised = Vec::new();
    for (label, prefix, centroid) in [(Label::Healthy, "hc", &healthy_c), (Label::Pd, "pd", &pd_c)]
    {
        for s in 0..cfg.speakers_per_class {
            let speaker = format!("{prefix}{s:03}");
            let sub = add(centroid, &gaussian(&mut rng, cfg.dim, cfg.speaker_spread));
            let mut flags = vec![false; cfg.segments_per_speaker];
            if label == Label::Pd {
                for i in index::sample(&mut rng, cfg.segments_per_speaker, noised_count) {
                    flags[i] = true;
                }
            }
            for (j, &flag) in flags.iter().enumerate() {
                // a noised segment is a fresh draw from the healthy class mixture
                let base = if flag {
                    add(&healthy_c, &gaussian(&mut rng, cfg.dim, cfg.speaker_spread))
                } else {
                    sub.clone()
                };
                let embedding = add(&base, &gaussian(&mut rng, cfg.dim, 1.0))
                    .into_iter()
                    .map(|v| v as f32 as f64)
                    .collect();
                records.push(SegmentRecord {
                    segment_id: format!("{speaker}_s{j:03}"),
                    speaker_id: speaker.clone(),
                    label,
                    embedding,
                    utterance_id: format!("{speaker}_u000"),
                });
                noised.push(flag);
            }
        }
    }
    Ok(SynthDataset {
        dataset: Dataset::new(records)?,
        noised,
    })
}
