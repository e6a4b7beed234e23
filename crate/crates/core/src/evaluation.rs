//! Speaker-independent cross-validation, grid search and reporting.
//!
//! Every replicate splits each class's speakers into ten shuffled blocks.
//! Fold `f` tests on block `f`, validates on block `f + 1 (mod 10)` and trains
//! on the rest. Within a fold every grid cell is trained, the cell with the
//! best speaker-level validation accuracy is selected, ties going to the lower
//! validation cross-entropy and then to the earlier grid position, and its
//! test accuracy is recorded. A replicate scores the mean
//! of its fold accuracies; the report gives mean and population standard
//! deviation over replicates.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fc_train, knn_predict, FcModel, KnnConfig, LabeledRows};
use crate::dataset::{Dataset, Label, SpeakerTable};
use crate::error::{Error, Result};
use crate::gcn::{self, GcnModel, PropagationMatrix, Supervision, TrainConfig};
use crate::graph::{kernel_from_features, DistanceMeasure, NeighborRanking};
use crate::voting::{self, SpeakerVote};

pub const FOLDS: usize = 10;

pub const PAPER_FC_LEARNING_RATES: [f64; 2] = [1e-3, 1e-2];
pub const PAPER_GCN_LEARNING_RATES: [f64; 2] = [1e-3, 1e-4];
pub const PAPER_NEIGHBORS: [usize; 6] = [1, 2, 3, 5, 7, 10];
pub const PAPER_LAYERS: [usize; 4] = [2, 3, 4, 5];

/// SplitMix64 finalizer; derives independent sub-seeds from one master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub replicate_seed: u64,
    pub folds: Vec<Fold>,
}

fn blocks(ids: &[&str]) -> Vec<Vec<String>> {
    let n = ids.len();
    (0..FOLDS)
        .map(|b| {
            ids[b * n / FOLDS..(b + 1) * n / FOLDS]
                .iter()
                .map(|s| s.to_string())
                .collect()
        })
        .collect()
}

/// Class-stratified rotation plans, one per replicate.
pub fn make_cv_plans(speakers: &SpeakerTable, replicates: usize, seed: u64) -> Result<Vec<CvPlan>> {
    for label in Label::ALL {
        let got = speakers.speakers_of(label).len();
        if got < FOLDS {
            return Err(Error::TooFewSpeakers {
                class: label as u8,
                got,
                needed: FOLDS,
            });
        }
    }
    Ok((0..replicates as u64)
        .map(|r| make_plan(speakers, derive_seed(seed, r)))
        .collect())
}

fn make_plan(speakers: &SpeakerTable, replicate_seed: u64) -> CvPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed);
    let per_class: Vec<Vec<Vec<String>>> = Label::ALL
        .iter()
        .map(|&l| {
            let mut ids = speakers.speakers_of(l);
            ids.shuffle(&mut rng);
            blocks(&ids)
        })
        .collect();
    let folds = (0..FOLDS)
        .map(|f| {
            let val_block = (f + 1) % FOLDS;
            let mut fold = Fold {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for class_blocks in &per_class {
                for (b, ids) in class_blocks.iter().enumerate() {
                    let dst = if b == f {
                        &mut fold.test
                    } else if b == val_block {
                        &mut fold.val
                    } else {
                        &mut fold.train
                    };
                    dst.extend(ids.iter().cloned());
                }
            }
            fold.train.sort();
            fold.val.sort();
            fold.test.sort();
            fold
        })
        .collect();
    CvPlan {
        replicate_seed,
        folds,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fc,
    Knn,
    Gcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fc => "fc",
            ModelKind::Knn => "knn",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(ModelKind::Fc),
            "knn" => Ok(ModelKind::Knn),
            "gcn" => Ok(ModelKind::Gcn),
            other => Err(Error::InvalidConfig(format!("unknown model {other:?}"))),
        }
    }
}

/// Hyperparameter grid plus the fixed training knobs shared by every cell.
/// Axes a model does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub model: ModelKind,
    pub learning_rates: Vec<f64>,
    pub ks: Vec<usize>,
    pub layers: Vec<usize>,
    pub distances: Vec<DistanceMeasure>,
    pub hidden_width: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
}

impl GridSpec {
    pub fn paper(model: ModelKind) -> Self {
        let t = TrainConfig::default();
        let lrs = match model {
            ModelKind::Fc => PAPER_FC_LEARNING_RATES.to_vec(),
            ModelKind::Gcn => PAPER_GCN_LEARNING_RATES.to_vec(),
            ModelKind::Knn => Vec::new(),
        };
        GridSpec {
            model,
            learning_rates: lrs,
            ks: PAPER_NEIGHBORS.to_vec(),
            layers: PAPER_LAYERS.to_vec(),
            distances: DistanceMeasure::ALL.to_vec(),
            hidden_width: t.hidden_width,
            max_epochs: t.max_epochs,
            patience: t.patience,
            weight_decay: t.weight_decay,
        }
    }

    fn uses_lr(&self) -> bool {
        self.model != ModelKind::Knn
    }

    fn uses_graph_axes(&self) -> bool {
        self.model != ModelKind::Fc
    }

    /// Cells in lexicographic `(lr, k, L, distance)` order, each axis in the
    /// order listed.
    pub fn cells(&self) -> Vec<GridCell> {
        let lrs: Vec<Option<f64>> = if self.uses_lr() {
            self.learning_rates.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let ks: Vec<Option<usize>> = if self.uses_graph_axes() {
            self.ks.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let layers: Vec<Option<usize>> = if self.model == ModelKind::Gcn {
            self.layers.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let dists: Vec<Option<DistanceMeasure>> = if self.uses_graph_axes() {
            self.distances.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &lr in &lrs {
            for &k in &ks {
                for &l in &layers {
                    for &d in &dists {
                        out.push(GridCell {
                            learning_rate: lr,
                            k,
                            layers: l,
                            distance: d,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.uses_lr() && self.learning_rates.is_empty() {
            return bad(format!(
                "{} grid needs at least one learning rate",
                self.model
            ));
        }
        if self.uses_graph_axes() && (self.ks.is_empty() || self.distances.is_empty()) {
            return bad(format!("{} grid needs k and distance values", self.model));
        }
        if self.model == ModelKind::Gcn && self.layers.is_empty() {
            return bad("gcn grid needs layer depths".into());
        }
        if self.uses_graph_axes() && self.ks.contains(&0) {
            return bad("k must be positive".into());
        }
        self.train_config(1e-3, 0).validate()
    }

    fn train_config(&self, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            hidden_width: self.hidden_width,
            seed,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: Option<f64>,
    pub k: Option<usize>,
    pub layers: Option<usize>,
    pub distance: Option<DistanceMeasure>,
}

/// Result of fitting one grid cell on one fold.
#[derive(Debug, Clone)]
pub struct FittedCell {
    /// Class probabilities for every node; rows of training nodes are only
    /// meaningful for FC and GCN.
    pub probs: Array2<f64>,
    pub gcn: Option<GcnModel>,
    pub fc: Option<FcModel>,
}

/// Fold-independent inputs shared by every job of an experiment.
pub struct ExperimentContext<'a> {
    dataset: &'a Dataset,
    grid: GridSpec,
    features: Array2<f64>,
    labels: Vec<Label>,
    speaker_index: HashMap<&'a str, usize>,
    speaker_of: Vec<usize>,
    propagation: HashMap<(DistanceMeasure, usize), PropagationMatrix>,
}

impl<'a> ExperimentContext<'a> {
    /// Builds every graph the grid needs over all segments.
    pub fn new(dataset: &'a Dataset, grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        let features = dataset.features();
        let speaker_index: HashMap<&str, usize> = dataset
            .speakers()
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id, i))
            .collect();
        let speaker_of = dataset
            .records()
            .iter()
            .map(|r| speaker_index[r.speaker_id.as_str()])
            .collect();

        let mut propagation = HashMap::new();
        if grid.model == ModelKind::Gcn {
            let built: Vec<Vec<((DistanceMeasure, usize), PropagationMatrix)>> = grid
                .distances
                .par_iter()
                .map(|&d| {
                    let kernel = kernel_from_features(&features, d)?;
                    let ranking = NeighborRanking::new(&kernel);
                    grid.ks
                        .iter()
                        .map(|&k| Ok(((d, k), gcn::normalize_adjacency(&ranking.graph(k)?))))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            propagation.extend(built.into_iter().flatten());
        }

        Ok(ExperimentContext {
            dataset,
            grid: grid.clone(),
            labels: dataset.labels(),
            features,
            speaker_index,
            speaker_of,
            propagation,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn nodes_of<'s>(&'s self, speakers: &'s [String]) -> impl Iterator<Item = usize> + 's {
        speakers.iter().flat_map(move |s| {
            self.dataset
                .speakers()
                .get(s)
                .map(|e| e.segments.as_slice())
                .unwrap_or(&[])
                .iter()
                .copied()
        })
    }

    fn mask(&self, speakers: &[String]) -> Vec<bool> {
        let mut m = vec![false; self.labels.len()];
        self.nodes_of(speakers).for_each(|i| m[i] = true);
        m
    }

    fn check_fold(&self, fold: &Fold) -> Result<()> {
        for s in fold.train.iter().chain(&fold.val).chain(&fold.test) {
            if !self.speaker_index.contains_key(s.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "plan names unknown speaker {s:?}"
                )));
            }
        }
        Ok(())
    }

    /// Trains (or, for KNN, indexes) one cell on a fold. Only training and
    /// validation labels are visible to this step.
    pub fn fit_cell(&self, fold: &Fold, cell: &GridCell, seed: u64) -> Result<FittedCell> {
        self.check_fold(fold)?;
        let train_mask = self.mask(&fold.train);
        let val_mask = self.mask(&fold.val);
        let n = self.labels.len();
        match self.grid.model {
            ModelKind::Gcn => {
                let (d, k, layers, lr) = match *cell {
                    GridCell {
                        distance: Some(d),
                        k: Some(k),
                        layers: Some(l),
                        learning_rate: Some(lr),
                    } => (d, k, l, lr),
                    _ => return Err(Error::InvalidConfig("incomplete gcn grid cell".into())),
                };
                let prop = self
                    .propagation
                    .get(&(d, k))
                    .ok_or_else(|| Error::InvalidConfig(format!("no graph built for {d} k={k}")))?;
                let sup = Supervision::new(&self.labels, &self.speaker_of, &train_mask, &val_mask)?;
                let cfg = self.grid.train_config(lr, seed);
                let model = GcnModel::new(self.features.ncols(), cfg.hidden_width, layers, seed);
                let (model, _) = gcn::train(model, prop, &self.features, &sup, &cfg)?;
                let (_, probs) = gcn::forward(&model, prop, &self.features)?;
                Ok(FittedCell {
                    probs,
                    gcn: Some(model),
                    fc: None,
                })
            }
            ModelKind::Fc => {
                let lr = cell
                    .learning_rate
                    .ok_or_else(|| Error::InvalidConfig("fc cell needs a learning rate".into()))?;
                let pick = |mask: &[bool]| -> Vec<usize> { (0..n).filter(|&i| mask[i]).collect() };
                let (ti, vi) = (pick(&train_mask), pick(&val_mask));
                let tx = self.features.select(Axis(0), &ti);
                let vx = self.features.select(Axis(0), &vi);
                let tl: Vec<Label> = ti.iter().map(|&i| self.labels[i]).collect();
                let vl: Vec<Label> = vi.iter().map(|&i| self.labels[i]).collect();
                let ts: Vec<usize> = ti.iter().map(|&i| self.speaker_of[i]).collect();
                let vs: Vec<usize> = vi.iter().map(|&i| self.speaker_of[i]).collect();
                let cfg = self.grid.train_config(lr, seed);
                let (fc, _) = fc_train(
                    LabeledRows {
                        x: &tx,
                        labels: &tl,
                        speakers: &ts,
                    },
                    LabeledRows {
                        x: &vx,
                        labels: &vl,
                        speakers: &vs,
                    },
                    &cfg,
                )?;
                let probs = fc.predict(&self.features)?;
                Ok(FittedCell {
                    probs,
                    gcn: None,
                    fc: Some(fc),
                })
            }
            ModelKind::Knn => {
                let (k, d) = match (cell.k, cell.distance) {
                    (Some(k), Some(d)) => (k, d),
                    _ => return Err(Error::InvalidConfig("knn cell needs k and distance".into())),
                };
                let ti: Vec<usize> = (0..n).filter(|&i| train_mask[i]).collect();
                let qi: Vec<usize> = (0..n).filter(|&i| !train_mask[i]).collect();
                let tx = self.features.select(Axis(0), &ti);
                let tl: Vec<Label> = ti.iter().map(|&i| self.labels[i]).collect();
                let qx = self.features.select(Axis(0), &qi);
                let qp = knn_predict(&tx, &tl, &qx, &KnnConfig { k, distance: d })?;
                let mut probs = Array2::zeros((n, 2));
                for (row, &i) in qi.iter().enumerate() {
                    probs.row_mut(i).assign(&qp.row(row));
                }
                Ok(FittedCell {
                    probs,
                    gcn: None,
                    fc: None,
                })
            }
        }
    }

    fn speaker_groups<'s>(&'s self, speakers: &'s [String]) -> Vec<(Label, &'s [usize])> {
        speakers
            .iter()
            .filter_map(|s| self.dataset.speakers().get(s))
            .map(|e| (e.label, e.segments.as_slice()))
            .collect()
    }

    fn run_fold(&self, replicate: usize, plan: &CvPlan, fold_index: usize) -> Result<FoldRecord> {
        let fold = &plan.folds[fold_index];
        let seed = derive_seed(plan.replicate_seed, fold_index as u64);
        let cells = self.grid.cells();
        let val_groups = self.speaker_groups(&fold.val);
        let test_groups = self.speaker_groups(&fold.test);

        let mut scores = Vec::with_capacity(cells.len());
        let mut best: Option<(CellScore, Array2<f64>)> = None;
        for (ci, cell) in cells.iter().enumerate() {
            let fitted = self.fit_cell(fold, cell, seed)?;
            let score = CellScore {
                cell: ci,
                val_accuracy: voting::accuracy(&fitted.probs, val_groups.iter().copied())
                    .unwrap_or(0.0),
                val_loss: voting::log_loss(&fitted.probs, val_groups.iter().copied())
                    .unwrap_or(f64::INFINITY),
                test_accuracy: voting::accuracy(&fitted.probs, test_groups.iter().copied())
                    .unwrap_or(0.0),
            };
            if best.as_ref().is_none_or(|(b, _)| score.beats(b)) {
                best = Some((score.clone(), fitted.probs));
            }
            scores.push(score);
        }
        let (sel, probs) = best
            .map(|(s, p)| (s.cell, p))
            .ok_or_else(|| Error::InvalidConfig("empty grid".into()))?;

        let speakers = fold.test.iter().map(|s| {
            let nodes = self
                .dataset
                .speakers()
                .get(s)
                .map(|e| e.segments.as_slice())
                .unwrap_or(&[]);
            (s.as_str(), nodes)
        });
        let votes = voting::soft_vote(&probs, speakers)?;
        let segment_probs = self
            .nodes_of(&fold.test)
            .map(|i| SegmentProb {
                segment_id: self.dataset.records()[i].segment_id.clone(),
                probs: [probs[[i, 0]], probs[[i, 1]]],
            })
            .collect();
        Ok(FoldRecord {
            replicate,
            fold: fold_index,
            selected_cell: sel,
            val_accuracy: scores[sel].val_accuracy,
            test_accuracy: scores[sel].test_accuracy,
            cell_scores: scores,
            speaker_votes: votes,
            segment_probs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub cell: usize,
    pub val_accuracy: f64,
    /// Mean segment-level cross-entropy on validation speakers.
    pub val_loss: f64,
    pub test_accuracy: f64,
}

impl CellScore {
    /// Higher validation accuracy wins, then lower validation loss. Full ties
    /// keep the earlier cell.
    pub fn beats(&self, other: &CellScore) -> bool {
        self.val_accuracy > other.val_accuracy
            || (self.val_accuracy == other.val_accuracy && self.val_loss < other.val_loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProb {
    pub segment_id: String,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub replicate: usize,
    pub fold: usize,
    pub selected_cell: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub cell_scores: Vec<CellScore>,
    /// Test speakers under the selected cell.
    pub speaker_votes: Vec<SpeakerVote>,
    pub segment_probs: Vec<SegmentProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub replicate_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Population statistics over per-replicate means.
    pub fn from_replicate_scores(replicate_scores: Vec<f64>) -> Self {
        let n = replicate_scores.len().max(1) as f64;
        let mean = replicate_scores.iter().sum::<f64>() / n;
        let var = replicate_scores
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / n;
        Aggregate {
            replicate_scores,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: ModelKind,
    pub grid: GridSpec,
    pub cells: Vec<GridCell>,
    pub replicate_seeds: Vec<u64>,
    pub folds: Vec<FoldRecord>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    /// Re-runs fold-level selection restricted to the cells accepted by
    /// `keep`, then aggregates the selected test accuracies.
    pub fn aggregate_where(&self, keep: impl Fn(&GridCell) -> bool) -> Option<Aggregate> {
        let allowed: Vec<bool> = self.cells.iter().map(&keep).collect();
        if !allowed.iter().any(|&a| a) {
            return None;
        }
        let mut per_rep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for f in &self.folds {
            let mut best: Option<&CellScore> = None;
            for s in f.cell_scores.iter().filter(|s| allowed[s.cell]) {
                if best.is_none_or(|b| s.beats(b)) {
                    best = Some(s);
                }
            }
            per_rep
                .entry(f.replicate)
                .or_default()
                .push(best.expect("allowed cell present").test_accuracy);
        }
        Some(Aggregate::from_replicate_scores(
            per_rep
                .into_values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect(),
        ))
    }

    /// Recomputes the headline aggregate from the stored per-fold records.
    pub fn recompute_aggregate(&self) -> Aggregate {
        let mut per_rep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for f in &self.folds {
            per_rep
                .entry(f.replicate)
                .or_default()
                .push(f.test_accuracy);
        }
        Aggregate::from_replicate_scores(
            per_rep
                .into_values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect(),
        )
    }

    /// Summary rows: the full grid, each distance with its other axes tuned,
    /// and every fixed `(distance, k, L)` combination with the learning rate tuned.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let g = &self.grid;
        let tuned = |used: bool| if used { "tuned" } else { "-" }.to_string();
        let has_graph = g.model != ModelKind::Fc;
        let has_layers = g.model == ModelKind::Gcn;
        let mut rows = vec![SummaryRow {
            model: g.model,
            distance: if has_graph {
                "tuned".into()
            } else {
                "-".into()
            },
            k: tuned(has_graph),
            layers: tuned(has_layers),
            aggregate: self.aggregate.clone(),
        }];
        if !has_graph {
            return rows;
        }
        for &d in &g.distances {
            if let Some(a) = self.aggregate_where(|c| c.distance == Some(d)) {
                rows.push(SummaryRow {
                    model: g.model,
                    distance: d.name().into(),
                    k: "tuned".into(),
                    layers: tuned(has_layers),
                    aggregate: a,
                });
            }
        }
        let layer_axis: Vec<Option<usize>> = if has_layers {
            g.layers.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for &d in &g.distances {
            for &k in &g.ks {
                for &l in &layer_axis {
                    let keep =
                        |c: &GridCell| c.distance == Some(d) && c.k == Some(k) && c.layers == l;
                    if let Some(a) = self.aggregate_where(keep) {
                        rows.push(SummaryRow {
                            model: g.model,
                            distance: d.name().into(),
                            k: k.to_string(),
                            layers: l.map_or("-".into(), |v| v.to_string()),
                            aggregate: a,
                        });
                    }
                }
            }
        }
        rows
    }

    pub fn write_summary_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "model\tdistance\tk\tL\tmean\tstd")?;
        for r in self.summary() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
                r.model, r.distance, r.k, r.layers, r.aggregate.mean, r.aggregate.std
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub distance: String,
    pub k: String,
    pub layers: String,
    pub aggregate: Aggregate,
}

/// Runs every (replicate, fold) job in parallel; output order is fixed.
pub fn run_experiment(
    dataset: &Dataset,
    grid: &GridSpec,
    plans: &[CvPlan],
) -> Result<ExperimentReport> {
    if plans.is_empty() {
        return Err(Error::InvalidConfig("no cross-validation plans".into()));
    }
    let ctx = ExperimentContext::new(dataset, grid)?;
    let jobs: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(r, p)| (0..p.folds.len()).map(move |f| (r, f)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(r, f)| {
            let rec = ctx.run_fold(r, &plans[r], f);
            if let Ok(rec) = &rec {
                log::debug!(
                    "{} replicate {r} fold {f}: cell {} val {:.1} test {:.1}",
                    grid.model,
                    rec.selected_cell,
                    rec.val_accuracy,
                    rec.test_accuracy
                );
            }
            rec
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport {
        model: grid.model,
        grid: grid.clone(),
        cells: grid.cells(),
        replicate_seeds: plans.iter().map(|p| p.replicate_seed).collect(),
        folds,
        aggregate: Aggregate::from_replicate_scores(Vec::new()),
    };
    report.aggregate = report.recompute_aggregate();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    #[serde(rename = "L")]
    Layers,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Layers => "L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance: DistanceMeasure,
    pub value: usize,
    pub mean: f64,
    pub std: f64,
}

/// Varies one GCN axis per distance while the other stays fixed; the
/// learning rate is still tuned on validation at every point.
pub fn sweep(
    dataset: &Dataset,
    axis: SweepAxis,
    fixed: &[(DistanceMeasure, usize)],
    values: &[usize],
    base: &GridSpec,
    plans: &[CvPlan],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one value".into(),
        ));
    }
    let mut points = Vec::new();
    for &(distance, fixed_value) in fixed {
        let mut grid = base.clone();
        grid.model = ModelKind::Gcn;
        grid.distances = vec![distance];
        match axis {
            SweepAxis::K => {
                grid.ks = values.to_vec();
                grid.layers = vec![fixed_value];
            }
            SweepAxis::Layers => {
                grid.ks = vec![fixed_value];
                grid.layers = values.to_vec();
            }
        }
        let report = run_experiment(dataset, &grid, plans)?;
        for &v in values {
            let a = report
                .aggregate_where(|c| match axis {
                    SweepAxis::K => c.k == Some(v),
                    SweepAxis::Layers => c.layers == Some(v),
                })
                .expect("swept value is in the grid");
            points.push(SweepPoint {
                distance,
                value: v,
                mean: a.mean,
                std: a.std,
            });
        }
    }
    Ok(points)
}

/// `sweep` over k with a fixed depth per distance.
pub fn sweep_k(
    dataset: &Dataset,
    fixed_layers: &[(DistanceMeasure, usize)],
    ks: &[usize],
    base: &GridSpec,
    plans: &[CvPlan],
) -> Result<Vec<SweepPoint>> {
    sweep(dataset, SweepAxis::K, fixed_layers, ks, base, plans)
}

/// `sweep` over depth with a fixed k per distance.
pub fn sweep_layers(
    dataset: &Dataset,
    fixed_k: &[(DistanceMeasure, usize)],
    layers: &[usize],
    base: &GridSpec,
    plans: &[CvPlan],
) -> Result<Vec<SweepPoint>> {
    sweep(dataset, SweepAxis::Layers, fixed_k, layers, base, plans)
}

pub fn write_sweep_tsv(
    axis: SweepAxis,
    points: &[SweepPoint],
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "distance\t{}\tmean\tstd", axis.name())?;
    for p in points {
        writeln!(
            w,
            "{}\t{}\t{:.4}\t{:.4}",
            p.distance, p.value, p.mean, p.std
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SegmentRecord;

    fn table(per_class: usize) -> SpeakerTable {
        let recs: Vec<SegmentRecord> = Label::ALL
            .iter()
            .flat_map(|&l| {
                (0..per_class).map(move |s| SegmentRecord {
                    segment_id: format!("{l}-{s}"),
                    speaker_id: format!("{l}-{s:03}"),
                    label: l,
                    embedding: vec![1.0],
                    utterance_id: String::new(),
                })
            })
            .collect();
        SpeakerTable::from_records(&recs).unwrap()
    }

    #[test]
    fn fifty_fifty_split_sizes() {
        let t = table(50);
        let plans = make_cv_plans(&t, 1, 3).unwrap();
        for fold in &plans[0].folds {
            assert_eq!(fold.train.len(), 80);
            assert_eq!(fold.val.len(), 10);
            assert_eq!(fold.test.len(), 10);
            let pd = fold.test.iter().filter(|s| s.starts_with('1')).count();
            assert_eq!(pd, 5);
        }
    }

    #[test]
    fn rotation_covers_every_speaker_once() {
        let t = table(13);
        for plan in make_cv_plans(&t, 3, 9).unwrap() {
            let mut tested: Vec<&String> = plan.folds.iter().flat_map(|f| &f.test).collect();
            tested.sort();
            let before = tested.len();
            tested.dedup();
            assert_eq!(before, tested.len());
            assert_eq!(tested.len(), 26);
        }
    }

    #[test]
    fn too_few_speakers() {
        let err = make_cv_plans(&table(9), 1, 0).unwrap_err();
        assert_eq!(err.code(), "too-few-speakers");
    }

    #[test]
    fn seeds_change_plans() {
        let t = table(20);
        let a = make_cv_plans(&t, 2, 1).unwrap();
        assert_ne!(a[0].folds, a[1].folds);
        assert_eq!(a, make_cv_plans(&t, 2, 1).unwrap());
    }

    #[test]
    fn grid_order_is_lexicographic() {
        let mut g = GridSpec::paper(ModelKind::Gcn);
        g.learning_rates = vec![0.1, 0.2];
        g.ks = vec![1, 2];
        g.layers = vec![3];
        g.distances = vec![DistanceMeasure::Cosine, DistanceMeasure::Euclidean];
        let cells = g.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].learning_rate, Some(0.1));
        assert_eq!(cells[0].distance, Some(DistanceMeasure::Cosine));
        assert_eq!(cells[1].distance, Some(DistanceMeasure::Euclidean));
        assert_eq!(cells[2].k, Some(2));
        assert_eq!(cells[4].learning_rate, Some(0.2));
    }

    #[test]
    fn paper_grid_sizes() {
        assert_eq!(GridSpec::paper(ModelKind::Fc).cells().len(), 2);
        assert_eq!(GridSpec::paper(ModelKind::Knn).cells().len(), 18);
        assert_eq!(GridSpec::paper(ModelKind::Gcn).cells().len(), 144);
    }

    #[test]
    fn population_std() {
        let a = Aggregate::from_replicate_scores(vec![80.0, 90.0]);
        assert_eq!(a.mean, 85.0);
        assert_eq!(a.std, 5.0);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|i| derive_seed(7, i)).collect();
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 5);
    }
}
