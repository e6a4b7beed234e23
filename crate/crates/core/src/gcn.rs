//! Graph convolutional network with hand-written reverse-mode gradients.
//!
//! Each layer computes `H' = ReLU(P · H · W)` where `P` is the renormalized
//! adjacency `D^-1/2 (A + I) D^-1/2`. A linear head with bias and a row-wise
//! softmax turn the last layer into two class probabilities. Training is
//! full-batch Adam on the cross-entropy of the labeled training nodes.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_framed, write_framed, Label};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::voting;

/// Sparse symmetric propagation matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// `D^-1/2 (A + I) D^-1/2` with `D_ii = 1 + deg(i)`.
pub fn normalize_adjacency(adj: &Adjacency) -> PropagationMatrix {
    let n = adj.len();
    let deg: Vec<f64> = (0..n).map(|i| (adj.degree(i) + 1) as f64).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let nb = adj.neighbors(i);
        // neighbors are sorted; splice the self-loop in at its ordered slot
        let split = nb.partition_point(|&j| j < i);
        for &j in nb[..split]
            .iter()
            .chain(std::iter::once(&i))
            .chain(&nb[split..])
        {
            cols.push(j);
            vals.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
        row_ptr.push(cols.len());
    }
    PropagationMatrix {
        n,
        row_ptr,
        cols,
        vals,
    }
}

impl PropagationMatrix {
    pub fn identity(n: usize) -> Self {
        PropagationMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[[i, self.cols[p]]] = self.vals[p];
            }
        }
        a
    }

    /// `self · b`, accumulating each row in column order.
    pub fn matmul(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, b.ncols()));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                row.scaled_add(self.vals[p], &b.row(self.cols[p]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 30,
            hidden_width: 64,
            seed: 0,
            weight_decay: 5e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub layer_weights: Vec<Array2<f64>>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit))
}

impl GcnModel {
    /// Glorot-uniform weights, zero bias. With `layers == 0` the model is a
    /// plain linear classifier on the input features.
    pub fn new(input_dim: usize, hidden_width: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer_weights = Vec::with_capacity(layers);
        let mut fan_in = input_dim;
        for _ in 0..layers {
            layer_weights.push(glorot(&mut rng, fan_in, hidden_width));
            fan_in = hidden_width;
        }
        GcnModel {
            head_weight: glorot(&mut rng, fan_in, 2),
            head_bias: Array1::zeros(2),
            layer_weights,
        }
    }

    pub fn layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_weights
            .first()
            .unwrap_or(&self.head_weight)
            .nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.layer_weights.first().map_or(0, |w| w.ncols())
    }

    fn check_shapes(&self) -> Result<()> {
        let mut width = self.input_dim();
        for (l, w) in self.layer_weights.iter().enumerate() {
            if w.nrows() != width {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} expects {} inputs, previous width is {width}",
                    w.nrows()
                )));
            }
            width = w.ncols();
        }
        if self.head_weight.dim() != (width, 2) || self.head_bias.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "head is {:?}, expected ({width}, 2)",
                self.head_weight.dim()
            )));
        }
        Ok(())
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        GcnModel {
            layer_weights: self
                .layer_weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            head_weight: Array2::zeros(self.head_weight.raw_dim()),
            head_bias: Array1::zeros(2),
        }
    }

    /// Parameter tensors in a fixed order: layers, head weight, head bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self
            .layer_weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect();
        v.push(self.head_weight.as_slice().expect("standard layout"));
        v.push(self.head_bias.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self
            .layer_weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect();
        v.push(self.head_weight.as_slice_mut().expect("standard layout"));
        v.push(self.head_bias.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn decay_norm(&self) -> f64 {
        self.layer_weights
            .iter()
            .chain(std::iter::once(&self.head_weight))
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// Intermediate values kept for the backward pass.
struct Trace {
    /// `H_1 .. H_L`.
    acts: Vec<Array2<f64>>,
    /// Pre-activations `Z_0 .. Z_{L-1}`.
    pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

fn check_inputs(model: &GcnModel, prop: &PropagationMatrix, x: &Array2<f64>) -> Result<()> {
    model.check_shapes()?;
    if x.ncols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            x.ncols(),
            model.input_dim()
        )));
    }
    if model.layers() > 0 && prop.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "propagation matrix is {0}x{0}, features have {1} rows",
            prop.len(),
            x.nrows()
        )));
    }
    Ok(())
}

/// `Ã X` for models with graph layers, `X` itself for a head-only model. The
/// first layer computes `(Ã X) W`, which equals `Ã (X W)` and lets training
/// propagate the fixed input once.
fn propagated_input<'x>(
    model: &GcnModel,
    prop: &PropagationMatrix,
    x: &'x Array2<f64>,
) -> Cow<'x, Array2<f64>> {
    if model.layers() == 0 {
        Cow::Borrowed(x)
    } else {
        Cow::Owned(prop.matmul(x))
    }
}

fn run_forward(model: &GcnModel, prop: &PropagationMatrix, px: &Array2<f64>) -> Trace {
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(model.layers());
    let mut pre = Vec::with_capacity(model.layers());
    for w in &model.layer_weights {
        let z = match acts.last() {
            None => px.dot(w),
            Some(h) => prop.matmul(&h.dot(w)),
        };
        acts.push(z.mapv(|v| v.max(0.0)));
        pre.push(z);
    }
    let logits = acts.last().unwrap_or(px).dot(&model.head_weight) + &model.head_bias;
    let probs = softmax_rows(&logits);
    Trace {
        acts,
        pre,
        logits,
        probs,
    }
}

/// Returns `(logits, probs)`, both n×2.
pub fn forward(
    model: &GcnModel,
    prop: &PropagationMatrix,
    x: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_inputs(model, prop, x)?;
    let t = run_forward(model, prop, &propagated_input(model, prop, x));
    Ok((t.logits, t.probs))
}

/// Nodes of one validation speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerGroup {
    pub label: Label,
    pub nodes: Vec<usize>,
}

/// The labels a training run may see: training nodes for the loss and
/// validation speakers for model selection. Every other node's label is
/// dropped at construction.
#[derive(Debug, Clone)]
pub struct Supervision {
    train: Vec<(usize, Label)>,
    val: Vec<SpeakerGroup>,
}

impl Supervision {
    /// `speaker_of[i]` is any stable speaker key for node `i`.
    pub fn new(
        labels: &[Label],
        speaker_of: &[usize],
        train_mask: &[bool],
        val_mask: &[bool],
    ) -> Result<Self> {
        let n = labels.len();
        if speaker_of.len() != n || train_mask.len() != n || val_mask.len() != n {
            return Err(Error::ShapeMismatch(
                "labels, speakers and masks must have equal length".into(),
            ));
        }
        let mut train = Vec::new();
        let mut val: BTreeMap<usize, SpeakerGroup> = BTreeMap::new();
        for i in 0..n {
            match (train_mask[i], val_mask[i]) {
                (true, true) => return Err(Error::OverlappingMasks(i)),
                (true, false) => train.push((i, labels[i])),
                (false, true) => val
                    .entry(speaker_of[i])
                    .or_insert_with(|| SpeakerGroup {
                        label: labels[i],
                        nodes: Vec::new(),
                    })
                    .nodes
                    .push(i),
                (false, false) => {}
            }
        }
        Self::from_parts(train, val.into_values().collect())
    }

    /// Training labels only; no validation-based selection.
    pub fn train_only(labels: &[Label], train_mask: &[bool]) -> Result<Self> {
        let speakers: Vec<usize> = (0..labels.len()).collect();
        Self::new(labels, &speakers, train_mask, &vec![false; labels.len()])
    }

    pub fn from_parts(train: Vec<(usize, Label)>, val: Vec<SpeakerGroup>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyMask);
        }
        let has = |l: Label| train.iter().any(|&(_, t)| t == l);
        if !has(Label::Healthy) || !has(Label::Pd) {
            log::warn!("training mask holds a single class; training is degenerate");
        }
        Ok(Supervision { train, val })
    }

    pub fn train_nodes(&self) -> &[(usize, Label)] {
        &self.train
    }

    pub fn val_groups(&self) -> &[SpeakerGroup] {
        &self.val
    }

    fn max_node(&self) -> usize {
        self.train
            .iter()
            .map(|&(i, _)| i)
            .chain(self.val.iter().flat_map(|g| g.nodes.iter().copied()))
            .max()
            .unwrap_or(0)
    }

    /// Speaker-level validation accuracy in percent.
    pub fn val_accuracy(&self, probs: &Array2<f64>) -> Option<f64> {
        voting::accuracy(
            probs,
            self.val.iter().map(|g| (g.label, g.nodes.as_slice())),
        )
    }

    /// Mean segment-level cross-entropy over validation nodes.
    pub fn val_loss(&self, probs: &Array2<f64>) -> Option<f64> {
        voting::log_loss(
            probs,
            self.val.iter().map(|g| (g.label, g.nodes.as_slice())),
        )
    }
}

/// Mean cross-entropy over the training nodes plus `weight_decay/2 · Σ‖W‖²`
/// (layer and head weights, not the bias), with exact gradients.
pub fn loss_and_gradients(
    model: &GcnModel,
    prop: &PropagationMatrix,
    x: &Array2<f64>,
    sup: &Supervision,
    weight_decay: f64,
) -> Result<(f64, GcnModel)> {
    check_inputs(model, prop, x)?;
    if sup.max_node() >= x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "supervision references node {} of {}",
            sup.max_node(),
            x.nrows()
        )));
    }
    let px = propagated_input(model, prop, x);
    let (loss, grads, _) = loss_and_gradients_unchecked(model, prop, &px, sup, weight_decay);
    Ok((loss, grads))
}

/// `px` is the output of [`propagated_input`].
fn loss_and_gradients_unchecked(
    model: &GcnModel,
    prop: &PropagationMatrix,
    px: &Array2<f64>,
    sup: &Supervision,
    weight_decay: f64,
) -> (f64, GcnModel, Array2<f64>) {
    let t = run_forward(model, prop, px);
    let count = sup.train.len() as f64;

    let mut ce = 0.0;
    let mut d_logits = Array2::<f64>::zeros(t.logits.raw_dim());
    for &(i, label) in &sup.train {
        let row = t.logits.row(i);
        let max = row[0].max(row[1]);
        let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        ce += lse - row[label.index()];
        for c in 0..2 {
            let target = if c == label.index() { 1.0 } else { 0.0 };
            d_logits[[i, c]] = (t.probs[[i, c]] - target) / count;
        }
    }
    let loss = ce / count + 0.5 * weight_decay * model.decay_norm();

    let mut grads = model.zeros_like();
    let last = t.acts.last().unwrap_or(px);
    grads.head_weight = last.t().dot(&d_logits) + &(weight_decay * &model.head_weight);
    grads.head_bias = d_logits.sum_axis(Axis(0));
    let mut d_act = d_logits.dot(&model.head_weight.t());

    for l in (0..model.layers()).rev() {
        let mut d_z = d_act;
        Zip::from(&mut d_z).and(&t.pre[l]).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let w = &model.layer_weights[l];
        if l == 0 {
            // Z_0 = (ÃX) W_0, and nothing upstream needs dX
            grads.layer_weights[0] = px.t().dot(&d_z) + &(weight_decay * w);
            break;
        }
        // Ã is symmetric, so Ã^T dZ = Ã dZ.
        let d_m = prop.matmul(&d_z);
        grads.layer_weights[l] = t.acts[l - 1].t().dot(&d_m) + &(weight_decay * w);
        d_act = d_m.dot(&w.t());
    }
    (loss, grads, t.probs)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &GcnModel, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut GcnModel, grads: &GcnModel) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Number of optimizer steps taken before this evaluation.
    pub epoch: usize,
    pub train_loss: f64,
    /// Speaker-level validation accuracy, when there are validation speakers.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// One entry per evaluated parameter state, starting with the initial one.
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

/// Full-batch Adam for up to `max_epochs` steps.
///
/// Keeps the parameters with the best speaker-level validation accuracy,
/// breaking ties by lower validation loss and then by earlier epoch. Stops
/// once `patience` epochs pass without a new best accuracy. Without
/// validation speakers the final parameters are kept.
pub fn train(
    mut model: GcnModel,
    prop: &PropagationMatrix,
    x: &Array2<f64>,
    sup: &Supervision,
    cfg: &TrainConfig,
) -> Result<(GcnModel, History)> {
    cfg.validate()?;
    check_inputs(&model, prop, x)?;
    if sup.max_node() >= x.nrows() {
        return Err(Error::ShapeMismatch("supervision out of range".into()));
    }
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut history = History::default();
    let mut best: Option<(f64, f64, GcnModel)> = None;
    let mut stale = 0usize;

    let px = propagated_input(&model, prop, x);
    for epoch in 0..=cfg.max_epochs {
        // one forward pass scores the current parameters and yields their gradients
        let (loss, grads, probs) =
            loss_and_gradients_unchecked(&model, prop, &px, sup, cfg.weight_decay);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        let val_accuracy = sup.val_accuracy(&probs);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_accuracy,
        });

        if let (Some(acc), Some(vl)) = (val_accuracy, sup.val_loss(&probs)) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
            if improved
                || best
                    .as_ref()
                    .is_some_and(|(b, bl, _)| acc == *b && vl < *bl)
            {
                best = Some((acc, vl, model.clone()));
                history.best_epoch = epoch;
                history.best_val_accuracy = Some(acc);
            }
            stale = if improved { 0 } else { stale + 1 };
            if stale >= cfg.patience {
                break;
            }
        }

        if epoch == cfg.max_epochs {
            break;
        }
        adam.step(&mut model, &grads);
        if !model.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: epoch + 1,
                loss: f64::NAN,
            });
        }
    }

    match best {
        Some((_, _, m)) => Ok((m, history)),
        None => {
            history.best_epoch = history.epochs.last().map_or(0, |e| e.epoch);
            Ok((model, history))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    input_dim: usize,
    hidden_width: usize,
    layers: usize,
    seed: u64,
    config: TrainConfig,
}

/// Serializes a model: length-prefixed JSON header, then every parameter as
/// little-endian `f64` in [`GcnModel::tensors`] order.
pub fn checkpoint_bytes(model: &GcnModel, cfg: &TrainConfig) -> Vec<u8> {
    let header = serde_json::to_vec(&CheckpointHeader {
        input_dim: model.input_dim(),
        hidden_width: model.hidden_width(),
        layers: model.layers(),
        seed: cfg.seed,
        config: cfg.clone(),
    })
    .expect("header serializes");
    let payload: Vec<u8> = model
        .tensors()
        .into_iter()
        .flatten()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write_framed(&header, &payload)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(GcnModel, TrainConfig)> {
    let (header, payload) = read_framed(bytes).map_err(Error::MalformedCheckpoint)?;
    let h: CheckpointHeader =
        serde_json::from_slice(header).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    if h.layers > 0 && h.hidden_width == 0 {
        return Err(Error::MalformedCheckpoint("zero hidden width".into()));
    }
    let mut model = GcnModel::new(h.input_dim, h.hidden_width, h.layers, 0);
    if payload.len() != model.param_count() * 8 {
        return Err(Error::MalformedCheckpoint(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            model.param_count() * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v = values.next().unwrap());
    }
    Ok((model, h.config))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &GcnModel, cfg: &TrainConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model, cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(GcnModel, TrainConfig)> {
    let path = path.as_ref();
    checkpoint_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
