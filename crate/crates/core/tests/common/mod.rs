//! Brute-force oracles shared by the integration tests and the acceptance
//! runner. Everything here is written with plain loops over `Vec`s so it
//! shares no code path with the library beyond the public types.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use graphpd::gcn::{self, GcnModel, PropagationMatrix, Supervision};
use graphpd::graph::{self, Adjacency, DistanceMeasure};
use graphpd::Label;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, m), || rng.random_range(-1.0..1.0))
}

pub fn to_rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn distance(a: &[f64], b: &[f64], measure: DistanceMeasure) -> f64 {
    match measure {
        DistanceMeasure::Euclidean => {
            let mut s = 0.0;
            for t in 0..a.len() {
                s += (a[t] - b[t]) * (a[t] - b[t]);
            }
            s.sqrt()
        }
        DistanceMeasure::Manhattan => {
            let mut s = 0.0;
            for t in 0..a.len() {
                s += (a[t] - b[t]).abs();
            }
            s
        }
        DistanceMeasure::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for t in 0..a.len() {
                dot += a[t] * b[t];
                na += a[t] * a[t];
                nb += b[t] * b[t];
            }
            (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
        }
    }
}

/// `exp(-D/h)` with `h` the mean over every unordered pair.
pub fn kernel(rows: &[Vec<f64>], measure: DistanceMeasure) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            d[i][j] = distance(&rows[i], &rows[j], measure);
            if j < i {
                sum += d[i][j];
                pairs += 1;
            }
        }
    }
    let h = sum / pairs as f64;
    d.iter()
        .map(|r| r.iter().map(|v| (-v / h).exp()).collect())
        .collect()
}

/// Sorts every other node by the Euclidean distance between kernel columns,
/// keeps the first `k` of each, and joins the lists with OR.
pub fn graph_edges(kern: &[Vec<f64>], k: usize) -> BTreeSet<(usize, usize)> {
    let n = kern.len();
    let col_dist = |i: usize, j: usize| {
        let mut s = 0.0;
        for t in 0..n {
            let diff = kern[t][i] - kern[t][j];
            s += diff * diff;
        }
        s.sqrt()
    };
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (col_dist(i, j), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges
}

pub fn edge_set(adj: &Adjacency) -> BTreeSet<(usize, usize)> {
    adj.edges().iter().copied().collect()
}

/// `(A+I)_ij / sqrt(d_i d_j)` from a dense adjacency.
pub fn propagation(adj: &Array2<f64>) -> Vec<Vec<f64>> {
    let n = adj.nrows();
    let a_hat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| adj[[i, j]] + f64::from(u8::from(i == j)))
                .collect()
        })
        .collect();
    let deg: Vec<f64> = a_hat.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a_hat[i][j] / (deg[i] * deg[j]).sqrt())
                .collect()
        })
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub struct DenseForward {
    pub pre: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

/// The GCN matrix chain evaluated with nested loops.
pub fn forward(model: &GcnModel, prop: &[Vec<f64>], x: &Array2<f64>) -> DenseForward {
    let mut h = to_rows(x);
    let mut pre = Vec::new();
    for w in &model.layer_weights {
        let z = matmul(prop, &matmul(&h, &to_rows(w)));
        h = z
            .iter()
            .map(|r| r.iter().map(|v| v.max(0.0)).collect())
            .collect();
        pre.push(z);
    }
    let mut logits = matmul(&h, &to_rows(&model.head_weight));
    for row in &mut logits {
        for (c, v) in row.iter_mut().enumerate() {
            *v += model.head_bias[c];
        }
    }
    let probs = logits
        .iter()
        .map(|r| {
            let mx = r[0].max(r[1]);
            let e: Vec<f64> = r.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    DenseForward { pre, logits, probs }
}

/// Exact class fractions among the k nearest training rows, ties to the
/// lower index.
pub fn knn(
    train: &[Vec<f64>],
    labels: &[Label],
    query: &[f64],
    k: usize,
    m: DistanceMeasure,
) -> [f64; 2] {
    let mut order: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| (distance(query, r, m), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut counts = [0.0; 2];
    for &(_, i) in order.iter().take(k) {
        counts[labels[i].index()] += 1.0;
    }
    [counts[0] / k as f64, counts[1] / k as f64]
}

pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Adjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Adjacency::from_edges(n, edges).unwrap()
}

pub struct GradInstance {
    pub model: GcnModel,
    pub prop: PropagationMatrix,
    pub x: Array2<f64>,
    pub sup: Supervision,
    pub weight_decay: f64,
}

/// Worst relative error over every parameter; the denominator is floored
/// at `1e-6` so coordinates whose true gradient is zero are compared
/// absolutely.
pub fn gradient_error(inst: &GradInstance, eps: f64) -> f64 {
    let loss = |m: &GcnModel| {
        gcn::loss_and_gradients(m, &inst.prop, &inst.x, &inst.sup, inst.weight_decay)
            .unwrap()
            .0
    };
    let (_, grads) = gcn::loss_and_gradients(
        &inst.model,
        &inst.prop,
        &inst.x,
        &inst.sup,
        inst.weight_decay,
    )
    .unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (ti, tensor) in analytic.iter().enumerate() {
        for (pi, &a) in tensor.iter().enumerate() {
            let mut plus = inst.model.clone();
            plus.tensors_mut()[ti][pi] += eps;
            let mut minus = inst.model.clone();
            minus.tensors_mut()[ti][pi] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// A random instance with n ≤ 10, m ≤ 5 and the requested depth. Instances
/// with a pre-activation within `1e-3` of the ReLU kink are redrawn so the
/// finite difference never straddles it.
pub fn gradient_instance(seed: u64, layers: usize) -> GradInstance {
    let mut r = rng(seed);
    loop {
        let n = r.random_range(3..=10);
        let m = r.random_range(1..=5);
        let hidden = r.random_range(1..=4);
        let x = random_points(&mut r, n, m);
        let adj = random_adjacency(&mut r, n, 0.4);
        let prop = gcn::normalize_adjacency(&adj);
        let mut model = GcnModel::new(m, hidden, layers, r.random());
        for b in model.head_bias.iter_mut() {
            *b = r.random_range(-0.5..0.5);
        }
        let labels: Vec<Label> = (0..n).map(|i| Label::from_index(i % 2).unwrap()).collect();
        let mask: Vec<bool> = (0..n).map(|i| i < 2 || r.random_bool(0.6)).collect();
        let sup = Supervision::train_only(&labels, &mask).unwrap();
        let dense = forward(&model, &propagation(&adj.to_dense()), &x);
        let near_kink = dense.pre.iter().flatten().flatten().any(|v| v.abs() < 1e-3);
        if !near_kink {
            return GradInstance {
                model,
                prop,
                x,
                sup,
                weight_decay: r.random_range(0.0..0.05),
            };
        }
    }
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
pub fn spectral_radius(a: &[Vec<f64>], iters: usize) -> f64 {
    let n = a.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * v[j]).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Graph construction through the library for a raw feature matrix.
pub fn library_graph(x: &Array2<f64>, m: DistanceMeasure, k: usize) -> Adjacency {
    let kern = graph::kernel_from_features(x, m).unwrap();
    graph::build_graph(&kern, k).unwrap()
}
