//! Similarity kernel and topological top-k graph over segment embeddings.
//!
//! Each node is described by its kernel column (its similarity profile to
//! every other node). Two nodes are linked when either one's column is among
//! the `k` columns nearest (Euclidean) to the other's. Ties on column
//! distance go to the lower node index.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMeasure {
    Euclidean,
    Cosine,
    Manhattan,
}

impl DistanceMeasure {
    pub const ALL: [DistanceMeasure; 3] = [
        DistanceMeasure::Euclidean,
        DistanceMeasure::Cosine,
        DistanceMeasure::Manhattan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceMeasure::Euclidean => "euclidean",
            DistanceMeasure::Cosine => "cosine",
            DistanceMeasure::Manhattan => "manhattan",
        }
    }

    /// Distance between two vectors. For cosine the caller guarantees nonzero norms.
    pub fn eval(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            DistanceMeasure::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMeasure::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceMeasure::Cosine => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                cosine_from_parts(a.dot(&b), na, nb)
            }
        }
    }
}

fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    (1.0 - dot / (na * nb)).max(0.0)
}

impl fmt::Display for DistanceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMeasure::Euclidean),
            "cosine" => Ok(DistanceMeasure::Cosine),
            "manhattan" => Ok(DistanceMeasure::Manhattan),
            other => Err(Error::InvalidConfig(format!("unknown distance {other:?}"))),
        }
    }
}

/// Rows whose norm is zero make cosine distance undefined.
pub(crate) fn check_cosine_rows(x: &Array2<f64>) -> Result<Vec<f64>> {
    x.rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.dot(&r).sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::DegenerateVector(i))
            }
        })
        .collect()
}

/// Symmetric n×n distance matrix with a zero diagonal.
pub fn pairwise_distances(x: &Array2<f64>, measure: DistanceMeasure) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let norms = match measure {
        DistanceMeasure::Cosine => Some(check_cosine_rows(x)?),
        _ => None,
    };
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = x.row(i);
            (i + 1..n)
                .map(|j| match &norms {
                    Some(nm) => cosine_from_parts(a.dot(&x.row(j)), nm[i], nm[j]),
                    None => measure.eval(a, x.row(j)),
                })
                .collect()
        })
        .collect();
    let mut d = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Mean distance over all distinct pairs (strict lower triangle).
pub fn bandwidth(d: &Array2<f64>) -> Result<f64> {
    let n = d.nrows();
    if n < 2 || d.ncols() != n {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut sum = 0.0;
    for i in 1..n {
        for j in 0..i {
            sum += d[[i, j]];
        }
    }
    let h = 2.0 * sum / (n * (n - 1)) as f64;
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::DegenerateDataset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub matrix: Array2<f64>,
    pub bandwidth: f64,
}

impl Kernel {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }
}

/// `K_ij = exp(-D_ij / h)`.
pub fn kernel(d: &Array2<f64>, h: f64) -> Result<Kernel> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    Ok(Kernel {
        matrix: d.mapv(|v| (-v / h).exp()),
        bandwidth: h,
    })
}

/// Distances, bandwidth and kernel in one go.
pub fn kernel_from_features(x: &Array2<f64>, measure: DistanceMeasure) -> Result<Kernel> {
    let d = pairwise_distances(x, measure)?;
    let h = bandwidth(&d)?;
    kernel(&d, h)
}

/// Euclidean distance between every pair of kernel columns. All n
/// coordinates take part, including the unit diagonal entries.
pub fn column_distances(k: &Kernel) -> Array2<f64> {
    let m = &k.matrix;
    let n = m.nrows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = m.column(i);
            (i + 1..n)
                .map(|j| {
                    let cj = m.column(j);
                    let mut s = 0.0;
                    for r in 0..n {
                        let t = ci[r] - cj[r];
                        s += t * t;
                    }
                    s.sqrt()
                })
                .collect()
        })
        .collect();
    let mut d = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn by_distance_then_index<'a>(
    row: &'a ArrayView1<'a, f64>,
) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + 'a {
    move |a, b| row[*a].total_cmp(&row[*b]).then(a.cmp(b))
}

/// Symmetric 0/1 adjacency stored as a sorted edge list (`i < j`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::ShapeMismatch(format!(
                    "edge ({a},{b}) out of range for n={n}"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        neighbors.iter_mut().for_each(|v| v.sort_unstable());
        Ok(Adjacency {
            n,
            edges: set.into_iter().collect(),
            neighbors,
        })
    }

    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            edges: Vec::new(),
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// One `i<TAB>j` line per edge, `i < j`, sorted.
    pub fn write_edge_list(&self, mut w: impl Write) -> std::io::Result<()> {
        for &(i, j) in &self.edges {
            writeln!(w, "{i}\t{j}")?;
        }
        Ok(())
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("write to Vec");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        Err(Error::KTooLarge { k, limit: n })
    } else {
        Ok(())
    }
}

/// Links `i` and `j` when either is among the other's `k` nearest kernel columns.
pub fn build_graph(kernel: &Kernel, k: usize) -> Result<Adjacency> {
    let n = kernel.len();
    check_k(k, n)?;
    let cd = column_distances(kernel);
    let picks: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let row = cd.row(j);
            let mut cand: Vec<usize> = (0..n).filter(|&c| c != j).collect();
            let cmp = by_distance_then_index(&row);
            cand.select_nth_unstable_by(k - 1, &cmp);
            cand.truncate(k);
            cand
        })
        .collect();
    Adjacency::from_edges(
        n,
        picks
            .into_iter()
            .enumerate()
            .flat_map(|(j, c)| c.into_iter().map(move |i| (i, j))),
    )
}

/// Full per-node neighbor orderings, so graphs for several `k` share one
/// column-distance pass.
#[derive(Debug, Clone)]
pub struct NeighborRanking {
    order: Vec<Vec<usize>>,
}

impl NeighborRanking {
    pub fn new(kernel: &Kernel) -> Self {
        let cd = column_distances(kernel);
        let n = kernel.len();
        let order = (0..n)
            .into_par_iter()
            .map(|j| {
                let row = cd.row(j);
                let mut cand: Vec<usize> = (0..n).filter(|&c| c != j).collect();
                cand.sort_unstable_by(by_distance_then_index(&row));
                cand
            })
            .collect();
        NeighborRanking { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn graph(&self, k: usize) -> Result<Adjacency> {
        let n = self.order.len();
        check_k(k, n)?;
        Adjacency::from_edges(
            n,
            self.order
                .iter()
                .enumerate()
                .flat_map(|(j, c)| c[..k].iter().map(move |&i| (i, j))),
        )
    }
}
