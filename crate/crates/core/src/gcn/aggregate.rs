//! Aggregation operators `G = g(X, A)`.
//!
//! Every operator is supported on the adjacency pattern of `A`; a node with
//! no edges gets an all-zero row, so its aggregated feature is zero and only
//! its own feature survives the concatenation `[X || GX]`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::ips::Adjacency;

/// Two-layer scoring network for learned aggregation weights.
///
/// The score of edge `(q, r)` is `relu([x_q || x_r] · hidden) · output`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMlp {
    /// `2·d_in × m`
    pub hidden: Array2<f64>,
    /// `m × 1`
    pub output: Array2<f64>,
}

impl AttentionMlp {
    pub fn zeros(d_in: usize, m: usize) -> Self {
        Self {
            hidden: Array2::zeros((2 * d_in, m)),
            output: Array2::zeros((m, 1)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.nrows() / 2
    }
}

/// A sparse aggregation matrix sharing the sparsity pattern of an adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    pattern: Adjacency,
    values: Vec<f64>,
}

impl Aggregation {
    pub(crate) fn from_parts(pattern: Adjacency, values: Vec<f64>) -> Self {
        debug_assert_eq!(pattern.nnz(), values.len());
        Self { pattern, values }
    }

    pub fn node_count(&self) -> usize {
        self.pattern.node_count()
    }

    pub fn pattern(&self) -> &Adjacency {
        &self.pattern
    }

    /// Entry values aligned with `pattern().targets()`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sum(&self, q: usize) -> f64 {
        self.values[self.pattern.row_range(q)].iter().sum()
    }

    /// `G X`
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (q, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for e in self.pattern.row_range(q) {
                row.scaled_add(self.values[e], &x.row(self.pattern.targets()[e]));
            }
        }
        out
    }

    /// `Gᵀ D`
    pub fn apply_transpose(&self, d: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(d.raw_dim());
        for q in 0..self.node_count() {
            let dq = d.row(q);
            for e in self.pattern.row_range(q) {
                let r = self.pattern.targets()[e];
                out.row_mut(r).scaled_add(self.values[e], &dq);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut g = Array2::zeros((n, n));
        for q in 0..n {
            for e in self.pattern.row_range(q) {
                g[[q, self.pattern.targets()[e]]] = self.values[e];
            }
        }
        g
    }
}

/// Symmetric degree normalization `Λ^{-1/2} A Λ^{-1/2}`.
pub fn aggregate_mean(adj: &Adjacency) -> Aggregation {
    let inv_sqrt: Vec<f64> = (0..adj.node_count())
        .map(|q| match adj.degree(q) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut values = Vec::with_capacity(adj.nnz());
    for q in 0..adj.node_count() {
        values.extend(adj.neighbors(q).iter().map(|&r| inv_sqrt[q] * inv_sqrt[r]));
    }
    Aggregation {
        pattern: adj.clone(),
        values,
    }
}

/// Row-stochastic mean `Λ^{-1} A`.
pub fn aggregate_mean_row(adj: &Adjacency) -> Aggregation {
    let mut values = Vec::with_capacity(adj.nnz());
    for q in 0..adj.node_count() {
        let w = 1.0 / adj.degree(q).max(1) as f64;
        values.extend(std::iter::repeat_n(w, adj.degree(q)));
    }
    Aggregation {
        pattern: adj.clone(),
        values,
    }
}

/// Softmax over the cosine similarities of linked feature rows.
///
/// A pair involving a zero row is scored 0.
pub fn aggregate_weighted(adj: &Adjacency, x: ArrayView2<'_, f64>) -> Aggregation {
    let norms = row_norms(x);
    let scores = edge_cosines(adj, x, &norms);
    Aggregation {
        values: softmax_rows(adj, &scores),
        pattern: adj.clone(),
    }
}

/// Softmax over learned pair scores.
pub fn aggregate_attention(adj: &Adjacency, x: ArrayView2<'_, f64>, mlp: &AttentionMlp) -> Aggregation {
    let (scores, _) = attention_scores(adj, x, mlp);
    Aggregation {
        values: softmax_rows(adj, &scores),
        pattern: adj.clone(),
    }
}

pub(crate) fn row_norms(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

pub(crate) fn edge_cosines(adj: &Adjacency, x: ArrayView2<'_, f64>, norms: &[f64]) -> Vec<f64> {
    let mut scores = Vec::with_capacity(adj.nnz());
    for q in 0..adj.node_count() {
        for &r in adj.neighbors(q) {
            let denom = norms[q] * norms[r];
            scores.push(if denom > 0.0 {
                x.row(q).dot(&x.row(r)) / denom
            } else {
                0.0
            });
        }
    }
    scores
}

/// Scores and hidden pre-activations (one row per stored edge).
pub(crate) fn attention_scores(
    adj: &Adjacency,
    x: ArrayView2<'_, f64>,
    mlp: &AttentionMlp,
) -> (Vec<f64>, Array2<f64>) {
    let d = x.ncols();
    let m = mlp.hidden.ncols();
    let from = x.dot(&mlp.hidden.slice(ndarray::s![..d, ..]));
    let to = x.dot(&mlp.hidden.slice(ndarray::s![d.., ..]));
    let out = mlp.output.column(0);
    let mut pre = Array2::zeros((adj.nnz(), m));
    let mut scores = Vec::with_capacity(adj.nnz());
    for q in 0..adj.node_count() {
        for e in adj.row_range(q) {
            let r = adj.targets()[e];
            let mut row = pre.row_mut(e);
            row.assign(&from.row(q));
            row += &to.row(r);
            scores.push(row.iter().zip(out.iter()).map(|(&h, &w)| h.max(0.0) * w).sum());
        }
    }
    (scores, pre)
}

pub(crate) fn softmax_rows(adj: &Adjacency, scores: &[f64]) -> Vec<f64> {
    let mut values = vec![0.0; scores.len()];
    for q in 0..adj.node_count() {
        let range = adj.row_range(q);
        if range.is_empty() {
            continue;
        }
        let s = &scores[range.clone()];
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        for (slot, e) in values[range].iter_mut().zip(exp) {
            *slot = e / total;
        }
    }
    values
}
