//! The graph convolution link predictor and its reverse-mode gradients.
//!
//! Each layer computes `Y = relu([X || GX] W)`; the weight is stored as one
//! `2·d_in × d_out` matrix whose top half multiplies `X` and bottom half
//! multiplies `GX`. A linear head maps the last layer to two logits per
//! node and a softmax gives the linkage likelihood.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::aggregate::{
    aggregate_mean, aggregate_mean_row, attention_scores, edge_cosines, row_norms, softmax_rows,
    Aggregation, AttentionMlp,
};
use crate::error::{Error, Result};
use crate::ips::{Adjacency, InstancePivotSubgraph};
use crate::rng;

/// How neighbor features are pooled in every graph convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregator {
    /// `Λ^{-1/2} A Λ^{-1/2}`
    Mean,
    /// `Λ^{-1} A`
    MeanRowNormalized,
    /// Row softmax of cosine similarities.
    Weighted,
    /// Row softmax of learned pair scores.
    Attention,
}

impl Aggregator {
    pub fn tag(self) -> u8 {
        match self {
            Aggregator::Mean => 0,
            Aggregator::Weighted => 1,
            Aggregator::Attention => 2,
            Aggregator::MeanRowNormalized => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Aggregator::Mean,
            1 => Aggregator::Weighted,
            2 => Aggregator::Attention,
            3 => Aggregator::MeanRowNormalized,
            _ => return None,
        })
    }

    /// Whether `G` depends on the layer input.
    pub fn is_feature_dependent(self) -> bool {
        matches!(self, Aggregator::Weighted | Aggregator::Attention)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::MeanRowNormalized => "mean-row",
            Aggregator::Weighted => "weighted",
            Aggregator::Attention => "attention",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "m" => Ok(Aggregator::Mean),
            "mean-row" => Ok(Aggregator::MeanRowNormalized),
            "weighted" | "w" => Ok(Aggregator::Weighted),
            "attention" | "a" => Ok(Aggregator::Attention),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub aggregator: Aggregator,
    /// Hidden width of the attention scoring network.
    pub attention_hidden: usize,
}

impl GcnConfig {
    pub fn new(input_dim: usize, aggregator: Aggregator) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![256, 256, 128, 64],
            aggregator,
            attention_hidden: 64,
        }
    }

    pub fn with_hidden_dims(mut self, dims: Vec<usize>) -> Self {
        self.hidden_dims = dims;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "model needs a positive input dim and at least one positive layer width".into(),
            ));
        }
        if self.aggregator == Aggregator::Attention && self.attention_hidden == 0 {
            return Err(Error::Config("attention hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `2·d_in × d_out`
    pub weight: Array2<f64>,
    pub attention: Option<AttentionMlp>,
}

impl ConvLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Graph convolution stack plus a two-class linear head.
///
/// The same type doubles as the gradient container in [`loss_and_grads`].
#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub aggregator: Aggregator,
    pub layers: Vec<ConvLayer>,
    /// `d_last × 2`
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl GcnModel {
    /// Glorot-uniform initialization from the `init` stream of `seed`; biases start at 0.
    pub fn new(cfg: &GcnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let mut model = Self::zeros(cfg);
        for layer in &mut model.layers {
            glorot(&mut rng, &mut layer.weight);
            if let Some(att) = &mut layer.attention {
                glorot(&mut rng, &mut att.hidden);
                glorot(&mut rng, &mut att.output);
            }
        }
        glorot(&mut rng, &mut model.head_weight);
        Ok(model)
    }

    pub fn zeros(cfg: &GcnConfig) -> Self {
        let mut d_in = cfg.input_dim;
        let layers = cfg
            .hidden_dims
            .iter()
            .map(|&d_out| {
                let layer = ConvLayer {
                    weight: Array2::zeros((2 * d_in, d_out)),
                    attention: (cfg.aggregator == Aggregator::Attention)
                        .then(|| AttentionMlp::zeros(d_in, cfg.attention_hidden)),
                };
                d_in = d_out;
                layer
            })
            .collect();
        Self {
            aggregator: cfg.aggregator,
            layers,
            head_weight: Array2::zeros((d_in, 2)),
            head_bias: Array1::zeros(2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// `[D, d1, ..., dL]`
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(ConvLayer::output_dim))
            .collect()
    }

    pub fn config(&self) -> GcnConfig {
        let dims = self.layer_dims();
        GcnConfig {
            input_dim: dims[0],
            hidden_dims: dims[1..].to_vec(),
            aggregator: self.aggregator,
            attention_hidden: self.layers[0]
                .attention
                .as_ref()
                .map_or(64, |a| a.hidden.ncols()),
        }
    }

    /// All trainable tensors in a fixed order (layers, then head).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.as_slice().expect("standard layout"));
            if let Some(att) = &layer.attention {
                out.push(att.hidden.as_slice().expect("standard layout"));
                out.push(att.output.as_slice().expect("standard layout"));
            }
        }
        out.push(self.head_weight.as_slice().expect("standard layout"));
        out.push(self.head_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            if let Some(att) = &mut layer.attention {
                out.push(att.hidden.as_slice_mut().expect("standard layout"));
                out.push(att.output.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head_weight.as_slice_mut().expect("standard layout"));
        out.push(self.head_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, batch: &GraphBatch) -> Result<ForwardPass> {
        forward(self, batch)
    }

    /// Linkage likelihoods for the hop-1 nodes of `ips`.
    pub fn predict(&self, ips: &InstancePivotSubgraph) -> Result<Prediction> {
        let batch = GraphBatch::from_ips(ips, None);
        let pass = self.forward(&batch)?;
        Ok(Prediction {
            pivot: ips.pivot,
            nodes: batch.targets.iter().map(|&q| ips.nodes[q]).collect(),
            likelihood: batch.targets.iter().map(|&q| pass.probs[[q, 1]]).collect(),
        })
    }
}

fn glorot(rng: &mut impl Rng, w: &mut Array2<f64>) {
    let (fan_in, fan_out) = w.dim();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    w.mapv_inplace(|_| rng.random_range(-bound..=bound));
}

/// Linkage likelihood of the pivot with each of its hop-1 nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub pivot: usize,
    /// Global ids of the hop-1 nodes.
    pub nodes: Vec<usize>,
    /// Softmax probability of the "same identity" class, aligned with `nodes`.
    pub likelihood: Vec<f64>,
}

/// One or more subgraphs laid out block-diagonally, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub features: Array2<f64>,
    pub adjacency: Adjacency,
    /// Rows that receive predictions and loss (the hop-1 nodes).
    pub targets: Vec<usize>,
    /// Per-row link label; only entries listed in `targets` are read.
    pub labels: Vec<bool>,
}

impl GraphBatch {
    /// Wraps a single subgraph. With `instance_labels`, node labels are "same
    /// identity as the pivot"; without, all labels are false.
    pub fn from_ips(ips: &InstancePivotSubgraph, instance_labels: Option<&[i64]>) -> Self {
        Self {
            features: ips.features.mapv(f64::from),
            adjacency: ips.adjacency.clone(),
            targets: ips.hop1().collect(),
            labels: instance_labels.map_or_else(|| vec![false; ips.len()], |l| ips.link_labels(l)),
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    /// Disjoint union with no edges between parts.
    pub fn block_diagonal(parts: &[GraphBatch]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("cannot batch zero subgraphs"));
        };
        let d = first.features.ncols();
        if parts.iter().any(|p| p.features.ncols() != d) {
            return Err(Error::shape("subgraphs have differing feature widths"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        let adjacency = Adjacency::block_diagonal(parts.iter().map(|p| &p.adjacency));
        let mut targets = Vec::new();
        let mut labels = Vec::new();
        let mut base = 0;
        for p in parts {
            targets.extend(p.targets.iter().map(|&t| t + base));
            labels.extend_from_slice(&p.labels);
            base += p.node_count();
        }
        Ok(Self {
            features,
            adjacency,
            targets,
            labels,
        })
    }
}

struct LayerCache {
    input: Array2<f64>,
    agg: Aggregation,
    aggregated: Array2<f64>,
    pre: Array2<f64>,
    /// Hidden pre-activations of the attention network, one row per edge.
    attention_pre: Option<Array2<f64>>,
}

/// Everything the backward pass needs, plus the outputs.
pub struct ForwardPass {
    layers: Vec<LayerCache>,
    output: Array2<f64>,
    pub logits: Array2<f64>,
    /// Row-wise softmax of `logits`; column 1 is the linkage likelihood.
    pub probs: Array2<f64>,
}

impl ForwardPass {
    /// Post-ReLU output of every graph convolution layer.
    pub fn activations(&self) -> Vec<ArrayView2<'_, f64>> {
        self.layers
            .iter()
            .skip(1)
            .map(|c| c.input.view())
            .chain(std::iter::once(self.output.view()))
            .collect()
    }

    /// Sign pattern of every ReLU input (layer pre-activations, then attention
    /// hidden units). Two passes with equal patterns lie on the same linear
    /// piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for c in &self.layers {
            out.extend(c.pre.iter().map(|&z| z > 0.0));
            if let Some(a) = &c.attention_pre {
                out.extend(a.iter().map(|&z| z > 0.0));
            }
        }
        out
    }

    /// Aggregation matrix used by layer `l`.
    pub fn aggregation(&self, l: usize) -> &Aggregation {
        &self.layers[l].agg
    }
}

/// `relu([X || GX] W)`
pub fn gconv_forward(
    x: ArrayView2<'_, f64>,
    g: &Aggregation,
    w: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let d = x.ncols();
    if w.nrows() != 2 * d {
        return Err(Error::shape(format!(
            "weight has {} rows, expected 2*{d}",
            w.nrows()
        )));
    }
    if g.node_count() != x.nrows() {
        return Err(Error::shape(format!(
            "aggregation over {} nodes applied to {} rows",
            g.node_count(),
            x.nrows()
        )));
    }
    let h = g.apply(x);
    Ok(linear_halves(x, h.view(), w).mapv(relu))
}

fn linear_halves(x: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Array2<f64> {
    let d = x.ncols();
    let mut z = x.dot(&w.slice(s![..d, ..]));
    z += &h.dot(&w.slice(s![d.., ..]));
    z
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn forward(model: &GcnModel, batch: &GraphBatch) -> Result<ForwardPass> {
    if batch.features.ncols() != model.input_dim() {
        return Err(Error::shape(format!(
            "features have dimension {}, model expects {}",
            batch.features.ncols(),
            model.input_dim()
        )));
    }
    let adj = &batch.adjacency;
    let fixed = match model.aggregator {
        Aggregator::Mean => Some(aggregate_mean(adj)),
        Aggregator::MeanRowNormalized => Some(aggregate_mean_row(adj)),
        _ => None,
    };

    let mut x = batch.features.clone();
    let mut layers = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let (agg, attention_pre) = match (&fixed, model.aggregator) {
            (Some(g), _) => (g.clone(), None),
            (None, Aggregator::Weighted) => (super::aggregate_weighted(adj, x.view()), None),
            (None, _) => {
                let mlp = layer
                    .attention
                    .as_ref()
                    .ok_or_else(|| Error::shape("attention layer without scoring network"))?;
                let (scores, pre) = attention_scores(adj, x.view(), mlp);
                (
                    Aggregation::from_parts(adj.clone(), softmax_rows(adj, &scores)),
                    Some(pre),
                )
            }
        };
        let aggregated = agg.apply(x.view());
        let pre = linear_halves(x.view(), aggregated.view(), layer.weight.view());
        let y = pre.mapv(relu);
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, y),
            agg,
            aggregated,
            pre,
            attention_pre,
        });
    }
    let mut logits = x.dot(&model.head_weight);
    logits += &model.head_bias;
    let probs = softmax2(&logits);
    Ok(ForwardPass {
        layers,
        output: x,
        logits,
        probs,
    })
}

fn softmax2(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Mean cross-entropy over the target rows of `batch`.
pub fn batch_loss(pass: &ForwardPass, batch: &GraphBatch) -> Result<f64> {
    if batch.targets.is_empty() {
        return Err(Error::invalid("no hop-1 nodes to supervise"));
    }
    let mut total = 0.0;
    for &t in &batch.targets {
        let row = pass.logits.row(t);
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        total += lse - row[usize::from(batch.labels[t])];
    }
    Ok(total / batch.targets.len() as f64)
}

/// Loss and gradients for a batch whose `labels` are already set.
pub fn batch_loss_and_grads(model: &GcnModel, batch: &GraphBatch) -> Result<(f64, GcnModel)> {
    let pass = forward(model, batch)?;
    let loss = batch_loss(&pass, batch)?;
    let grads = backward(model, batch, &pass);
    Ok((loss, grads))
}

/// Cross-entropy over the hop-1 nodes of `ips` and its gradient.
///
/// `labels` holds one entry per node; entries of hop-2+ nodes are ignored.
pub fn loss_and_grads(
    model: &GcnModel,
    ips: &InstancePivotSubgraph,
    labels: &[bool],
) -> Result<(f64, GcnModel)> {
    if labels.len() != ips.len() {
        return Err(Error::shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            ips.len()
        )));
    }
    let mut batch = GraphBatch::from_ips(ips, None);
    batch.labels = labels.to_vec();
    batch_loss_and_grads(model, &batch)
}

fn backward(model: &GcnModel, batch: &GraphBatch, pass: &ForwardPass) -> GcnModel {
    let mut grads = model.zeros_like();
    let n = batch.node_count();
    let scale = 1.0 / batch.targets.len() as f64;

    let mut dlogits = Array2::<f64>::zeros((n, 2));
    for &t in &batch.targets {
        let label = usize::from(batch.labels[t]);
        for c in 0..2 {
            let onehot = if c == label { 1.0 } else { 0.0 };
            dlogits[[t, c]] = (pass.probs[[t, c]] - onehot) * scale;
        }
    }
    grads.head_weight = pass.output.t().dot(&dlogits);
    grads.head_bias = dlogits.sum_axis(Axis(0));
    let mut dy = dlogits.dot(&model.head_weight.t());

    for (l, (layer, cache)) in model.layers.iter().zip(&pass.layers).enumerate().rev() {
        let d = layer.input_dim();
        let mut dz = dy;
        dz.zip_mut_with(&cache.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let x = cache.input.view();
        let gw = &mut grads.layers[l];
        gw.weight.slice_mut(s![..d, ..]).assign(&x.t().dot(&dz));
        gw.weight
            .slice_mut(s![d.., ..])
            .assign(&cache.aggregated.t().dot(&dz));

        let mut dx = dz.dot(&layer.weight.slice(s![..d, ..]).t());
        let dh = dz.dot(&layer.weight.slice(s![d.., ..]).t());
        dx += &cache.agg.apply_transpose(dh.view());

        if model.aggregator.is_feature_dependent() {
            let dscores = softmax_backward(&cache.agg, x, dh.view());
            match model.aggregator {
                Aggregator::Weighted => cosine_backward(&batch.adjacency, x, &dscores, &mut dx),
                Aggregator::Attention => {
                    let mlp = layer.attention.as_ref().expect("attention layer");
                    let pre = cache.attention_pre.as_ref().expect("attention cache");
                    let gm = gw.attention.as_mut().expect("attention grads");
                    attention_backward(&batch.adjacency, x, mlp, pre, &dscores, gm, &mut dx);
                }
                _ => unreachable!(),
            }
        }
        dy = dx;
    }
    grads
}

/// Gradient w.r.t. the pre-softmax edge scores, given `dH` where `H = G X`.
fn softmax_backward(agg: &Aggregation, x: ArrayView2<'_, f64>, dh: ArrayView2<'_, f64>) -> Vec<f64> {
    let pattern = agg.pattern();
    let g = agg.values();
    let mut dscores = vec![0.0; g.len()];
    for q in 0..pattern.node_count() {
        let range = pattern.row_range(q);
        if range.is_empty() {
            continue;
        }
        let dgs: Vec<f64> = range
            .clone()
            .map(|e| dh.row(q).dot(&x.row(pattern.targets()[e])))
            .collect();
        let mean: f64 = range.clone().zip(&dgs).map(|(e, dg)| g[e] * dg).sum();
        for (e, dg) in range.zip(dgs) {
            dscores[e] = g[e] * (dg - mean);
        }
    }
    dscores
}

fn cosine_backward(adj: &Adjacency, x: ArrayView2<'_, f64>, dscores: &[f64], dx: &mut Array2<f64>) {
    let norms = row_norms(x);
    let cos = edge_cosines(adj, x, &norms);
    for q in 0..adj.node_count() {
        for e in adj.row_range(q) {
            let r = adj.targets()[e];
            let (nq, nr) = (norms[q], norms[r]);
            if nq == 0.0 || nr == 0.0 || dscores[e] == 0.0 {
                continue;
            }
            let ds = dscores[e];
            let c = cos[e];
            // d cos / d x_q = x_r / (|q||r|) - cos * x_q / |q|^2
            let inv = ds / (nq * nr);
            let xq = x.row(q).to_owned();
            let xr = x.row(r).to_owned();
            dx.row_mut(q).scaled_add(inv, &xr);
            dx.row_mut(q).scaled_add(-ds * c / (nq * nq), &xq);
            dx.row_mut(r).scaled_add(inv, &xq);
            dx.row_mut(r).scaled_add(-ds * c / (nr * nr), &xr);
        }
    }
}

fn attention_backward(
    adj: &Adjacency,
    x: ArrayView2<'_, f64>,
    mlp: &AttentionMlp,
    pre: &Array2<f64>,
    dscores: &[f64],
    grads: &mut AttentionMlp,
    dx: &mut Array2<f64>,
) {
    let n = adj.node_count();
    let d = x.ncols();
    let m = mlp.hidden.ncols();
    let out = mlp.output.column(0);
    let mut dfrom = Array2::<f64>::zeros((n, m));
    let mut dto = Array2::<f64>::zeros((n, m));
    let mut dout = Array1::<f64>::zeros(m);
    for q in 0..n {
        for e in adj.row_range(q) {
            let ds = dscores[e];
            if ds == 0.0 {
                continue;
            }
            let r = adj.targets()[e];
            let h = pre.row(e);
            for j in 0..m {
                if h[j] > 0.0 {
                    dout[j] += ds * h[j];
                    let dpre = ds * out[j];
                    dfrom[[q, j]] += dpre;
                    dto[[r, j]] += dpre;
                }
            }
        }
    }
    grads.output.column_mut(0).assign(&dout);
    grads
        .hidden
        .slice_mut(s![..d, ..])
        .assign(&x.t().dot(&dfrom));
    grads.hidden.slice_mut(s![d.., ..]).assign(&x.t().dot(&dto));
    *dx += &dfrom.dot(&mlp.hidden.slice(s![..d, ..]).t());
    *dx += &dto.dot(&mlp.hidden.slice(s![d.., ..]).t());
}
