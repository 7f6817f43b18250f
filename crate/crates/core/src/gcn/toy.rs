//! Two-layer, two-dimensional trace of how graph convolutions move node
//! embeddings during training on a single subgraph.

use std::io::Write;
use std::path::Path;

use super::model::{batch_loss_and_grads, forward, Aggregator, GcnConfig, GcnModel, GraphBatch};
use super::train::Sgd;
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::ips::InstancePivotSubgraph;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub aggregator: Aggregator,
    /// Total number of full-batch updates.
    pub iterations: usize,
    /// Iterations (0 = before any update) at which embeddings are recorded.
    pub record_at: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::Mean,
            iterations: 200,
            record_at: vec![0, 10, 50, 200],
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// One node's 2-D embedding after one layer at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// 1-based graph convolution layer index.
    pub layer: usize,
    pub node: usize,
    pub instance: usize,
    /// Shares the pivot's identity.
    pub positive: bool,
    pub hop: u8,
    pub x: f64,
    pub y: f64,
}

/// Trains a `2 → 2 → 2` model on `ips` and records every layer's output at
/// the requested iterations. Returns the records and the trained model.
pub fn toy2d_trace(
    fs: &FeatureSet,
    ips: &InstancePivotSubgraph,
    cfg: &ToyConfig,
) -> Result<(Vec<TraceRecord>, GcnModel)> {
    if fs.dim() != 2 {
        return Err(Error::shape(format!("toy trace needs 2-D features, got {}", fs.dim())));
    }
    let labels = fs
        .labels()
        .ok_or_else(|| Error::invalid("toy trace needs identity labels"))?;
    let gcfg = GcnConfig {
        attention_hidden: 8,
        ..GcnConfig::new(2, cfg.aggregator).with_hidden_dims(vec![2, 2])
    };
    let mut model = GcnModel::new(&gcfg, cfg.seed)?;
    let batch = GraphBatch::from_ips(ips, Some(labels));
    let mut opt = Sgd::new(&model, cfg.momentum, 0.0);
    let mut records = Vec::new();

    for it in 0..=cfg.iterations {
        if cfg.record_at.contains(&it) {
            let pass = forward(&model, &batch)?;
            for (l, act) in pass.activations().iter().enumerate() {
                for (q, row) in act.rows().into_iter().enumerate() {
                    records.push(TraceRecord {
                        iteration: it,
                        layer: l + 1,
                        node: q,
                        instance: ips.nodes[q],
                        positive: batch.labels[q],
                        hop: ips.hop_of[q],
                        x: row[0],
                        y: row[1],
                    });
                }
            }
        }
        if it < cfg.iterations {
            let (_, grads) = batch_loss_and_grads(&model, &batch)?;
            opt.step(&mut model, &grads, cfg.learning_rate);
        }
    }
    Ok((records, model))
}

/// `iteration,layer,node,instance,positive,hop,x,y` CSV.
pub fn write_trace_csv(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "iteration,layer,node,instance,positive,hop,x,y")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6}",
            r.iteration,
            r.layer,
            r.node,
            r.instance,
            u8::from(r.positive),
            r.hop,
            r.x,
            r.y
        )?;
    }
    w.flush()?;
    Ok(())
}
