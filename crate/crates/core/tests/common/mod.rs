#![allow(dead_code)]

use ndarray::Array2;
use pivotgcn::gcn::{Aggregator, GcnConfig, GcnModel, GraphBatch};
use pivotgcn::ips::Adjacency;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random subgraph batch: n nodes, d features, random symmetric adjacency,
/// random hop-1 subset (at least one), random labels.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> GraphBatch {
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let mut edges = Vec::new();
    for q in 0..n {
        for r in q + 1..n {
            if rng.random_bool(0.35) {
                edges.push((q, r));
            }
        }
    }
    let adjacency = Adjacency::from_edges(n, edges);
    let mut targets: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    if targets.is_empty() {
        targets.push(0);
    }
    let labels = (0..n).map(|_| rng.random_bool(0.5)).collect();
    GraphBatch {
        features,
        adjacency,
        targets,
        labels,
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], agg: Aggregator) -> GcnModel {
    let mut cfg = GcnConfig::new(dims[0], agg).with_hidden_dims(dims[1..].to_vec());
    cfg.attention_hidden = 4;
    let mut model = GcnModel::new(&cfg, rng.random()).unwrap();
    model.head_bias[0] = rng.random_range(-0.5..0.5);
    model.head_bias[1] = rng.random_range(-0.5..0.5);
    model
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
