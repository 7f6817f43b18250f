//! End-to-end clustering: kNN → subgraphs → link prediction → merging.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dataset::{normalize_rows, FeatureSet};
use crate::error::{Error, Result};
use crate::gcn::{GcnModel, Prediction};
use crate::ips::{build_ips, IpsConfig};
use crate::knn::{build_knn, NeighborTable};
use crate::merge::{bfs_cluster, pool_edges, propagate_cluster, Partition, PropagationSchedule, WeightedEdgeSet};

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Row-normalizes when requested; the returned set is what every stage consumes.
pub fn prepare_features(fs: FeatureSet, normalize: bool) -> Result<FeatureSet> {
    if normalize && !fs.is_normalized() {
        normalize_rows(fs)
    } else {
        Ok(fs)
    }
}

/// Neighbor table wide enough for `cfg` (after clamping to N-1).
pub fn neighbors_for(fs: &FeatureSet, cfg: &IpsConfig) -> Result<(IpsConfig, NeighborTable)> {
    if fs.len() < 2 {
        return Err(Error::invalid("clustering needs at least two instances"));
    }
    let cfg = cfg.for_population(fs.len());
    let nbrs = build_knn(fs, cfg.required_k())?;
    Ok((cfg, nbrs))
}

/// One subgraph and one forward pass per pivot, in parallel; output is in pivot order.
pub fn predict_links(
    model: &GcnModel,
    fs: &FeatureSet,
    nbrs: &NeighborTable,
    cfg: &IpsConfig,
) -> Result<Vec<Prediction>> {
    if model.input_dim() != fs.dim() {
        return Err(Error::shape(format!(
            "model expects dimension {}, features have {}",
            model.input_dim(),
            fs.dim()
        )));
    }
    (0..fs.len())
        .into_par_iter()
        .map(|p| build_ips(p, fs, nbrs, cfg).and_then(|ips| model.predict(&ips)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MergeMode {
    /// Single cut at `tau`, then connected components.
    Bfs { tau: f64 },
    /// Iterative threshold raising with a cluster size cap.
    Propagate(PropagationSchedule),
}

impl Default for MergeMode {
    fn default() -> Self {
        MergeMode::Propagate(PropagationSchedule::default())
    }
}

pub fn merge_edges(n: usize, edges: &WeightedEdgeSet, mode: &MergeMode) -> Result<Partition> {
    match mode {
        MergeMode::Bfs { tau } => bfs_cluster(n, edges, *tau),
        MergeMode::Propagate(s) => Ok(propagate_cluster(n, edges, s)?.partition),
    }
}

/// Wall time per stage; the three stages sum to `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub knn: Duration,
    pub link_prediction: Duration,
    pub merge: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.knn + self.link_prediction + self.merge
    }

    pub fn report(&self) -> String {
        format!(
            "stage\tseconds\nknn\t{:.6}\nlink_prediction\t{:.6}\nmerge\t{:.6}\ntotal\t{:.6}\n",
            self.knn.as_secs_f64(),
            self.link_prediction.as_secs_f64(),
            self.merge.as_secs_f64(),
            self.total().as_secs_f64()
        )
    }
}

#[derive(Clone, Debug)]
pub struct ClusterOutput {
    pub partition: Partition,
    pub edges: WeightedEdgeSet,
    pub timings: StageTimings,
}

/// Clusters an already prepared feature set.
pub fn cluster(model: &GcnModel, fs: &FeatureSet, ips: &IpsConfig, merge: &MergeMode) -> Result<ClusterOutput> {
    let t0 = Instant::now();
    let (cfg, nbrs) = neighbors_for(fs, ips)?;
    let t1 = Instant::now();
    let predictions = predict_links(model, fs, &nbrs, &cfg)?;
    let edges = pool_edges(&predictions)?;
    let t2 = Instant::now();
    let partition = merge_edges(fs.len(), &edges, merge)?;
    let t3 = Instant::now();
    Ok(ClusterOutput {
        partition,
        edges,
        timings: StageTimings {
            knn: t1 - t0,
            link_prediction: t2 - t1,
            merge: t3 - t2,
        },
    })
}
