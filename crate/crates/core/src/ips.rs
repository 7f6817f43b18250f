//! Instance pivot subgraphs.
//!
//! An instance pivot subgraph (IPS) is the local context of one pivot
//! instance: its neighbors up to `h` hops, with features re-expressed as
//! offsets from the pivot, wired together by their own global nearest
//! neighbors. The pivot itself is never a node.

use std::collections::HashSet;

use ndarray::Array2;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::knn::NeighborTable;

/// Hop fan-out and edge degree used to build subgraphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IpsConfig {
    /// Neighbors taken per node at each hop; its length is the hop count `h`.
    pub k_per_hop: Vec<usize>,
    /// Global nearest neighbors consulted when wiring edges.
    pub u: usize,
}

impl IpsConfig {
    pub fn new(k_per_hop: Vec<usize>, u: usize) -> Result<Self> {
        let cfg = Self { k_per_hop, u };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Large first hop so that many pivot links receive supervision.
    pub fn train_regime() -> Self {
        Self {
            k_per_hop: vec![200, 10],
            u: 10,
        }
    }

    pub fn test_regime() -> Self {
        Self {
            k_per_hop: vec![80, 5],
            u: 5,
        }
    }

    pub fn hops(&self) -> usize {
        self.k_per_hop.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_per_hop.is_empty() {
            return Err(Error::Config("at least one hop is required".into()));
        }
        if self.k_per_hop.contains(&0) {
            return Err(Error::Config("every k_i must be positive".into()));
        }
        if self.u == 0 {
            return Err(Error::Config("u must be positive".into()));
        }
        Ok(())
    }

    /// Width of the neighbor table needed to build subgraphs with this config.
    pub fn required_k(&self) -> usize {
        self.k_per_hop.iter().copied().chain([self.u]).max().unwrap_or(1)
    }

    /// Caps every fan-out at `max_k` (normally N-1). Returns whether anything changed.
    pub fn clamp_to(&mut self, max_k: usize) -> bool {
        let mut changed = false;
        for k in self.k_per_hop.iter_mut().chain([&mut self.u]) {
            if *k > max_k {
                *k = max_k.max(1);
                changed = true;
            }
        }
        changed
    }

    /// Clamped copy for a collection of `n` instances, logging when it bites.
    pub fn for_population(&self, n: usize) -> Self {
        let mut cfg = self.clone();
        if cfg.clamp_to(n.saturating_sub(1)) {
            log::warn!(
                "IPS fan-out {:?}/u={} clamped to {:?}/u={} for N={n}",
                self.k_per_hop,
                self.u,
                cfg.k_per_hop,
                cfg.u
            );
        }
        cfg
    }
}

/// Undirected graph over subgraph-local node indices, stored as sorted
/// adjacency lists (compressed rows).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    /// Builds a symmetric graph from an undirected edge list; self loops are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut lists = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        Self::from_lists(lists)
    }

    fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn from_dense(a: &Array2<f32>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape("adjacency must be square"));
        }
        let mut edges = Vec::new();
        for q in 0..n {
            for r in 0..n {
                if a[[q, r]] != 0.0 {
                    if a[[r, q]] == 0.0 || q == r {
                        return Err(Error::invalid("adjacency must be symmetric with zero diagonal"));
                    }
                    if q < r {
                        edges.push((q, r));
                    }
                }
            }
        }
        Ok(Self::from_edges(n, edges))
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Number of stored (directed) entries, i.e. twice the undirected edge count.
    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.targets[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn degree(&self, q: usize) -> usize {
        self.offsets[q + 1] - self.offsets[q]
    }

    /// Range of entry positions belonging to row `q`.
    pub fn row_range(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn has_edge(&self, q: usize, r: usize) -> bool {
        self.neighbors(q).binary_search(&r).is_ok()
    }

    pub fn to_dense(&self) -> Array2<f32> {
        let n = self.node_count();
        let mut a = Array2::zeros((n, n));
        for q in 0..n {
            for &r in self.neighbors(q) {
                a[[q, r]] = 1.0;
            }
        }
        a
    }

    /// Disjoint union: the nodes of `parts` are laid out one block after another.
    pub fn block_diagonal<'a>(parts: impl IntoIterator<Item = &'a Adjacency>) -> Self {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut base = 0;
        for p in parts {
            for q in 0..p.node_count() {
                targets.extend(p.neighbors(q).iter().map(|&r| r + base));
                offsets.push(targets.len());
            }
            base += p.node_count();
        }
        Self { offsets, targets }
    }

    /// Relabels nodes so that new node `i` is old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let lists = order
            .iter()
            .map(|&old| self.neighbors(old).iter().map(|&r| inverse[r]).collect())
            .collect();
        Self::from_lists(lists)
    }
}

/// The local context of one pivot instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstancePivotSubgraph {
    pub pivot: usize,
    /// Global ids of the nodes, ordered by hop then discovery order.
    pub nodes: Vec<usize>,
    /// First hop (1-based) at which each node was discovered.
    pub hop_of: Vec<u8>,
    /// Row `q` is `x_q - x_p`.
    pub features: Array2<f32>,
    pub adjacency: Adjacency,
}

impl InstancePivotSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local indices of the pivot's direct neighbors.
    pub fn hop1(&self) -> impl Iterator<Item = usize> + '_ {
        self.hop_of
            .iter()
            .enumerate()
            .filter(|(_, &h)| h == 1)
            .map(|(q, _)| q)
    }

    pub fn hop1_count(&self) -> usize {
        self.hop_of.iter().filter(|&&h| h == 1).count()
    }

    /// Per-node link labels: true iff the node shares the pivot's (valid) identity.
    pub fn link_labels(&self, labels: &[i64]) -> Vec<bool> {
        let lp = labels[self.pivot];
        self.nodes
            .iter()
            .map(|&q| lp >= 0 && labels[q] == lp)
            .collect()
    }
}

/// Hop-limited expansion from `pivot`.
///
/// A candidate already present keeps its earliest hop; the pivot is skipped.
pub fn discover_nodes(
    pivot: usize,
    nbrs: &NeighborTable,
    cfg: &IpsConfig,
) -> Result<(Vec<usize>, Vec<u8>)> {
    cfg.validate()?;
    if pivot >= nbrs.len() {
        return Err(Error::invalid(format!("pivot {pivot} out of range")));
    }
    if let Some(&k) = cfg.k_per_hop.iter().find(|&&k| k > nbrs.k()) {
        return Err(Error::invalid(format!(
            "fan-out {k} exceeds neighbor table width {}",
            nbrs.k()
        )));
    }
    if cfg.hops() > u8::MAX as usize {
        return Err(Error::Config("too many hops".into()));
    }

    let mut seen = HashSet::new();
    seen.insert(pivot);
    let mut nodes = Vec::new();
    let mut hop_of = Vec::new();
    let mut frontier = vec![pivot];
    for (hop, &k) in cfg.k_per_hop.iter().enumerate() {
        let mut next = Vec::new();
        for &src in &frontier {
            for &cand in &nbrs.neighbors(src)[..k] {
                if seen.insert(cand) {
                    next.push(cand);
                    nodes.push(cand);
                    hop_of.push(hop as u8 + 1);
                }
            }
        }
        frontier = next;
    }
    Ok((nodes, hop_of))
}

/// Offsets of node features from the pivot feature, in 32-bit arithmetic.
pub fn normalize_node_features(fs: &FeatureSet, pivot: usize, nodes: &[usize]) -> Array2<f32> {
    let d = fs.dim();
    let xp = fs.row(pivot);
    let mut out = Array2::zeros((nodes.len(), d));
    for (mut row, &q) in out.rows_mut().into_iter().zip(nodes) {
        row.assign(&(&fs.row(q) - &xp));
    }
    out
}

/// Links each node to those of its top-`u` global neighbors that are also nodes.
pub fn add_edges(nodes: &[usize], nbrs: &NeighborTable, u: usize) -> Result<Adjacency> {
    if u == 0 || u > nbrs.k() {
        return Err(Error::invalid(format!(
            "u={u} must be in 1..={}",
            nbrs.k()
        )));
    }
    let local: std::collections::HashMap<usize, usize> =
        nodes.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let mut edges = Vec::new();
    for (q, &g) in nodes.iter().enumerate() {
        for r in &nbrs.neighbors(g)[..u] {
            if let Some(&lr) = local.get(r) {
                edges.push((q, lr));
            }
        }
    }
    Ok(Adjacency::from_edges(nodes.len(), edges))
}

/// Builds the full subgraph for `pivot`. Fan-outs larger than N-1 are clamped.
pub fn build_ips(
    pivot: usize,
    fs: &FeatureSet,
    nbrs: &NeighborTable,
    cfg: &IpsConfig,
) -> Result<InstancePivotSubgraph> {
    if nbrs.len() != fs.len() {
        return Err(Error::shape(format!(
            "neighbor table covers {} instances, features {}",
            nbrs.len(),
            fs.len()
        )));
    }
    let mut cfg = cfg.clone();
    cfg.clamp_to(fs.len().saturating_sub(1));
    let (nodes, hop_of) = discover_nodes(pivot, nbrs, &cfg)?;
    let features = normalize_node_features(fs, pivot, &nodes);
    let adjacency = add_edges(&nodes, nbrs, cfg.u)?;
    Ok(InstancePivotSubgraph {
        pivot,
        nodes,
        hop_of,
        features,
        adjacency,
    })
}
