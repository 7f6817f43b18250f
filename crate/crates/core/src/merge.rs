//! From per-pivot linkage likelihoods to a global partition.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::gcn::Prediction;
use crate::knn::NeighborTable;

/// Assignment of every instance to one cluster. Cluster ids are dense and
/// ordered by each cluster's smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    num_clusters: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels: clusters are numbered in order of first appearance.
    pub fn from_labels<T: std::hash::Hash + Eq>(labels: &[T]) -> Self {
        let mut ids = HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect();
        Self {
            assignment,
            num_clusters: ids.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
            num_clusters: n,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Members of each cluster in ascending id order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// The partition induced on the instances where `mask` is true, re-densified.
    pub fn restrict(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::shape(format!(
                "mask of length {} for {} instances",
                mask.len(),
                self.len()
            )));
        }
        let kept: Vec<usize> = self
            .assignment
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&c, _)| c)
            .collect();
        Ok(Self::from_labels(&kept))
    }

    /// Whether every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        let mut image = vec![usize::MAX; self.num_clusters];
        for (&c, &p) in self.assignment.iter().zip(&coarser.assignment) {
            if image[c] == usize::MAX {
                image[c] = p;
            } else if image[c] != p {
                return false;
            }
        }
        true
    }

    /// `instance_id<TAB>cluster_id` lines.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for (i, c) in self.assignment.iter().enumerate() {
            writeln!(w, "{i}\t{c}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a partition file; every instance id in `0..N` must appear once.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut rows = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let parse = |s: Option<&str>| -> Result<u64> {
                s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| {
                    Error::format("partition", format!("line {}: expected `id<TAB>cluster`", lineno + 1))
                })
            };
            let id = parse(parts.next())? as usize;
            let cluster = parse(parts.next())?;
            if rows.insert(id, cluster).is_some() {
                return Err(Error::format("partition", format!("instance {id} listed twice")));
            }
        }
        if rows.keys().copied().ne(0..rows.len()) {
            return Err(Error::format("partition", "instance ids are not exactly 0..N"));
        }
        let labels: Vec<u64> = rows.into_values().collect();
        Ok(Self::from_labels(&labels))
    }
}

/// Undirected edges `(i, j, w)` with `i < j`, sorted and unique.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightedEdgeSet {
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedEdgeSet {
    /// Canonicalizes and deduplicates `edges`, keeping the larger weight of duplicates.
    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            if a == b {
                return Err(Error::invalid(format!("self edge on {a}")));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("edge weight {w} outside [0, 1]")));
            }
            let key = (a.min(b), a.max(b));
            best.entry(key)
                .and_modify(|cur| *cur = cur.max(w))
                .or_insert(w);
        }
        Ok(Self {
            edges: best.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
        })
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// `instance_i<TAB>instance_j<TAB>weight` lines, weight at 6 decimals.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for (i, j, wt) in &self.edges {
            writeln!(w, "{i}\t{j}\t{wt:.6}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Collects pivot→neighbor likelihoods into one undirected edge set; when
/// both directions were predicted the larger likelihood wins.
pub fn pool_edges(predictions: &[Prediction]) -> Result<WeightedEdgeSet> {
    WeightedEdgeSet::from_edges(predictions.iter().flat_map(|p| {
        p.nodes
            .iter()
            .zip(&p.likelihood)
            .map(move |(&q, &w)| (p.pivot, q, w.clamp(0.0, 1.0)))
    }))
}

/// Connected components of `edges` over `n` instances, walked breadth-first.
fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Partition {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    Partition {
        assignment: label,
        num_clusters: next,
    }
}

/// Components after cutting edges with weight below `tau`.
pub fn bfs_cluster(n: usize, edges: &WeightedEdgeSet, tau: f64) -> Result<Partition> {
    check_edges_fit(n, edges)?;
    Ok(components(
        n,
        edges
            .edges
            .iter()
            .filter(|e| e.2 >= tau)
            .map(|&(i, j, _)| (i, j)),
    ))
}

fn check_edges_fit(n: usize, edges: &WeightedEdgeSet) -> Result<()> {
    match edges.edges.iter().map(|e| e.1).max() {
        Some(j) if j >= n => Err(Error::invalid(format!("edge endpoint {j} outside 0..{n}"))),
        _ => Ok(()),
    }
}

/// Threshold schedule for [`propagate_cluster`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationSchedule {
    pub tau0: f64,
    /// Additive threshold increment per iteration.
    pub step: f64,
    pub max_size: usize,
}

impl Default for PropagationSchedule {
    fn default() -> Self {
        Self {
            tau0: 0.5,
            step: 0.05,
            max_size: 600,
        }
    }
}

impl PropagationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau0) || !(self.step > 0.0) || self.max_size == 0 {
            return Err(Error::Config(format!(
                "propagation needs tau0 in [0, 1), step > 0, max_size >= 1; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Upper bound on iterations: once the threshold exceeds 1 every component is a singleton.
    pub fn max_iterations(&self) -> usize {
        ((1.0 - self.tau0) / self.step).ceil() as usize + 2
    }

    pub fn threshold(&self, iteration: usize) -> f64 {
        self.tau0 + iteration as f64 * self.step
    }
}

/// Result of [`propagate_cluster`] with its iteration count.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub partition: Partition,
    pub iterations: usize,
}

/// Iterative pseudo-label propagation.
///
/// Iteration `t` cuts edges below `tau0 + t·step` inside every queued
/// group; components no larger than `max_size` are finalized and larger ones
/// are queued for the next, stricter iteration.
pub fn propagate_cluster(
    n: usize,
    edges: &WeightedEdgeSet,
    schedule: &PropagationSchedule,
) -> Result<Propagation> {
    schedule.validate()?;
    check_edges_fit(n, edges)?;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, w) in &edges.edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }

    let mut label = vec![usize::MAX; n];
    let mut finalized: Vec<Vec<usize>> = Vec::new();
    // group id per instance for the groups queued in the current iteration
    let mut group = vec![0usize; n];
    let mut queue: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut iteration = 0;
    let mut seen = vec![false; n];
    while !queue.is_empty() {
        let tau = schedule.threshold(iteration);
        for (g, members) in queue.iter().enumerate() {
            for &v in members {
                group[v] = g;
            }
        }
        let mut next_queue = Vec::new();
        for members in &queue {
            for &start in members {
                if seen[start] {
                    continue;
                }
                seen[start] = true;
                let mut comp = vec![start];
                let mut head = 0;
                while head < comp.len() {
                    let v = comp[head];
                    head += 1;
                    for &(w, wt) in &adj[v] {
                        if wt >= tau && !seen[w] && group[w] == group[v] && label[w] == usize::MAX {
                            seen[w] = true;
                            comp.push(w);
                        }
                    }
                }
                if comp.len() <= schedule.max_size {
                    for &v in &comp {
                        label[v] = 0;
                    }
                    finalized.push(comp);
                } else {
                    next_queue.push(comp);
                }
            }
        }
        for members in &next_queue {
            for &v in members {
                seen[v] = false;
            }
        }
        queue = next_queue;
        iteration += 1;
        if iteration > schedule.max_iterations() {
            return Err(Error::invalid("propagation failed to terminate"));
        }
    }

    for (c, members) in finalized.iter().enumerate() {
        for &v in members {
            label[v] = c;
        }
    }
    Ok(Propagation {
        partition: Partition::from_labels(&label),
        iterations: iteration,
    })
}

/// Mask of instances outside size-1 clusters, and the fraction removed.
pub fn filter_singletons(p: &Partition) -> (Vec<bool>, f64) {
    let sizes = p.cluster_sizes();
    let mask: Vec<bool> = p.assignment.iter().map(|&c| sizes[c] > 1).collect();
    let removed = mask.iter().filter(|&&k| !k).count();
    let fraction = if p.is_empty() {
        0.0
    } else {
        removed as f64 / p.len() as f64
    };
    (mask, fraction)
}

/// Non-learned comparator: link every kNN pair whose cosine similarity is at
/// least `tau_sim`, then take components.
pub fn threshold_baseline(fs: &FeatureSet, nbrs: &NeighborTable, tau_sim: f64) -> Result<Partition> {
    if nbrs.len() != fs.len() {
        return Err(Error::shape("neighbor table does not match features"));
    }
    let edges = (0..nbrs.len()).flat_map(|i| {
        nbrs.neighbors(i)
            .iter()
            .zip(nbrs.similarities(i))
            .filter(move |(_, &s)| f64::from(s) >= tau_sim)
            .map(move |(&j, _)| (i, j))
    });
    Ok(components(fs.len(), edges))
}
