//! Clustering quality: NMI, BCubed precision/recall/F, and the kNN
//! upper-bound analysis.

use std::collections::HashMap;
use std::fmt;

use crate::dataset::DISTRACTOR;
use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::merge::Partition;

fn contingency(truth: &Partition, pred: &Partition) -> Result<HashMap<(usize, usize), usize>> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "truth has {} instances, prediction {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut cells = HashMap::new();
    for (&a, &b) in truth.assignment().iter().zip(pred.assignment()) {
        *cells.entry((a, b)).or_insert(0usize) += 1;
    }
    Ok(cells)
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(Ω, C) / sqrt(H(Ω) H(C))` with natural logarithms.
///
/// Two single-cluster partitions score 1; a single cluster against anything
/// else scores 0.
pub fn nmi(truth: &Partition, pred: &Partition) -> Result<f64> {
    let cells = contingency(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::invalid("cannot score an empty partition"));
    }
    let n = truth.len() as f64;
    let ta = truth.cluster_sizes();
    let pb = pred.cluster_sizes();
    let (ht, hp) = (entropy(&ta, n), entropy(&pb, n));
    if ht == 0.0 || hp == 0.0 {
        return Ok(if ht == 0.0 && hp == 0.0 { 1.0 } else { 0.0 });
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mi: f64 = keys
        .into_iter()
        .map(|(a, b)| {
            let nab = cells[&(a, b)] as f64;
            nab / n * (n * nab / (ta[a] as f64 * pb[b] as f64)).ln()
        })
        .sum();
    Ok((mi / (ht * hp).sqrt()).clamp(0.0, 1.0))
}

/// BCubed precision, recall and F-measure (self pairs included).
pub fn bcubed(truth: &Partition, pred: &Partition) -> Result<(f64, f64, f64)> {
    let cells = contingency(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::invalid("cannot score an empty partition"));
    }
    let n = truth.len() as f64;
    let ta = truth.cluster_sizes();
    let pb = pred.cluster_sizes();
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let (mut p, mut r) = (0.0, 0.0);
    for (a, b) in keys {
        let nab = cells[&(a, b)] as f64;
        p += nab * nab / pb[b] as f64;
        r += nab * nab / ta[a] as f64;
    }
    let (p, r) = (p / n, r / n);
    Ok((p, r, f_measure(p, r)))
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub nmi: f64,
    pub bcubed_precision: f64,
    pub bcubed_recall: f64,
    pub bcubed_f: f64,
    pub n_evaluated: usize,
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "nmi\tbcubed_precision\tbcubed_recall\tbcubed_f\tn_evaluated";

    pub fn to_tsv(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.nmi, self.bcubed_precision, self.bcubed_recall, self.bcubed_f, self.n_evaluated
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>10}", "metric", "value")?;
        writeln!(f, "{:<18}{:>10.4}", "NMI", self.nmi)?;
        writeln!(f, "{:<18}{:>10.4}", "BCubed precision", self.bcubed_precision)?;
        writeln!(f, "{:<18}{:>10.4}", "BCubed recall", self.bcubed_recall)?;
        writeln!(f, "{:<18}{:>10.4}", "BCubed F", self.bcubed_f)?;
        write!(f, "{:<18}{:>10}", "instances", self.n_evaluated)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Drop instances labeled as distractors before scoring.
    pub ignore_distractors: bool,
    /// Additional instance mask (true = keep), e.g. from singleton filtering.
    pub mask: Option<Vec<bool>>,
}

/// Scores `pred` against identity labels, after masking.
pub fn evaluate(labels: &[i64], pred: &Partition, opts: &EvalOptions) -> Result<EvalReport> {
    if labels.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} labels for a partition of {} instances",
            labels.len(),
            pred.len()
        )));
    }
    let mut keep: Vec<bool> = match &opts.mask {
        Some(m) if m.len() != labels.len() => {
            return Err(Error::shape("mask length does not match labels"))
        }
        Some(m) => m.clone(),
        None => vec![true; labels.len()],
    };
    if opts.ignore_distractors {
        for (k, &l) in keep.iter_mut().zip(labels) {
            *k &= l != DISTRACTOR;
        }
    }
    let kept_labels: Vec<i64> = labels
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&l, _)| l)
        .collect();
    if kept_labels.is_empty() {
        return Err(Error::invalid("no instances left to evaluate"));
    }
    let truth = Partition::from_labels(&kept_labels);
    let pred = pred.restrict(&keep)?;
    let (p, r, f) = bcubed(&truth, &pred)?;
    Ok(EvalReport {
        nmi: nmi(&truth, &pred)?,
        bcubed_precision: p,
        bcubed_recall: r,
        bcubed_f: f,
        n_evaluated: kept_labels.len(),
    })
}

/// Best achievable clustering from kNN links: connect `i` to each of its
/// first `k` neighbors that shares its identity, take components, score.
/// Distractors are never linked.
pub fn knn_upper_bound(
    labels: &[i64],
    nbrs: &NeighborTable,
    k_list: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<(usize, EvalReport)>> {
    if labels.len() != nbrs.len() {
        return Err(Error::shape("labels do not match neighbor table"));
    }
    k_list
        .iter()
        .map(|&k| {
            if k == 0 || k > nbrs.k() {
                return Err(Error::invalid(format!(
                    "k={k} exceeds neighbor table width {}",
                    nbrs.k()
                )));
            }
            let mut uf = DisjointSet::new(labels.len());
            for (i, &li) in labels.iter().enumerate() {
                if li == DISTRACTOR {
                    continue;
                }
                for &j in &nbrs.neighbors(i)[..k] {
                    if labels[j] == li {
                        uf.union(i, j);
                    }
                }
            }
            let roots: Vec<usize> = (0..labels.len()).map(|i| uf.find(i)).collect();
            let pred = Partition::from_labels(&roots);
            Ok((k, evaluate(labels, &pred, opts)?))
        })
        .collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
