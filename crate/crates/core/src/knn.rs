//! Exact k-nearest-neighbor search under cosine similarity.
//!
//! The search is a brute-force scan parallelized over query rows. Each row's
//! result depends only on the data, so the table is identical for any
//! worker count.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};

const NBRT_MAGIC: &[u8; 4] = b"NBRT";
const NBRT_VERSION: u32 = 1;

/// Cosine similarity with 64-bit accumulation.
pub fn cosine_similarity(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn dot(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn norm(a: ArrayView1<'_, f32>) -> f64 {
    dot(a, a).sqrt()
}

/// Per-instance k nearest neighbors, self excluded, most similar first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    similarities: Vec<f32>,
}

impl NeighborTable {
    pub fn from_parts(k: usize, indices: Vec<usize>, similarities: Vec<f32>) -> Result<Self> {
        if k == 0 || indices.len() != similarities.len() || indices.len() % k != 0 {
            return Err(Error::shape("neighbor table parts are inconsistent"));
        }
        let n = indices.len() / k;
        for i in 0..n {
            let row = &indices[i * k..(i + 1) * k];
            if row.iter().any(|&j| j >= n || j == i) {
                return Err(Error::invalid(format!("row {i} contains self or out-of-range id")));
            }
        }
        Ok(Self {
            k,
            indices,
            similarities,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn similarities(&self, i: usize) -> &[f32] {
        &self.similarities[i * self.k..(i + 1) * self.k]
    }

    /// Keeps only the first `k` columns.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::invalid(format!("cannot truncate k={} to {k}", self.k)));
        }
        let n = self.len();
        let mut indices = Vec::with_capacity(n * k);
        let mut similarities = Vec::with_capacity(n * k);
        for i in 0..n {
            indices.extend_from_slice(&self.neighbors(i)[..k]);
            similarities.extend_from_slice(&self.similarities(i)[..k]);
        }
        Ok(Self {
            k,
            indices,
            similarities,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(NBRT_MAGIC)?;
        w.write_all(&NBRT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        for &j in &self.indices {
            w.write_all(&(j as u64).to_le_bytes())?;
        }
        for s in &self.similarities {
            w.write_all(&s.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..4] != NBRT_MAGIC {
            return Err(Error::format("magic", "not an NBRT file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != NBRT_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let k = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        if n == 0 {
            return Err(Error::format("n", "instance count is zero"));
        }
        if k == 0 {
            return Err(Error::format("k", "k is zero"));
        }
        let payload = &bytes[20..];
        if payload.len() != n * k * 12 {
            return Err(Error::format("payload", "payload length does not match N and k"));
        }
        let (ids, sims) = payload.split_at(n * k * 8);
        let indices = ids
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let similarities = sims
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_parts(k, indices, similarities)
    }
}

/// Exact k-NN table by cosine similarity; ties go to the smaller id.
pub fn build_knn(fs: &FeatureSet, k: usize) -> Result<NeighborTable> {
    let n = fs.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k={k} must satisfy 1 <= k <= N-1 = {}", n - 1)));
    }
    let x = fs.features();
    let norms: Vec<f64> = x.rows().into_iter().map(norm).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm { row: i });
    }

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(xi, x.row(j)) / (norms[i] * norms[j])))
                .collect();
            cand.select_nth_unstable_by(k - 1, rank_order);
            cand.truncate(k);
            cand.shrink_to_fit();
            cand.sort_unstable_by(rank_order);
            cand
        })
        .collect();

    let mut indices = Vec::with_capacity(n * k);
    let mut similarities = Vec::with_capacity(n * k);
    for row in rows {
        for (j, s) in row {
            indices.push(j);
            similarities.push(s.clamp(-1.0, 1.0) as f32);
        }
    }
    Ok(NeighborTable {
        k,
        indices,
        similarities,
    })
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}
