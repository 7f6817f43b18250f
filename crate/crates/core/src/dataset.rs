//! Feature collections: binary I/O, row normalization, synthetic identity
//! mixtures and multi-view concatenation.
//!
//! Two little-endian binary layouts are used on disk:
//!
//! * `FMAT`: magic `"FMAT"`, `u32` version (1), `u64` N, `u32` D, then N·D
//!   `f32` values in row-major order.
//! * `LBLS`: magic `"LBLS"`, `u32` version (1), `u64` N, then N `i64` labels.
//!   A label of `-1` marks a distractor with no identity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const LBLS_MAGIC: &[u8; 4] = b"LBLS";
const FORMAT_VERSION: u32 = 1;

/// Label carried by instances without a valid identity.
pub const DISTRACTOR: i64 = -1;

/// An N×D matrix of instance embeddings with optional identity labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Array2<f32>,
    labels: Option<Vec<i64>>,
    normalized: bool,
}

impl FeatureSet {
    pub fn new(features: Array2<f32>, labels: Option<Vec<i64>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::shape(format!("feature matrix must be non-empty, got {n}x{d}")));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], labels: Option<Vec<i64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("rows have differing lengths"));
        }
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of distinct non-distractor identities.
    pub fn identity_count(&self) -> usize {
        let mut ids: Vec<i64> = self
            .labels()
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(|&l| l != DISTRACTOR)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_rows(fs: FeatureSet) -> Result<FeatureSet> {
    let FeatureSet {
        mut features,
        labels,
        ..
    } = fs;
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row.mapv_inplace(|v| (f64::from(v) / norm) as f32);
    }
    Ok(FeatureSet {
        features,
        labels,
        normalized: true,
    })
}

/// Joins two views of the same instances along the feature dimension.
pub fn concat_views(a: &FeatureSet, b: &FeatureSet) -> Result<FeatureSet> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "views have {} and {} instances",
            a.len(),
            b.len()
        )));
    }
    let labels = match (a.labels(), b.labels()) {
        (Some(la), Some(lb)) => {
            if let Some(i) = la.iter().zip(lb).position(|(x, y)| x != y) {
                return Err(Error::invalid(format!("view labels differ at index {i}")));
            }
            Some(la.to_vec())
        }
        (Some(l), None) | (None, Some(l)) => Some(l.to_vec()),
        (None, None) => None,
    };
    let joined = concatenate(Axis(1), &[a.features.view(), b.features.view()])
        .map_err(|e| Error::shape(e.to_string()))?;
    FeatureSet::new(joined, labels)
}

pub fn save_features(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FMAT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(fs.len() as u64).to_le_bytes())?;
    w.write_all(&(fs.dim() as u32).to_le_bytes())?;
    for v in fs.features.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, FMAT_MAGIC)?;
    let n = read_u64(&mut r, "n")?;
    let d = u64::from(read_u32(&mut r, "d")?);
    if n == 0 {
        return Err(Error::format("n", "instance count is zero"));
    }
    if d == 0 {
        return Err(Error::format("d", "dimension is zero"));
    }
    let count = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::format("n", "N*D overflows"))?;
    let mut bytes = Vec::new();
    r.take(count as u64 * 4 + 1).read_to_end(&mut bytes)?;
    if bytes.len() < count * 4 {
        return Err(Error::format(
            "payload",
            format!(
                "truncated: header declares {n}x{d} values, found {} bytes of {}",
                bytes.len(),
                count * 4
            ),
        ));
    }
    if bytes.len() > count * 4 {
        return Err(Error::format("payload", "trailing bytes after declared payload"));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let features = Array2::from_shape_vec((n as usize, d as usize), values)
        .map_err(|e| Error::shape(e.to_string()))?;
    FeatureSet::new(features, None)
}

pub fn save_labels(labels: &[i64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LBLS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    for l in labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, LBLS_MAGIC)?;
    let n = read_u64(&mut r, "n")?;
    if n == 0 {
        return Err(Error::format("n", "label count is zero"));
    }
    let mut bytes = Vec::new();
    r.take(n * 8 + 1).read_to_end(&mut bytes)?;
    let expected = n as usize * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            "payload",
            format!("expected {expected} label bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::format("magic", "file shorter than magic"))?;
    if &got != magic {
        return Err(Error::format(
            "magic",
            format!(
                "expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            ),
        ));
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(field, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, field: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(field, "truncated header"))?;
    Ok(u64::from_le_bytes(b))
}

/// Parameters of a synthetic identity mixture.
///
/// Each identity gets a center drawn uniformly from a ball of radius
/// `center_spread`, a sample count from `samples_per_identity`, and its own
/// noise scale drawn log-uniformly from `noise_scale`; the spread of noise
/// scales is what gives the collection its density variation.
/// `anisotropy > 1` additionally stretches each identity's noise along
/// random per-axis factors in `[1/sqrt(a), sqrt(a)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_identities: usize,
    pub samples_per_identity: (usize, usize),
    pub dim: usize,
    pub center_spread: f64,
    pub noise_scale: (f64, f64),
    pub anisotropy: f64,
    /// Distractor count as a fraction of the inlier count.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_identities: 20,
            samples_per_identity: (10, 60),
            dim: 64,
            center_spread: 1.0,
            noise_scale: (0.05, 0.2),
            anisotropy: 1.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_identities == 0 {
            return bad("num_identities must be positive");
        }
        let (lo, hi) = self.samples_per_identity;
        if lo == 0 || lo > hi {
            return bad("samples_per_identity must be a non-empty range of positive counts");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return bad("center_spread must be positive");
        }
        let (slo, shi) = self.noise_scale;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return bad("noise_scale must be a non-empty range of positive reals");
        }
        if !(self.anisotropy >= 1.0 && self.anisotropy.is_finite()) {
            return bad("anisotropy must be >= 1");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Draws a labeled synthetic collection; a pure function of `spec`.
///
/// Instances are emitted in a seeded random order; distractors carry label
/// [`DISTRACTOR`].
pub fn synth_generate(spec: &SynthSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::DATA);
    let d = spec.dim;
    let mut rows: Vec<(Vec<f32>, i64)> = Vec::new();

    let (ln_lo, ln_hi) = (spec.noise_scale.0.ln(), spec.noise_scale.1.ln());
    let half_log_aniso = spec.anisotropy.ln() / 2.0;
    for id in 0..spec.num_identities {
        let center = sample_ball(&mut rng, d, spec.center_spread);
        let count = rng.random_range(spec.samples_per_identity.0..=spec.samples_per_identity.1);
        let sigma = if ln_hi > ln_lo {
            rng.random_range(ln_lo..=ln_hi).exp()
        } else {
            spec.noise_scale.0
        };
        let axis_scale: Vec<f64> = (0..d)
            .map(|_| {
                if half_log_aniso > 0.0 {
                    rng.random_range(-half_log_aniso..=half_log_aniso).exp()
                } else {
                    1.0
                }
            })
            .collect();
        for _ in 0..count {
            let row = center
                .iter()
                .zip(&axis_scale)
                .map(|(&c, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c + sigma * s * z) as f32
                })
                .collect();
            rows.push((row, id as i64));
        }
    }

    let outliers = (spec.outlier_fraction * rows.len() as f64).floor() as usize;
    for _ in 0..outliers {
        let row = sample_ball(&mut rng, d, spec.center_spread)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        rows.push((row, DISTRACTOR));
    }

    // Fisher-Yates with the same stream keeps the whole draw a function of the seed.
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }

    let labels = rows.iter().map(|(_, l)| *l).collect();
    let flat: Vec<f32> = rows.into_iter().flat_map(|(r, _)| r).collect();
    let n = flat.len() / d;
    let features = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::shape(e.to_string()))?;
    FeatureSet::new(features, Some(labels))
}

fn sample_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            return dir.into_iter().map(|v| v / norm * r).collect();
        }
    }
}
