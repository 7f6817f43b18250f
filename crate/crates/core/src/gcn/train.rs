//! Mini-batch training over pivot subgraphs.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use super::model::{batch_loss_and_grads, GcnModel, GraphBatch};
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::ips::{build_ips, IpsConfig};
use crate::knn::{build_knn, NeighborTable};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub ips: IpsConfig,
    pub epochs: usize,
    /// Pivot subgraphs per update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of the run after which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Subsample of pivots visited per epoch; `None` visits every instance.
    pub pivots_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ips: IpsConfig::train_regime(),
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            pivots_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ips.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("need learning_rate > 0 and momentum in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || !(self.lr_decay > 0.0) {
            return Err(Error::Config("weight decay must be >= 0 and lr decay > 0".into()));
        }
        if self.pivots_per_epoch == Some(0) {
            return Err(Error::Config("pivots_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// Step schedule: decays once for every milestone already passed.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// SGD with heavy-ball momentum: `v = μv + g + λθ; θ -= lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: GcnModel,
}

impl Sgd {
    pub fn new(model: &GcnModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut GcnModel, grads: &GcnModel, lr: f64) {
        for ((theta, g), v) in model
            .params_mut()
            .into_iter()
            .zip(grads.params())
            .zip(self.velocity.params_mut())
        {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *t;
                *t -= lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GcnModel,
    /// Mean hop-1 cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(model: GcnModel, fs: &FeatureSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let ips = cfg.ips.for_population(fs.len());
    let nbrs = build_knn(fs, ips.required_k())?;
    train_with_neighbors(model, fs, &nbrs, cfg)
}

/// Trains on every instance as a pivot, `batch_size` subgraphs per update
/// merged block-diagonally. Deterministic given `cfg.seed`.
pub fn train_with_neighbors(
    mut model: GcnModel,
    fs: &FeatureSet,
    nbrs: &NeighborTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = fs
        .labels()
        .ok_or_else(|| Error::invalid("training requires identity labels"))?;
    if fs.identity_count() < 2 {
        return Err(Error::invalid("training requires at least two identities"));
    }
    if model.input_dim() != fs.dim() {
        return Err(Error::shape(format!(
            "model expects dimension {}, features have {}",
            model.input_dim(),
            fs.dim()
        )));
    }
    let ips_cfg = cfg.ips.for_population(fs.len());
    let mut shuffle = rng::stream(cfg.seed, rng::SHUFFLE);
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let mut pivots: Vec<usize> = (0..fs.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        pivots.shuffle(&mut shuffle);
        let visit = cfg.pivots_per_epoch.map_or(pivots.len(), |p| p.min(pivots.len()));
        let mut weighted_loss = 0.0;
        let mut supervised = 0usize;
        for chunk in pivots[..visit].chunks(cfg.batch_size) {
            let parts = chunk
                .iter()
                .map(|&p| build_ips(p, fs, nbrs, &ips_cfg).map(|g| GraphBatch::from_ips(&g, Some(labels))))
                .collect::<Result<Vec<_>>>()?;
            let batch = GraphBatch::block_diagonal(&parts)?;
            let (loss, grads) = batch_loss_and_grads(&model, &batch)?;
            opt.step(&mut model, &grads, lr);
            weighted_loss += loss * batch.targets.len() as f64;
            supervised += batch.targets.len();
        }
        let mean = weighted_loss / supervised as f64;
        log::info!("epoch {epoch}: lr {lr:.2e} loss {mean:.5}");
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// `epoch,mean_loss` CSV.
pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,mean_loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(w, "{e},{l:.8}")?;
    }
    w.flush()?;
    Ok(())
}
