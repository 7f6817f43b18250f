//! Experiment configuration as flat `key = value` text.
//!
//! Lines starting with `#` and blank lines are ignored. Later assignments
//! override earlier ones, so defaults, a config file and command-line
//! overrides can be applied in that order.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gcn::{Aggregator, GcnConfig, TrainConfig};
use crate::ips::IpsConfig;
use crate::merge::PropagationSchedule;
use crate::pipeline::MergeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeKind {
    Bfs,
    Propagate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// 0 lets the thread pool pick.
    pub workers: usize,
    pub normalize: bool,
    pub ignore_distractors: bool,
    /// `train.ips` is the training regime; `train.seed` is overwritten by `seed`.
    pub train: TrainConfig,
    pub test_ips: IpsConfig,
    pub hidden_dims: Vec<usize>,
    pub aggregator: Aggregator,
    pub attention_hidden: usize,
    pub merge_kind: MergeKind,
    pub bfs_tau: f64,
    pub schedule: PropagationSchedule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            normalize: true,
            ignore_distractors: true,
            train: TrainConfig::default(),
            test_ips: IpsConfig::test_regime(),
            hidden_dims: vec![256, 256, 128, 64],
            aggregator: Aggregator::Mean,
            attention_hidden: 64,
            merge_kind: MergeKind::Propagate,
            bfs_tau: 0.5,
            schedule: PropagationSchedule::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn join(list: &[usize]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "ignore_distractors" => self.ignore_distractors = parse_bool(key, value)?,
            "train.k_per_hop" => self.train.ips.k_per_hop = parse_list(key, value)?,
            "train.u" => self.train.ips.u = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.learning_rate = parse(key, value)?,
            "train.momentum" => self.train.momentum = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.lr_decay" => self.train.lr_decay = parse(key, value)?,
            "train.lr_milestones" => {
                self.train.lr_milestones = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|v| parse(key, v))
                    .collect::<Result<_>>()?
            }
            "train.pivots_per_epoch" => {
                self.train.pivots_per_epoch = match value.trim() {
                    "all" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "test.k_per_hop" => self.test_ips.k_per_hop = parse_list(key, value)?,
            "test.u" => self.test_ips.u = parse(key, value)?,
            "model.hidden_dims" => self.hidden_dims = parse_list(key, value)?,
            "model.aggregator" => self.aggregator = value.trim().parse()?,
            "model.attention_hidden" => self.attention_hidden = parse(key, value)?,
            "merge.mode" => {
                self.merge_kind = match value.trim() {
                    "bfs" => MergeKind::Bfs,
                    "propagate" => MergeKind::Propagate,
                    other => return Err(Error::Config(format!("unknown merge mode `{other}`"))),
                }
            }
            "merge.tau" => self.bfs_tau = parse(key, value)?,
            "merge.tau0" => self.schedule.tau0 = parse(key, value)?,
            "merge.step" => self.schedule.step = parse(key, value)?,
            "merge.max_size" => self.schedule.max_size = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.test_ips.validate()?;
        self.gcn_config(1).validate()?;
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.bfs_tau) {
            return Err(Error::Config("merge.tau must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn gcn_config(&self, input_dim: usize) -> GcnConfig {
        GcnConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            aggregator: self.aggregator,
            attention_hidden: self.attention_hidden,
        }
    }

    pub fn merge_mode(&self) -> MergeMode {
        match self.merge_kind {
            MergeKind::Bfs => MergeMode::Bfs { tau: self.bfs_tau },
            MergeKind::Propagate => MergeMode::Propagate(self.schedule),
        }
    }

    /// Serializes every key; `apply_text` of the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("normalize", self.normalize.to_string());
        kv("ignore_distractors", self.ignore_distractors.to_string());
        kv("train.k_per_hop", join(&t.ips.k_per_hop));
        kv("train.u", t.ips.u.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lr", t.learning_rate.to_string());
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.lr_decay", t.lr_decay.to_string());
        kv(
            "train.lr_milestones",
            t.lr_milestones.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        kv(
            "train.pivots_per_epoch",
            t.pivots_per_epoch.map_or("all".to_string(), |p| p.to_string()),
        );
        kv("test.k_per_hop", join(&self.test_ips.k_per_hop));
        kv("test.u", self.test_ips.u.to_string());
        kv("model.hidden_dims", join(&self.hidden_dims));
        kv("model.aggregator", self.aggregator.to_string());
        kv("model.attention_hidden", self.attention_hidden.to_string());
        kv(
            "merge.mode",
            match self.merge_kind {
                MergeKind::Bfs => "bfs",
                MergeKind::Propagate => "propagate",
            }
            .to_string(),
        );
        kv("merge.tau", self.bfs_tau.to_string());
        kv("merge.tau0", self.schedule.tau0.to_string());
        kv("merge.step", self.schedule.step.to_string());
        kv("merge.max_size", self.schedule.max_size.to_string());
        s
    }
}
