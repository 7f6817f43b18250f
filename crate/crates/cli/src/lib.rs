//! Command implementations behind the `pivotgcn` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pivotgcn::config::PipelineConfig;
use pivotgcn::dataset::{load_features, load_labels, save_features, save_labels, synth_generate, FeatureSet, SynthSpec};
use pivotgcn::gcn::{load_model, save_model, toy2d_trace, train, write_loss_csv, write_trace_csv, GcnModel, ToyConfig};
use pivotgcn::ips::{build_ips, IpsConfig};
use pivotgcn::knn::build_knn;
use pivotgcn::merge::{filter_singletons, threshold_baseline, Partition};
use pivotgcn::metrics::{evaluate, knn_upper_bound, EvalOptions, EvalReport};
use pivotgcn::pipeline::{cluster, prepare_features, with_workers};

#[derive(Debug, Parser)]
#[command(name = "pivotgcn", version, about = "Cluster feature vectors by learned link prediction")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Feature matrix (FMAT).
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    /// Identity labels (LBLS).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a single configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic collection.
    Synth(SynthArgs),
    /// Train a link predictor.
    Train,
    /// Cluster features with a trained model.
    Cluster(ClusterArgs),
    /// Score a partition against labels.
    Eval(EvalArgs),
    /// Best achievable scores from kNN links alone.
    UpperBound(UpperBoundArgs),
    /// Trace 2-D embeddings of a toy subgraph during training.
    Toy2d(ToyArgs),
    /// Cluster by thresholding cosine similarity on the kNN graph.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub ids: usize,
    /// Samples per identity as MIN:MAX.
    #[arg(long, value_parser = parse_count_range, default_value = "10:60")]
    pub per_id: (usize, usize),
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Per-identity noise scale as LO:HI, drawn log-uniform.
    #[arg(long, value_parser = parse_real_range, default_value = "0.05:0.2")]
    pub noise: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    pub anisotropy: f64,
    /// Distractors as a fraction of the inlier count.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Partition TSV written by `cluster` or `baseline`.
    #[arg(long)]
    pub partition: PathBuf,
    /// Also score after removing singleton clusters.
    #[arg(long)]
    pub drop_singletons: bool,
}

#[derive(Debug, Args)]
pub struct UpperBoundArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub pivot: usize,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// Iterations at which embeddings are written.
    #[arg(long, value_delimiter = ',', default_value = "0,10,50,200")]
    pub record: Vec<usize>,
    /// Subgraph fan-out per hop.
    #[arg(long, value_delimiter = ',', default_value = "20,3")]
    pub k_per_hop: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub u: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Neighbors considered per instance.
    #[arg(long, default_value_t = 80)]
    pub k: usize,
    /// Link neighbors with cosine similarity at least this value.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.5)]
    pub tau_sim: f64,
}

fn parse_count_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let lo: usize = a.trim().parse().map_err(|_| format!("bad count `{a}`"))?;
    let hi: usize = b.trim().parse().map_err(|_| format!("bad count `{b}`"))?;
    if lo == 0 || lo > hi {
        return Err(format!("range {lo}:{hi} must satisfy 0 < MIN <= MAX"));
    }
    Ok((lo, hi))
}

fn parse_real_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err(format!("range {lo}:{hi} must satisfy 0 < LO <= HI"));
    }
    Ok((lo, hi))
}

impl Shared {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn features(&self, cfg: &PipelineConfig) -> Result<FeatureSet> {
        let path = self.features.as_ref().context("--features is required")?;
        let fs = load_features(path).with_context(|| format!("reading features {}", path.display()))?;
        let fs = match &self.labels {
            Some(_) => fs.with_labels(self.labels()?)?,
            None => fs,
        };
        Ok(prepare_features(fs, cfg.normalize)?)
    }

    fn labeled_features(&self, cfg: &PipelineConfig) -> Result<FeatureSet> {
        if self.labels.is_none() {
            bail!("--labels is required for this command");
        }
        self.features(cfg)
    }

    fn labels(&self) -> Result<Vec<i64>> {
        let path = self.labels.as_ref().context("--labels is required")?;
        load_labels(path).with_context(|| format!("reading labels {}", path.display()))
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.shared.pipeline_config()?;
    with_workers(cfg.workers, || dispatch(cli, &cfg))?
}

fn dispatch(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let shared = &cli.shared;
    match &cli.command {
        Command::Synth(a) => cmd_synth(shared, cfg, a),
        Command::Train => cmd_train(shared, cfg),
        Command::Cluster(a) => cmd_cluster(shared, cfg, a),
        Command::Eval(a) => cmd_eval(shared, cfg, a),
        Command::UpperBound(a) => cmd_upper_bound(shared, cfg, a),
        Command::Toy2d(a) => cmd_toy2d(shared, cfg, a),
        Command::Baseline(a) => cmd_baseline(shared, cfg, a),
    }
}

fn cmd_synth(shared: &Shared, cfg: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_identities: a.ids,
        samples_per_identity: a.per_id,
        dim: a.dim,
        center_spread: a.spread,
        noise_scale: a.noise,
        anisotropy: a.anisotropy,
        outlier_fraction: a.outliers,
        seed: cfg.seed,
    };
    let fs = synth_generate(&spec)?;
    let labels = fs.labels().expect("synthetic sets are labeled");
    save_features(&fs, shared.output("features.fmat")?)?;
    save_labels(labels, shared.output("labels.lbls")?)?;
    println!("N={} D={} identities={}", fs.len(), fs.dim(), fs.identity_count());
    Ok(())
}

fn cmd_train(shared: &Shared, cfg: &PipelineConfig) -> Result<()> {
    let fs = shared.labeled_features(cfg)?;
    let model = GcnModel::new(&cfg.gcn_config(fs.dim()), cfg.seed)?;
    let outcome = train(model, &fs, &cfg.train_config())?;
    save_model(&outcome.model, shared.output("model.gcnm")?)?;
    write_loss_csv(shared.output("loss.csv")?, &outcome.loss_curve)?;
    std::fs::write(shared.output("config.txt")?, cfg.to_text())?;
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    println!("final loss {last:.6}");
    Ok(())
}

fn cmd_cluster(shared: &Shared, cfg: &PipelineConfig, a: &ClusterArgs) -> Result<()> {
    let fs = shared.features(cfg)?;
    let model = load_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    if model.input_dim() != fs.dim() {
        bail!(
            "model expects {}-dimensional features, {} has {}",
            model.input_dim(),
            shared.features.as_deref().unwrap_or(Path::new("?")).display(),
            fs.dim()
        );
    }
    let out = cluster(&model, &fs, &cfg.test_ips, &cfg.merge_mode())?;
    out.partition.write_tsv(shared.output("partition.tsv")?)?;
    out.edges.write_tsv(shared.output("edges.tsv")?)?;
    std::fs::write(shared.output("timing.tsv")?, out.timings.report())?;
    println!("{} clusters over {} instances", out.partition.num_clusters(), out.partition.len());
    print!("{}", out.timings.report());
    Ok(())
}

fn cmd_eval(shared: &Shared, cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    let labels = shared.labels()?;
    let partition = Partition::read_tsv(&a.partition)
        .with_context(|| format!("reading partition {}", a.partition.display()))?;
    let opts = EvalOptions {
        ignore_distractors: cfg.ignore_distractors,
        mask: None,
    };
    let all = evaluate(&labels, &partition, &opts)?;
    let mut tsv = format!("subset\tfraction_removed\t{}\n", EvalReport::TSV_HEADER);
    let _ = writeln!(tsv, "all\t0.000000\t{}", all.to_tsv());
    println!("{all}");
    if a.drop_singletons {
        let (mask, removed) = filter_singletons(&partition);
        let kept = evaluate(
            &labels,
            &partition,
            &EvalOptions {
                mask: Some(mask),
                ..opts
            },
        )?;
        let _ = writeln!(tsv, "non_singleton\t{removed:.6}\t{}", kept.to_tsv());
        println!("\nafter removing singletons ({:.2}% of instances)", removed * 100.0);
        println!("{kept}");
    }
    std::fs::write(shared.output("eval.tsv")?, tsv)?;
    Ok(())
}

fn cmd_upper_bound(shared: &Shared, cfg: &PipelineConfig, a: &UpperBoundArgs) -> Result<()> {
    let fs = shared.labeled_features(cfg)?;
    let k_max = a.k.iter().copied().max().context("--k needs at least one value")?;
    let nbrs = build_knn(&fs, k_max)?;
    let opts = EvalOptions {
        ignore_distractors: cfg.ignore_distractors,
        mask: None,
    };
    let rows = knn_upper_bound(fs.labels().expect("labels attached"), &nbrs, &a.k, &opts)?;
    let mut tsv = format!("k\t{}\n", EvalReport::TSV_HEADER);
    println!("{:>6}{:>10}{:>10}", "k", "F", "NMI");
    for (k, r) in &rows {
        let _ = writeln!(tsv, "{k}\t{}", r.to_tsv());
        println!("{k:>6}{:>10.4}{:>10.4}", r.bcubed_f, r.nmi);
    }
    std::fs::write(shared.output("upper_bound.tsv")?, tsv)?;
    Ok(())
}

fn cmd_toy2d(shared: &Shared, cfg: &PipelineConfig, a: &ToyArgs) -> Result<()> {
    let fs = shared.labeled_features(cfg)?;
    if a.pivot >= fs.len() {
        bail!("pivot {} out of range for {} instances", a.pivot, fs.len());
    }
    let ips_cfg = IpsConfig::new(a.k_per_hop.clone(), a.u)?.for_population(fs.len());
    let nbrs = build_knn(&fs, ips_cfg.required_k())?;
    let ips = build_ips(a.pivot, &fs, &nbrs, &ips_cfg)?;
    let toy = ToyConfig {
        aggregator: cfg.aggregator,
        iterations: a.iterations,
        record_at: a.record.clone(),
        learning_rate: a.lr,
        seed: cfg.seed,
        ..ToyConfig::default()
    };
    let (records, _) = toy2d_trace(&fs, &ips, &toy)?;
    write_trace_csv(shared.output("trace.csv")?, &records)?;
    println!("{} records for {} nodes", records.len(), ips.len());
    Ok(())
}

fn cmd_baseline(shared: &Shared, cfg: &PipelineConfig, a: &BaselineArgs) -> Result<()> {
    let fs = shared.features(cfg)?;
    let nbrs = build_knn(&fs, a.k.min(fs.len().saturating_sub(1)))?;
    let partition = threshold_baseline(&fs, &nbrs, a.tau_sim)?;
    partition.write_tsv(shared.output("partition.tsv")?)?;
    println!("{} clusters over {} instances", partition.num_clusters(), partition.len());
    Ok(())
}
