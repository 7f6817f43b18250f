//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers to run a
//! subset, e.g. `cargo test --test acceptance -- 4 8`.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use pivotgcn::dataset::{normalize_rows, synth_generate, FeatureSet, SynthSpec, DISTRACTOR};
use pivotgcn::gcn::{
    aggregate_attention, aggregate_weighted, batch_loss, batch_loss_and_grads, forward, train, Aggregator,
    AttentionMlp, GcnConfig, GcnModel, GraphBatch, TrainConfig,
};
use pivotgcn::ips::{Adjacency, IpsConfig};
use pivotgcn::knn::build_knn;
use pivotgcn::merge::{
    bfs_cluster, filter_singletons, pool_edges, propagate_cluster, threshold_baseline, Partition,
    PropagationSchedule, WeightedEdgeSet,
};
use pivotgcn::metrics::{bcubed, evaluate, knn_upper_bound, nmi, EvalOptions};
use pivotgcn::pipeline::{cluster, neighbors_for, predict_links, with_workers, MergeMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient oracle", Duration::from_secs(60), gradient_oracle),
        (2, "metric oracle equivalence", Duration::from_secs(10), metric_oracles),
        (3, "upper-bound shape", Duration::from_secs(60), upper_bound_shape),
        (4, "learning benefit over threshold baseline", Duration::from_secs(15 * 60), learning_benefit),
        (5, "easy-set sanity", Duration::from_secs(120), easy_set),
        (6, "aggregator row sums", Duration::from_secs(10), aggregator_rows),
        (7, "merge correctness", Duration::from_secs(60), merge_correctness),
        (8, "singleton filtering", Duration::from_secs(5 * 60), singleton_filtering),
        (9, "link-prediction scalability", Duration::from_secs(20 * 60), scalability),
        (10, "determinism", Duration::from_secs(10 * 60), determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();

    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_message(&e))));
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        if !pass {
            failures += 1;
        }
        let timing = if in_time {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s, over the {}s budget", elapsed.as_secs_f64(), budget.as_secs())
        };
        println!(
            "[{}] criterion {id:>2} {name}: {} ({timing})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> GraphBatch {
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let mut edges = Vec::new();
    for q in 0..n {
        for r in q + 1..n {
            if rng.random_bool(0.35) {
                edges.push((q, r));
            }
        }
    }
    let mut targets: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    if targets.is_empty() {
        targets.push(0);
    }
    GraphBatch {
        features,
        adjacency: Adjacency::from_edges(n, edges),
        targets,
        labels: (0..n).map(|_| rng.random_bool(0.5)).collect(),
    }
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], agg: Aggregator) -> GcnModel {
    let mut cfg = GcnConfig::new(dims[0], agg).with_hidden_dims(dims[1..].to_vec());
    cfg.attention_hidden = 4;
    let mut model = GcnModel::new(&cfg, rng.random()).unwrap();
    model.head_bias[0] = rng.random_range(-0.5..0.5);
    model.head_bias[1] = rng.random_range(-0.5..0.5);
    model
}

const FD_EPS: f64 = 1e-4;
const FD_TOL: f64 = 1e-5;

fn central(model: &GcnModel, batch: &GraphBatch, base: &[bool], t: usize, i: usize, h: f64) -> Option<f64> {
    let mut side = [0.0; 2];
    for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
        let mut m = model.clone();
        m.params_mut()[t][i] += sign * h;
        let pass = forward(&m, batch).unwrap();
        if pass.relu_pattern() != base {
            return None;
        }
        side[s] = batch_loss(&pass, batch).unwrap();
    }
    Some((side[0] - side[1]) / (2.0 * h))
}

/// Worst relative error over every parameter, or `None` if the central
/// difference is not a valid reference here (ReLU kink inside the stencil,
/// or a step-doubling truncation estimate above a tenth of the tolerance).
fn worst_gradient_error(model: &GcnModel, batch: &GraphBatch) -> Option<f64> {
    let base = forward(model, batch).unwrap().relu_pattern();
    let (_, grads) = batch_loss_and_grads(model, batch).unwrap();
    let analytic = grads.params();
    let mut worst = 0.0f64;
    for t in 0..analytic.len() {
        for i in 0..analytic[t].len() {
            let fd = central(model, batch, &base, t, i, FD_EPS)?;
            let coarse = central(model, batch, &base, t, i, 2.0 * FD_EPS)?;
            let a = analytic[t][i];
            let scale = a.abs().max(fd.abs()).max(1e-6);
            if (coarse - fd).abs() / 3.0 > 0.1 * FD_TOL * scale {
                return None;
            }
            worst = worst.max((a - fd).abs() / scale);
        }
    }
    Some(worst)
}

fn gradient_oracle() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (k, agg) in [
        Aggregator::Mean,
        Aggregator::MeanRowNormalized,
        Aggregator::Weighted,
        Aggregator::Attention,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = seeded(1000 + k as u64);
        let (mut accepted, mut drawn, mut worst) = (0, 0, 0.0f64);
        while accepted < 20 && drawn < 1000 {
            drawn += 1;
            let n = rng.random_range(2..=10);
            let layers = rng.random_range(1..=4);
            let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=4)).collect();
            let batch = random_batch(&mut rng, n, dims[0]);
            let model = random_model(&mut rng, &dims, agg);
            if let Some(w) = worst_gradient_error(&model, &batch) {
                worst = worst.max(w);
                accepted += 1;
            }
        }
        pass &= accepted == 20 && worst < FD_TOL;
        details.push(format!("{agg} {accepted}/{drawn} max rel {worst:.1e}"));
    }
    Outcome::new(pass, details.join("; "))
}

// ---------------------------------------------------------------------------
// 2

fn nmi_oracle(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as f64;
    let mut table: HashMap<(i64, i64), f64> = HashMap::new();
    let mut ca: HashMap<i64, f64> = HashMap::new();
    let mut cb: HashMap<i64, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let h = |c: &HashMap<i64, f64>| -> f64 { c.values().map(|&v| -(v / n) * (v / n).ln()).sum() };
    let (ha, hb) = (h(&ca), h(&cb));
    if ha == 0.0 || hb == 0.0 {
        return if ha == hb { 1.0 } else { 0.0 };
    }
    let mi: f64 = table
        .iter()
        .map(|(&(x, y), &v)| (v / n) * ((v / n) / ((ca[&x] / n) * (cb[&y] / n))).ln())
        .sum();
    mi / (ha * hb).sqrt()
}

fn bcubed_oracle(truth: &[i64], pred: &[i64]) -> (f64, f64, f64) {
    let n = truth.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let (mut both, mut cluster, mut class) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let c = pred[i] == pred[j];
            let l = truth[i] == truth[j];
            cluster += f64::from(u8::from(c));
            class += f64::from(u8::from(l));
            both += f64::from(u8::from(c && l));
        }
        p += both / cluster;
        r += both / class;
    }
    let (p, r) = (p / n as f64, r / n as f64);
    (p, r, 2.0 * p * r / (p + r))
}

fn metric_oracles() -> Outcome {
    let mut rng = seeded(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let (ka, kb) = (rng.random_range(1..=n as i64), rng.random_range(1..=n as i64));
        let a: Vec<i64> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let (pa, pb) = (Partition::from_labels(&a), Partition::from_labels(&b));
        let got = bcubed(&pa, &pb).unwrap();
        let want = bcubed_oracle(&a, &b);
        worst = worst
            .max((nmi(&pa, &pb).unwrap() - nmi_oracle(&a, &b)).abs())
            .max((got.0 - want.0).abs())
            .max((got.1 - want.1).abs())
            .max((got.2 - want.2).abs());
    }
    Outcome::new(worst < 1e-9, format!("100 pairs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3

fn upper_bound_shape() -> Outcome {
    let spec = SynthSpec {
        num_identities: 50,
        samples_per_identity: (20, 100),
        dim: 16,
        noise_scale: (0.03, 0.3),
        seed: 3,
        ..SynthSpec::default()
    };
    let fs = normalize_rows(synth_generate(&spec).unwrap()).unwrap();
    let ks = [1, 2, 4, 8, 16, 32];
    let nbrs = build_knn(&fs, 32).unwrap();
    let rows = knn_upper_bound(fs.labels().unwrap(), &nbrs, &ks, &EvalOptions::default()).unwrap();
    let fs_curve: Vec<f64> = rows.iter().map(|r| r.1.bcubed_f).collect();
    let monotone = fs_curve.windows(2).all(|w| w[1] >= w[0]);
    let last = *fs_curve.last().unwrap();
    let curve = fs_curve.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        monotone && last > 0.95,
        format!("N={} F over k=1..32: {curve}", fs.len()),
    )
}

// ---------------------------------------------------------------------------
// 4, 8, 9 share one trained model.

const HARD_TEST_SEED: u64 = 200;
const HARD_TRAIN_SEED: u64 = 100;

fn hard_spec(num_identities: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        num_identities,
        samples_per_identity: (20, 100),
        dim: 16,
        center_spread: 1.0,
        noise_scale: (0.03, 0.3),
        anisotropy: 4.0,
        outlier_fraction: 0.1,
        seed,
    }
}

struct Hard {
    test: FeatureSet,
    model: GcnModel,
    edges: WeightedEdgeSet,
}

fn hard() -> &'static Hard {
    static HARD: OnceLock<Hard> = OnceLock::new();
    HARD.get_or_init(|| {
        let train_set = normalize_rows(synth_generate(&hard_spec(300, HARD_TRAIN_SEED)).unwrap()).unwrap();
        let test = normalize_rows(synth_generate(&hard_spec(50, HARD_TEST_SEED)).unwrap()).unwrap();
        let cfg = GcnConfig::new(16, Aggregator::Mean).with_hidden_dims(vec![64, 64, 32, 16]);
        let tc = TrainConfig {
            ips: IpsConfig::new(vec![80, 5], 5).unwrap(),
            epochs: 20,
            learning_rate: 0.05,
            pivots_per_epoch: Some(4000),
            seed: 3,
            ..TrainConfig::default()
        };
        let model = train(GcnModel::new(&cfg, 1).unwrap(), &train_set, &tc).unwrap().model;
        let (ips, nbrs) = neighbors_for(&test, &IpsConfig::test_regime()).unwrap();
        let edges = pool_edges(&predict_links(&model, &test, &nbrs, &ips).unwrap()).unwrap();
        Hard { test, model, edges }
    })
}

/// Every merge setting the pipeline is scored at.
fn operating_points(n: usize, edges: &WeightedEdgeSet) -> Vec<(String, Partition)> {
    let mut out = Vec::new();
    let mut taus: Vec<f64> = (1..=19).map(|t| t as f64 * 0.05).collect();
    taus.extend([0.97, 0.98, 0.99, 0.995, 0.999]);
    for tau in taus {
        out.push((format!("bfs tau={tau:.3}"), bfs_cluster(n, edges, tau).unwrap()));
    }
    for tau0 in [0.3, 0.5, 0.7, 0.9] {
        for step in [0.01, 0.05] {
            for max_size in [30, 100, 300, 600] {
                let s = PropagationSchedule { tau0, step, max_size };
                let p = propagate_cluster(n, edges, &s).unwrap().partition;
                out.push((format!("propagate tau0={tau0} step={step} max={max_size}"), p));
            }
        }
    }
    out
}

fn ignoring_distractors() -> EvalOptions {
    EvalOptions {
        ignore_distractors: true,
        mask: None,
    }
}

fn learning_benefit() -> Outcome {
    let h = hard();
    let labels = h.test.labels().unwrap();
    let opts = ignoring_distractors();
    let nbrs = build_knn(&h.test, IpsConfig::test_regime().k_per_hop[0]).unwrap();
    let mut baseline = (f64::NAN, 0.0);
    for t in 0..=40 {
        let tau = -1.0 + 0.05 * t as f64;
        let f = evaluate(labels, &threshold_baseline(&h.test, &nbrs, tau).unwrap(), &opts)
            .unwrap()
            .bcubed_f;
        if f > baseline.1 {
            baseline = (tau, f);
        }
    }
    let mut best = (String::new(), 0.0);
    for (name, p) in operating_points(h.test.len(), &h.edges) {
        let f = evaluate(labels, &p, &opts).unwrap().bcubed_f;
        if f > best.1 {
            best = (name, f);
        }
    }
    let gain = best.1 - baseline.1;
    Outcome::new(
        gain >= 0.05,
        format!(
            "N={} GCN-M F {:.4} ({}) vs baseline F {:.4} (tau_sim={:.2}), gain {gain:+.4}",
            h.test.len(),
            best.1,
            best.0,
            baseline.1,
            baseline.0
        ),
    )
}

fn singleton_filtering() -> Outcome {
    let h = hard();
    let labels = h.test.labels().unwrap();
    let distractor_fraction =
        labels.iter().filter(|&&l| l == DISTRACTOR).count() as f64 / labels.len() as f64;
    let opts = ignoring_distractors();
    let (mut qualifying, mut violations) = (0, Vec::new());
    for (name, p) in operating_points(h.test.len(), &h.edges) {
        let (mask, removed) = filter_singletons(&p);
        if removed < distractor_fraction {
            continue;
        }
        qualifying += 1;
        let before = evaluate(labels, &p, &opts).unwrap().bcubed_f;
        let after = evaluate(
            labels,
            &p,
            &EvalOptions {
                mask: Some(mask),
                ..opts.clone()
            },
        )
        .unwrap()
        .bcubed_f;
        if after < before {
            violations.push(format!("{name}: {before:.4} -> {after:.4}"));
        }
    }
    let detail = format!(
        "{qualifying} operating points remove >= {:.1}% (distractor share), {} violations{}",
        distractor_fraction * 100.0,
        violations.len(),
        if violations.is_empty() {
            String::new()
        } else {
            format!(": {}", violations.join(", "))
        }
    );
    Outcome::new(qualifying > 0 && violations.is_empty(), detail)
}

fn scalability() -> Outcome {
    let h = hard();
    let cfg = IpsConfig::test_regime();
    let mut points = Vec::new();
    for target in [2000usize, 4000, 8000, 16000] {
        let fs = normalize_rows(synth_generate(&hard_spec(target / 66, 900 + target as u64)).unwrap()).unwrap();
        let (ips, nbrs) = neighbors_for(&fs, &cfg).unwrap();
        // Best of three, to damp interference from other processes.
        let secs = (0..3)
            .map(|_| {
                with_workers(1, || {
                    let t = Instant::now();
                    let preds = predict_links(&h.model, &fs, &nbrs, &ips).unwrap();
                    assert_eq!(preds.len(), fs.len());
                    t.elapsed().as_secs_f64()
                })
                .unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        points.push((fs.len() as f64, secs));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let table = points
        .iter()
        .map(|(n, s)| format!("N={n} {s:.2}s"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(slope <= 1.2, format!("exponent {slope:.3}; {table}"))
}

// ---------------------------------------------------------------------------
// 5

fn easy_set() -> Outcome {
    let spec = SynthSpec {
        num_identities: 2,
        samples_per_identity: (50, 50),
        dim: 8,
        noise_scale: (0.05, 0.05),
        seed: 1,
        ..SynthSpec::default()
    };
    let fs = normalize_rows(synth_generate(&spec).unwrap()).unwrap();
    let cfg = GcnConfig::new(8, Aggregator::Mean);
    let tc = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(GcnModel::new(&cfg, 1).unwrap(), &fs, &tc).unwrap();
    let loss = *out.loss_curve.last().unwrap();
    let clustered = cluster(&out.model, &fs, &IpsConfig::test_regime(), &MergeMode::default()).unwrap();
    let f = evaluate(fs.labels().unwrap(), &clustered.partition, &ignoring_distractors())
        .unwrap()
        .bcubed_f;
    Outcome::new(
        f >= 0.95 && loss < 0.1,
        format!("final loss {loss:.4}, pipeline F {f:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 6

fn aggregator_rows() -> Outcome {
    let mut rng = seeded(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=30);
        let d = rng.random_range(1..=8);
        let p = rng.random_range(0.0..0.6);
        let mut edges = Vec::new();
        for q in 0..n {
            for r in q + 1..n {
                if rng.random_bool(p) {
                    edges.push((q, r));
                }
            }
        }
        let adj = Adjacency::from_edges(n, edges);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
        let m = rng.random_range(1..=8);
        let mlp = AttentionMlp {
            hidden: Array2::from_shape_fn((2 * d, m), |_| rng.random_range(-2.0..2.0)),
            output: Array2::from_shape_fn((m, 1), |_| rng.random_range(-2.0..2.0)),
        };
        for g in [aggregate_weighted(&adj, x.view()), aggregate_attention(&adj, x.view(), &mlp)] {
            for q in 0..n {
                if adj.degree(q) > 0 {
                    worst = worst.max((g.row_sum(q) - 1.0).abs());
                }
            }
        }
    }
    Outcome::new(worst < 1e-6, format!("1000 draws, max |row sum - 1| {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 7

fn merge_correctness() -> Outcome {
    let mut rng = seeded(7);
    let mut problems = Vec::new();
    let mut max_iter = 0;
    for g in 0..100 {
        let n = rng.random_range(1..=500);
        let density = rng.random_range(1.0..6.0) / n as f64;
        let mut list = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density.min(1.0)) {
                    list.push((i, j, rng.random_range(0.0..1.0)));
                }
            }
        }
        let edges = WeightedEdgeSet::from_edges(list).unwrap();
        let schedule = PropagationSchedule {
            tau0: rng.random_range(0.0..0.95),
            step: rng.random_range(0.005..0.3),
            max_size: rng.random_range(1..=100),
        };
        let out = propagate_cluster(n, &edges, &schedule).unwrap();
        max_iter = max_iter.max(out.iterations);
        if out.iterations > schedule.max_iterations() {
            problems.push(format!("graph {g}: {} iterations", out.iterations));
        }
        let mut count = vec![0u32; n];
        for c in out.partition.clusters() {
            for v in c {
                count[v] += 1;
            }
        }
        if out.partition.len() != n || count.iter().any(|&c| c != 1) {
            problems.push(format!("graph {g}: assignment not total and unique"));
        }
        let sweep: Vec<Partition> = (0..=20)
            .map(|t| bfs_cluster(n, &edges, t as f64 / 20.0).unwrap())
            .collect();
        if sweep.windows(2).any(|w| !w[1].refines(&w[0])) {
            problems.push(format!("graph {g}: refinement violated"));
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("100 graphs, most iterations {max_iter}, refinement holds over 21 thresholds")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 10

fn pivotgcn(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pivotgcn"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs the whole command chain in `dir` and returns every output except timings.
fn command_outputs(dir: &Path, workers: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let (features, labels, model) = (p("features.fmat"), p("labels.lbls"), p("model.gcnm"));
    let common = ["--seed", "11", "--workers", workers];
    let quick = [
        "--set", "model.hidden_dims=8,8",
        "--set", "train.epochs=2",
        "--set", "train.k_per_hop=20,3",
        "--set", "train.u=3",
        "--set", "test.k_per_hop=20,3",
        "--set", "test.u=3",
    ];
    let with = |extra: &[&str]| -> Vec<String> {
        common.iter().chain(quick.iter()).chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |args: Vec<String>| pivotgcn(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with(&["synth", "--ids", "12", "--per-id", "10:40", "--dim", "8", "--outliers", "0.1"]))?;
    let data = ["--features", features.as_str(), "--labels", labels.as_str()];
    run(with(&[&data[..], &["train"]].concat()))?;
    run(with(&["--features", features.as_str(), "cluster", "--model", model.as_str()]))?;
    std::fs::rename(p("partition.tsv"), p("partition.cluster.tsv")).map_err(|e| e.to_string())?;
    let partition = p("partition.cluster.tsv");
    run(with(&["--labels", labels.as_str(), "eval", "--partition", partition.as_str(), "--drop-singletons"]))?;
    run(with(&[&data[..], &["upper-bound", "--k", "1,4,16"]].concat()))?;
    run(with(&["--features", features.as_str(), "baseline", "--k", "20", "--tau-sim", "0.6"]))?;

    let mut outputs = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        match name.as_str() {
            "timing.tsv" => continue,
            // The run record names the worker count it was given.
            "config.txt" => {
                let text = String::from_utf8_lossy(&bytes);
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("workers "))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            _ => {}
        }
        outputs.insert(name, bytes);
    }
    Ok(outputs)
}

fn toy_outputs(dir: &Path, workers: &str) -> Result<Vec<u8>, String> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    pivotgcn(dir, &["--seed", "5", "--workers", workers, "synth", "--ids", "3", "--per-id", "15:15", "--dim", "2"])?;
    pivotgcn(
        dir,
        &[
            "--seed", "5", "--workers", workers,
            "--features", &p("features.fmat"), "--labels", &p("labels.lbls"),
            "--set", "normalize=false",
            "toy2d", "--iterations", "20", "--record", "0,20",
        ],
    )?;
    std::fs::read(dir.join("trace.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, workers) in ["1", "1", "4"].into_iter().enumerate() {
        let dir = root.path().join(format!("run{i}"));
        std::fs::create_dir_all(&dir).unwrap();
        let outputs = match command_outputs(&dir, workers) {
            Ok(o) => o,
            Err(e) => return Outcome::new(false, e),
        };
        let toy_dir = dir.join("toy");
        std::fs::create_dir_all(&toy_dir).unwrap();
        let toy = match toy_outputs(&toy_dir, workers) {
            Ok(t) => t,
            Err(e) => return Outcome::new(false, e),
        };
        runs.push((outputs, toy));
    }
    let mut differing = Vec::new();
    for (label, other) in [("repeat", &runs[1]), ("4 workers", &runs[2])] {
        for (name, bytes) in &runs[0].0 {
            if other.0.get(name) != Some(bytes) {
                differing.push(format!("{name} ({label})"));
            }
        }
        if other.1 != runs[0].1 {
            differing.push(format!("trace.csv ({label})"));
        }
    }
    let files = runs[0].0.keys().cloned().collect::<Vec<_>>().join(", ");
    Outcome::new(
        differing.is_empty() && runs[0].0.contains_key("partition.cluster.tsv"),
        if differing.is_empty() {
            format!("byte-identical across repeats and 1 vs 4 workers: {files}, trace.csv")
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}
