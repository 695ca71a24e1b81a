//! Acceptance suite. Runs every criterion, prints one `PASS`/`FAIL` line each and
//! exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg_core::baseline::{train_frs, FrsConfig};
use tsg_core::bench::{bench_iterations, BenchConfig};
use tsg_core::data::make_semi_split;
use tsg_core::diagnostics::{run_diagnostics, DiagnosticsOptions};
use tsg_core::loss::{unlabeled, DerivativeConvention, Label, UnlabeledLossKind};
use tsg_core::rf::{exact_rbf, FeatureBlock, KernelSpec};
use tsg_core::search::{grid_search, SearchConfig};
use tsg_core::synthetic::{error_rate, separable, two_gaussians};
use tsg_core::trainer::{pass_iterations, train, StepSchedule, TrainConfig};
use tsg_core::Model;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn kernel_approximation() -> Outcome {
    let start = Instant::now();
    let spec = KernelSpec::new(1.0).unwrap();
    let (blocks, m) = (1000usize, 100usize);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
        .map(|_| {
            let x = (0..5).map(|_| rng.random::<f64>()).collect();
            let y = (0..5).map(|_| rng.random::<f64>()).collect();
            (x, y)
        })
        .collect();
    let mut sums = vec![0.0; pairs.len()];
    for b in 0..blocks {
        let block = FeatureBlock::spawn(42, b as u64, m, 5, spec).unwrap();
        for (s, (x, y)) in sums.iter_mut().zip(&pairs) {
            *s += block.approx_kernel(x, y).unwrap();
        }
    }
    let worst = pairs
        .iter()
        .zip(&sums)
        .map(|((x, y), s)| (s / blocks as f64 - exact_rbf(x, y, spec).unwrap()).abs())
        .fold(0.0, f64::max);
    let elapsed = secs(start.elapsed());
    outcome(
        worst < 0.02 && elapsed < 10.0,
        format!("max deviation {worst:.5} (< 0.02), N*m = {}, {elapsed:.2} s (< 10 s)", blocks * m),
    )
}

struct TheorySweep {
    iterations: usize,
    gap: f64,
    grad: f64,
    gap_bound: f64,
    violations: usize,
    max_ratio: f64,
    seconds: f64,
}

/// n_l = n_u = 200 two-Gaussian runs with SSHG, C = C* = 1 and θ = 1, over 20 seeds.
fn theory_sweep(t: usize) -> TheorySweep {
    let start = Instant::now();
    let (mut gap, mut grad, mut violations, mut max_ratio, mut gap_bound) = (0.0, 0.0, 0, 0.0f64, 0.0);
    for s in 0..20u64 {
        let set = two_gaussians(400, 5, 2.0, 900 + s);
        let split = make_semi_split(&set.points, &set.labels, 200, s).unwrap();
        let probes = two_gaussians(100, 5, 2.0, 7000 + s).points;
        let cfg = TrainConfig {
            c: 1.0,
            c_star: 1.0,
            schedule: StepSchedule::TheoremRate { theta: 1.0 },
            iterations: t,
            batch_labeled: 1,
            batch_unlabeled: 1,
            loss: UnlabeledLossKind::Sshg,
            convention: DerivativeConvention::SignCorrected,
            m: 20,
            kernel: KernelSpec::new(0.35).unwrap(),
            base_seed: s,
            data_seed: 1000 + s,
        };
        let mut opts = DiagnosticsOptions::new(probes);
        opts.fail_on_violation = false;
        let report = run_diagnostics(&cfg, &split.dataset, &opts).unwrap().report;
        gap += report.final_gap_sq;
        grad += report.grad_norm_sq_mean;
        violations += report.norm_violations;
        max_ratio = max_ratio.max(report.max_norm_ratio);
        gap_bound = report.constants.gap_bound().unwrap();
    }
    TheorySweep {
        iterations: t,
        gap: gap / 20.0,
        grad: grad / 20.0,
        gap_bound,
        violations,
        max_ratio,
        seconds: secs(start.elapsed()),
    }
}

fn gap_bound(sweeps: &[TheorySweep]) -> Outcome {
    let pick = |t| sweeps.iter().find(|s| s.iterations == t).unwrap();
    let (a, b) = (pick(64), pick(256));
    let seconds = a.seconds + b.seconds;
    let pass = a.gap <= a.gap_bound && b.gap <= b.gap_bound && b.gap < a.gap && seconds < 120.0;
    outcome(
        pass,
        format!(
            "T=64 gap {:.5} <= {:.3}, T=256 gap {:.5} <= {:.3}, decreasing, {seconds:.1} s (< 120 s)",
            a.gap, a.gap_bound, b.gap, b.gap_bound
        ),
    )
}

fn norm_bound(sweeps: &[TheorySweep]) -> Outcome {
    let violations: usize = sweeps.iter().map(|s| s.violations).sum();
    let ratio = sweeps.iter().map(|s| s.max_ratio).fold(0.0, f64::max);
    outcome(
        violations == 0,
        format!("{violations} violations over {} runs, max ||h||/bound {ratio:.3}", 20 * sweeps.len()),
    )
}

fn gradient_trend(sweeps: &[TheorySweep]) -> Outcome {
    let seconds: f64 = sweeps.iter().map(|s| s.seconds).sum();
    let decreasing = sweeps.windows(2).all(|w| w[1].grad < w[0].grad);
    let series: Vec<String> = sweeps.iter().map(|s| format!("T={} {:.5}", s.iterations, s.grad)).collect();
    outcome(
        decreasing && seconds < 180.0,
        format!("mean grad norm^2 {} strictly decreasing, {seconds:.1} s (< 180 s)", series.join(", ")),
    )
}

fn trainer_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let losses = [
        UnlabeledLossKind::Shg,
        UnlabeledLossKind::Sshg,
        UnlabeledLossKind::Ramp { s: -0.5 },
        UnlabeledLossKind::Da,
    ];
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n = rng.random_range(8..=64usize);
        let n_l = rng.random_range(2..=n / 2);
        let d = rng.random_range(1..=6usize);
        let set = two_gaussians(n, d, 1.5, rng.random());
        let split = make_semi_split(&set.points, &set.labels, n_l, rng.random()).unwrap();
        let schedule = if case % 3 == 0 {
            StepSchedule::TheoremRate { theta: rng.random_range(0.2..1.0) }
        } else {
            StepSchedule::Constant { eta: rng.random_range(1.0..20.0) }
        };
        let cfg = TrainConfig {
            c: rng.random_range(0.1..10.0),
            c_star: rng.random_range(0.0..5.0),
            schedule,
            iterations: rng.random_range(1..=32usize),
            batch_labeled: rng.random_range(1..=8usize),
            batch_unlabeled: rng.random_range(1..=8usize),
            loss: losses[case % 4],
            convention: DerivativeConvention::SignCorrected,
            m: rng.random_range(1..=8usize),
            kernel: KernelSpec::new(rng.random_range(0.05..2.0)).unwrap(),
            base_seed: rng.random(),
            data_seed: rng.random(),
        };
        let model = train(&cfg, &split.dataset, None).unwrap();
        let eager = common::eager_train(&cfg, &split.dataset);
        for (i, e) in eager.iter().enumerate() {
            for (a, b) in model.coefficient(i).iter().zip(e) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                if *a != *b {
                    worst = worst.max(rel);
                }
            }
        }
    }
    outcome(worst <= 1e-9, format!("10 random configurations, worst relative deviation {worst:.2e} (<= 1e-9)"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let set = two_gaussians(300, 5, 2.0, 3);
    let split = make_semi_split(&set.points, &set.labels, 30, 3).unwrap();
    let mut cfg = TrainConfig::defaults(30, 270, 1.0, KernelSpec::new(0.5).unwrap());
    cfg.iterations = 20;
    cfg.batch_labeled = 16;
    cfg.batch_unlabeled = 16;
    cfg.base_seed = 7;
    cfg.data_seed = 8;
    let run = |name: &str| {
        let path = dir.path().join(name);
        std::fs::write(&path, train(&cfg, &split.dataset, None).unwrap().to_bytes()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let model = Model::from_bytes(&bytes).unwrap();
        (bytes, model.predict_scores(&set.points).unwrap())
    };
    let (a, sa) = run("a.tsg");
    let (b, sb) = run("b.tsg");
    let same_scores = sa.iter().zip(&sb).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        a == b && same_scores,
        format!("model files {} bytes identical: {}, {} scores identical: {same_scores}", a.len(), a == b, sa.len()),
    )
}

fn loss_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10_000 {
        let r: f64 = rng.random_range(-3.0..3.0);
        if [-1.0f64, 0.0, 1.0].iter().any(|k| (r - k).abs() < 1e-3) {
            continue;
        }
        for k in [UnlabeledLossKind::Sshg, UnlabeledLossKind::Da] {
            let fd = (unlabeled(k, r + h).value - unlabeled(k, r - h).value) / (2.0 * h);
            worst = worst.max((unlabeled(k, r).derivative - fd).abs());
        }
        checked += 1;
    }
    let mut odd = true;
    for _ in 0..10_000 {
        let r: f64 = rng.random_range(-3.0..3.0);
        for k in [UnlabeledLossKind::Shg, UnlabeledLossKind::Sshg] {
            odd &= unlabeled(k, r).derivative == -unlabeled(k, -r).derivative;
        }
    }
    outcome(
        worst < 1e-6 && odd,
        format!("max |analytic - central difference| {worst:.2e} (< 1e-6) over 10^4 points, oddness exact: {odd}"),
    )
}

struct SuiteErrors {
    semi: f64,
    supervised: f64,
    frs: f64,
}

/// Two Gaussians at ±(2, 0, …) in d = 5: 4 labeled, 2000 unlabeled, 1000 test points,
/// 20 seeds. SHG, C = C* = 1, σ = 0.3, m = 128, five passes with batch 256.
fn synthetic_suite() -> SuiteErrors {
    let (mut semi, mut supervised, mut frs) = (0.0, 0.0, 0.0);
    let seeds = 20u64;
    for s in 0..seeds {
        let train_set = two_gaussians(2004, 5, 2.0, 100 + s);
        let test = two_gaussians(1000, 5, 2.0, 5000 + s);
        let split = make_semi_split(&train_set.points, &train_set.labels, 4, s).unwrap();
        let kernel = KernelSpec::new(0.3).unwrap();
        let passes = 5.0;
        let mut cfg = TrainConfig::defaults(4, 2000, 1.0, kernel);
        cfg.c_star = 1.0;
        cfg.m = 128;
        cfg.iterations = pass_iterations(2000, cfg.batch_unlabeled, passes);
        cfg.base_seed = s;
        cfg.data_seed = s + 77;
        let err = |pred: Vec<Label>| error_rate(&pred, &test.labels);
        let labels = |scores: Vec<f64>| scores.into_iter().map(Label::from_score).collect::<Vec<_>>();

        let model = train(&cfg, &split.dataset, None).unwrap();
        semi += err(labels(model.predict_scores(&test.points).unwrap()));
        let mut sup = cfg;
        sup.c_star = 0.0;
        let model = train(&sup, &split.dataset, None).unwrap();
        supervised += err(labels(model.predict_scores(&test.points).unwrap()));

        let fcfg = FrsConfig {
            c: cfg.c,
            c_star: cfg.c_star,
            schedule: cfg.schedule,
            passes,
            batch_labeled: cfg.batch_labeled,
            batch_unlabeled: cfg.batch_unlabeled,
            loss: cfg.loss,
            convention: cfg.convention,
            m_total: cfg.m * cfg.iterations,
            kernel,
            base_seed: s,
            data_seed: s + 77,
        };
        let fm = train_frs(&fcfg, &split.dataset).unwrap();
        frs += err(test.points.iter().map(|x| fm.predict_label(x).unwrap()).collect());
    }
    let n = seeds as f64;
    SuiteErrors {
        semi: semi / n,
        supervised: supervised / n,
        frs: frs / n,
    }
}

fn semi_supervised_gain(e: &SuiteErrors) -> Outcome {
    let gain = e.supervised - e.semi;
    outcome(
        gain >= 0.05,
        format!("semi {:.4} vs supervised {:.4}, gain {:.2} pp (>= 5 pp)", e.semi, e.supervised, 100.0 * gain),
    )
}

fn baseline_non_inferiority(e: &SuiteErrors) -> Outcome {
    outcome(
        e.semi <= e.frs + 0.02,
        format!("semi {:.4} <= FRS {:.4} + 0.02", e.semi, e.frs),
    )
}

fn complexity_scaling() -> Outcome {
    let cfg = BenchConfig {
        predict_points: 500,
        repeats: 5,
        ..BenchConfig::default()
    };
    let rows = bench_iterations(&cfg, &[1024, 2048]).unwrap();
    let train_ratio = rows[1].train_seconds / rows[0].train_seconds;
    let predict_ratio = rows[1].predict_seconds / rows[0].predict_seconds;
    outcome(
        (3.0..=5.0).contains(&train_ratio) && (1.6..=2.4).contains(&predict_ratio),
        format!(
            "m=32, train time ratio T=2048/T=1024 {train_ratio:.3} (in [3, 5]), prediction ratio {predict_ratio:.3} (in [1.6, 2.4])"
        ),
    )
}

fn grid_search_contract() -> Outcome {
    let set = separable(520, 5, 11);
    let split = make_semi_split(&set.points, &set.labels, 20, 3).unwrap();
    let serial = SearchConfig {
        jobs: 1,
        ..SearchConfig::default()
    };
    let parallel = SearchConfig {
        jobs: 4,
        ..SearchConfig::default()
    };
    let a = grid_search(&split, &serial).unwrap();
    let b = grid_search(&split, &parallel).unwrap();
    let deterministic = a.to_csv() == b.to_csv() && a.best == b.best;
    outcome(
        a.rows.len() == 53 && deterministic && a.best.cv_error < 0.05,
        format!(
            "{} rows (== 53), deterministic across 1 and 4 jobs: {deterministic}, best CV error {:.4} (< 0.05)",
            a.rows.len(),
            a.best.cv_error
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "kernel approximation", kernel_approximation()));
    let sweeps: Vec<TheorySweep> = [64, 128, 256].into_iter().map(theory_sweep).collect();
    results.push((2, "gap bound", gap_bound(&sweeps)));
    results.push((3, "norm bound", norm_bound(&sweeps)));
    results.push((4, "gradient norm trend", gradient_trend(&sweeps)));
    results.push((5, "trainer equivalence", trainer_equivalence()));
    results.push((6, "determinism", determinism()));
    results.push((7, "loss derivatives", loss_derivatives()));
    let suite = synthetic_suite();
    results.push((8, "semi-supervised gain", semi_supervised_gain(&suite)));
    results.push((9, "baseline non-inferiority", baseline_non_inferiority(&suite)));
    results.push((10, "complexity scaling", complexity_scaling()));
    results.push((11, "grid search contract", grid_search_contract()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
