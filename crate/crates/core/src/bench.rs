//! Wall-clock timing of training and seed-replay prediction.
//!
//! Training iteration `i` scores its batches by replaying all `i − 1` earlier
//! blocks, and prediction replays all `T` blocks, so training time grows like `T²`
//! and prediction time like `T` at fixed `m`. Each measurement is the minimum over
//! repeats to suppress scheduler noise.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::data::make_semi_split;
use crate::loss::{DerivativeConvention, UnlabeledLossKind};
use crate::rf::KernelSpec;
use crate::synthetic::two_gaussians;
use crate::trainer::{
    balanced_c_star, default_feature_count, pass_iterations, train, StepSchedule, TrainConfig,
    TrainError, DEFAULT_ETA,
};

pub const CSV_HEADER: &str = "axis,iterations,n,m,train_seconds,predict_seconds";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("nothing to benchmark: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// Feature count; `None` uses `⌈√n⌉`.
    pub m: Option<usize>,
    pub d: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub sigma: f64,
    pub seed: u64,
    pub repeats: usize,
    /// Points scored in each prediction measurement.
    pub predict_points: usize,
    /// Pool size used by the `T` sweep.
    pub n: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            m: Some(32),
            d: 5,
            batch_labeled: 1,
            batch_unlabeled: 1,
            sigma: 0.5,
            seed: 0,
            repeats: 3,
            predict_points: 100,
            n: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchAxis {
    Iterations,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub axis: BenchAxis,
    pub iterations: usize,
    pub n: usize,
    pub m: usize,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let axis = match r.axis {
            BenchAxis::Iterations => "iterations",
            BenchAxis::Size => "size",
        };
        let _ = writeln!(
            out,
            "{axis},{},{},{},{:.6},{:.6}",
            r.iterations, r.n, r.m, r.train_seconds, r.predict_seconds
        );
    }
    out
}

fn measure(cfg: &BenchConfig, axis: BenchAxis, n: usize, iterations: Option<usize>) -> Result<BenchRow, BenchError> {
    let n_labeled = (n / 10).max(2);
    let set = two_gaussians(n, cfg.d, 2.0, cfg.seed);
    let split = make_semi_split(&set.points, &set.labels, n_labeled, cfg.seed)
        .map_err(|e| BenchError::Other(e.to_string()))?;
    let data = &split.dataset;
    let probes = two_gaussians(cfg.predict_points, cfg.d, 2.0, cfg.seed.wrapping_add(1)).points;
    let kernel = KernelSpec::new(cfg.sigma).map_err(|e| BenchError::Other(e.to_string()))?;
    let tc = TrainConfig {
        c: 1.0,
        c_star: balanced_c_star(1.0, data.n_labeled(), data.n_unlabeled()),
        schedule: StepSchedule::Constant { eta: DEFAULT_ETA },
        iterations: iterations
            .unwrap_or_else(|| pass_iterations(data.n_unlabeled(), cfg.batch_unlabeled, 1.0)),
        batch_labeled: cfg.batch_labeled,
        batch_unlabeled: cfg.batch_unlabeled,
        loss: UnlabeledLossKind::Shg,
        convention: DerivativeConvention::SignCorrected,
        m: cfg.m.unwrap_or_else(|| default_feature_count(n)),
        kernel,
        base_seed: cfg.seed,
        data_seed: cfg.seed,
    };
    let mut best_train = Duration::MAX;
    let mut best_predict = Duration::MAX;
    for _ in 0..cfg.repeats.max(1) {
        let start = Instant::now();
        let model = train(&tc, data, None)?;
        best_train = best_train.min(start.elapsed());
        let start = Instant::now();
        std::hint::black_box(
            model
                .predict_scores(&probes)
                .map_err(|e| BenchError::Other(e.to_string()))?,
        );
        best_predict = best_predict.min(start.elapsed());
    }
    Ok(BenchRow {
        axis,
        iterations: tc.iterations,
        n,
        m: tc.m,
        train_seconds: best_train.as_secs_f64(),
        predict_seconds: best_predict.as_secs_f64(),
    })
}

/// Timing at each `T` in `iterations` on a pool of `cfg.n` points.
pub fn bench_iterations(cfg: &BenchConfig, iterations: &[usize]) -> Result<Vec<BenchRow>, BenchError> {
    if iterations.is_empty() {
        return Err(BenchError::Empty("no iteration counts given"));
    }
    iterations
        .iter()
        .map(|&t| measure(cfg, BenchAxis::Iterations, cfg.n, Some(t)))
        .collect()
}

/// Timing of a one-pass run at each pool size in `sizes`.
pub fn bench_sizes(cfg: &BenchConfig, sizes: &[usize]) -> Result<Vec<BenchRow>, BenchError> {
    if sizes.is_empty() {
        return Err(BenchError::Empty("no training sizes given"));
    }
    sizes
        .iter()
        .map(|&n| measure(cfg, BenchAxis::Size, n, None))
        .collect()
}
