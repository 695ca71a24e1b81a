//! Hyperparameter grid search with unlabeled k-fold cross-validation.
//!
//! The unlabeled pool is split into `k` subsets. Each fold trains on every labeled
//! point plus one subset and is scored on the hidden labels of the other subsets.
//! The search first scans `log₁₀C × log₁₀σ` at a fixed `η`, then scans `log₁₀η` at
//! the best `(C, σ)`. Cells are independent training runs and are evaluated in
//! parallel; results are collected in grid order, so the outcome does not depend
//! on the number of worker threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{kfold_unlabeled, DataError, SemiDataset, SemiSplit};
use crate::loss::{DerivativeConvention, UnlabeledLossKind};
use crate::rf::KernelSpec;
use crate::synthetic::error_rate;
use crate::trainer::{
    balanced_c_star, default_feature_count, pass_iterations, train, StepSchedule, TrainConfig,
    TrainError, DEFAULT_BATCH, DEFAULT_ETA,
};

pub const CSV_HEADER: &str = "stage,log10_c,log10_sigma,log10_eta,cv_error,status";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("{0}")]
    Input(String),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub log10_c: Vec<i32>,
    pub log10_sigma: Vec<i32>,
    pub log10_eta: Vec<i32>,
    /// Step parameter used while scanning `(C, σ)`.
    pub scan_eta: f64,
    pub folds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            log10_c: (-3..=3).collect(),
            log10_sigma: (-3..=3).collect(),
            log10_eta: (0..=3).collect(),
            scan_eta: DEFAULT_ETA,
            folds: 5,
        }
    }
}

/// Settings shared by every cell. Per-fold defaults (`m`, `T`, `C*`) are derived
/// from the fold's own training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grid: GridSpec,
    pub loss: UnlabeledLossKind,
    pub convention: DerivativeConvention,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub passes: f64,
    /// Fixed feature count; `None` uses `⌈√n⌉` of the fold.
    pub m: Option<usize>,
    /// Fixed `C*/C`; `None` uses the balanced `n_l/n_u` of the fold.
    pub c_star_ratio: Option<f64>,
    pub base_seed: u64,
    pub data_seed: u64,
    pub fold_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid: GridSpec::default(),
            loss: UnlabeledLossKind::Shg,
            convention: DerivativeConvention::SignCorrected,
            batch_labeled: DEFAULT_BATCH,
            batch_unlabeled: DEFAULT_BATCH,
            passes: 1.0,
            m: None,
            c_star_ratio: None,
            base_seed: 0,
            data_seed: 0,
            fold_seed: 0,
            jobs: 0,
        }
    }
}

impl SearchConfig {
    /// Training configuration of one cell on one fold's training set.
    pub fn cell_config(&self, train_set: &SemiDataset, c: f64, sigma: f64, eta: f64) -> Result<TrainConfig, TrainError> {
        let kernel = KernelSpec::new(sigma)?;
        let (n_l, n_u) = (train_set.n_labeled(), train_set.n_unlabeled());
        Ok(TrainConfig {
            c,
            c_star: self.c_star_ratio.map_or_else(|| balanced_c_star(c, n_l, n_u), |r| r * c),
            schedule: StepSchedule::Constant { eta },
            iterations: pass_iterations(n_u, self.batch_unlabeled, self.passes),
            batch_labeled: self.batch_labeled,
            batch_unlabeled: self.batch_unlabeled,
            loss: self.loss,
            convention: self.convention,
            m: self.m.unwrap_or_else(|| default_feature_count(n_l + n_u)),
            kernel,
            base_seed: self.base_seed,
            data_seed: self.data_seed,
        })
    }

    fn validate(&self) -> Result<(), SearchError> {
        let g = &self.grid;
        if g.log10_c.is_empty() || g.log10_sigma.is_empty() || g.log10_eta.is_empty() {
            return Err(SearchError::Config("every grid axis needs at least one value".into()));
        }
        if !(g.scan_eta.is_finite() && g.scan_eta >= 1.0) {
            return Err(SearchError::Config(format!("scan η={} must be >= 1", g.scan_eta)));
        }
        if g.log10_eta.iter().any(|&e| e < 0) {
            return Err(SearchError::Config("log10 η must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CSigma,
    Eta,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::CSigma => "c_sigma",
            Stage::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub stage: Stage,
    pub log10_c: i32,
    pub log10_sigma: i32,
    pub log10_eta: f64,
    /// Mean fold error; `NaN` when a fold diverged.
    pub cv_error: f64,
}

impl GridRow {
    pub fn c(&self) -> f64 {
        10f64.powi(self.log10_c)
    }

    pub fn sigma(&self) -> f64 {
        10f64.powi(self.log10_sigma)
    }

    pub fn eta(&self) -> f64 {
        10f64.powf(self.log10_eta)
    }

    fn status(&self) -> &'static str {
        if self.cv_error.is_nan() {
            "diverged"
        } else {
            "ok"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rows: Vec<GridRow>,
    pub best: GridRow,
}

impl SearchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.stage.as_str(),
                r.log10_c,
                r.log10_sigma,
                r.log10_eta,
                r.cv_error,
                r.status()
            );
        }
        out
    }
}

/// Mean error over folds for one hyperparameter cell; `NaN` if any fold diverges.
fn cv_error(cfg: &SearchConfig, folds: &[crate::data::Fold], c: f64, sigma: f64, eta: f64) -> Result<f64, SearchError> {
    let mut total = 0.0;
    for fold in folds {
        let tc = cfg
            .cell_config(&fold.train, c, sigma, eta)
            .map_err(|e| SearchError::Config(e.to_string()))?;
        let model = match train(&tc, &fold.train, None) {
            Ok(m) => m,
            Err(TrainError::Divergence { .. }) => return Ok(f64::NAN),
            Err(e) => return Err(SearchError::Config(e.to_string())),
        };
        let scores = model
            .predict_scores(&fold.test_points)
            .map_err(|e| SearchError::Input(e.to_string()))?;
        let predicted: Vec<_> = scores.into_iter().map(crate::loss::Label::from_score).collect();
        total += error_rate(&predicted, &fold.test_labels);
    }
    Ok(total / folds.len() as f64)
}

/// Index of the smallest finite error; the first one wins ties, so grid order
/// decides (smaller `C`, then smaller `σ`, then smaller `η`).
fn argmin(rows: &[GridRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.cv_error.is_nan() {
            continue;
        }
        if best.is_none_or(|b| r.cv_error < rows[b].cv_error) {
            best = Some(i);
        }
    }
    best
}

pub fn grid_search(split: &SemiSplit, cfg: &SearchConfig) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let folds = kfold_unlabeled(split, cfg.grid.folds, cfg.fold_seed)
        .map_err(|e| SearchError::Input(format!("infeasible folds: {e}")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| SearchError::Pool(e.to_string()))?;

    let cells: Vec<(i32, i32)> = cfg
        .grid
        .log10_c
        .iter()
        .flat_map(|&c| cfg.grid.log10_sigma.iter().map(move |&s| (c, s)))
        .collect();
    let scan_log_eta = cfg.grid.scan_eta.log10();
    let first: Vec<GridRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(lc, ls)| {
                let err = cv_error(cfg, &folds, 10f64.powi(lc), 10f64.powi(ls), cfg.grid.scan_eta)?;
                Ok(GridRow {
                    stage: Stage::CSigma,
                    log10_c: lc,
                    log10_sigma: ls,
                    log10_eta: scan_log_eta,
                    cv_error: err,
                })
            })
            .collect::<Result<_, SearchError>>()
    })?;
    let best_cell = first[argmin(&first).ok_or_else(|| SearchError::Input("every grid cell diverged".into()))?];

    let second: Vec<GridRow> = pool.install(|| {
        cfg.grid
            .log10_eta
            .par_iter()
            .map(|&le| {
                let err = cv_error(cfg, &folds, best_cell.c(), best_cell.sigma(), 10f64.powi(le))?;
                Ok(GridRow {
                    stage: Stage::Eta,
                    log10_eta: le as f64,
                    cv_error: err,
                    ..best_cell
                })
            })
            .collect::<Result<_, SearchError>>()
    })?;
    let best = argmin(&second).map_or(best_cell, |i| second[i]);
    let mut rows = first;
    rows.extend(second);
    Ok(SearchResult { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_semi_split;
    use crate::synthetic::separable;

    fn row(lc: i32, ls: i32, err: f64) -> GridRow {
        GridRow {
            stage: Stage::CSigma,
            log10_c: lc,
            log10_sigma: ls,
            log10_eta: 1.0,
            cv_error: err,
        }
    }

    #[test]
    fn ties_go_to_earlier_cells() {
        let rows = [row(-1, 0, 0.2), row(-1, 1, 0.1), row(0, -3, 0.1), row(0, 0, f64::NAN)];
        assert_eq!(argmin(&rows), Some(1));
        assert_eq!(argmin(&[row(0, 0, f64::NAN)]), None);
    }

    #[test]
    fn small_grid_counts_and_csv() {
        let s = separable(60, 2, 3);
        let split = make_semi_split(&s.points, &s.labels, 6, 1).unwrap();
        let cfg = SearchConfig {
            grid: GridSpec {
                log10_c: vec![0, 1],
                log10_sigma: vec![-1, 0],
                log10_eta: vec![0, 1],
                scan_eta: 10.0,
                folds: 3,
            },
            batch_labeled: 8,
            batch_unlabeled: 8,
            jobs: 1,
            ..SearchConfig::default()
        };
        let r = grid_search(&split, &cfg).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.to_csv().lines().count(), 7);
        assert_eq!(r.rows[4].stage, Stage::Eta);
        let again = grid_search(&split, &SearchConfig { jobs: 2, ..cfg.clone() }).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn infeasible_folds_are_input_errors() {
        let s = separable(8, 2, 3);
        let split = make_semi_split(&s.points, &s.labels, 6, 1).unwrap();
        assert!(matches!(
            grid_search(&split, &SearchConfig::default()),
            Err(SearchError::Input(_))
        ));
    }
}
