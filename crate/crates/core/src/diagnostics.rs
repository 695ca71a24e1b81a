//! Exact-kernel twin iterate and empirical checks of the convergence guarantees.
//!
//! The twin `h_t = Σⱼ βⱼ k(zⱼ, ·)` follows the same update as the trainer but with
//! the exact kernel section in place of the random-feature estimate. The loss
//! derivatives driving the twin are evaluated at the live trainer's scores `f_t`,
//! never at `h_t`, so the gap `f_t − h_t` isolates the feature-sampling error.
//!
//! [`run_diagnostics`] trains a model with the twin attached through the observer
//! hook and records one row per iterate: the squared gap on held-out probe points,
//! `‖h‖`, `‖∇R(h)‖²` and the objective `R(h)`. The derivative bounds give a hard
//! ceiling on `‖h‖`, which is checked at every iterate.
//!
//! The Lipschitz constant of the objective gradient is not computable from the loss
//! definitions, so the gradient-norm guarantee is checked as a decay trend across
//! runs unless the caller supplies an estimate of it.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::SemiDataset;
use crate::loss::{hinge_label, loss_bounds, unlabeled_with, Label};
use crate::model::{Model, ModelError};
use crate::rf::{rbf_unchecked, KernelSpec, RfError, FEATURE_PRODUCT_BOUND, KERNEL_BOUND};
use crate::trainer::{
    train, GradientSpec, IterationInfo, LossTerms, StepSchedule, TrainConfig, TrainError,
    TrainObserver, TrainState,
};

/// Largest kernel expansion [`rkhs_grad_norm`] will form.
pub const MAX_EXPANSION: usize = 4096;
/// Largest pool (labeled + unlabeled) for which [`run_diagnostics`] builds a Gram matrix.
pub const MAX_GRAM_POINTS: usize = 2048;

/// CSV header of the per-iterate diagnostic series.
pub const CSV_HEADER: &str = "iteration,gamma,gap_sq,h_norm,grad_norm_sq,grad_norm_sq_min,objective";

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{0}; subsample the data or shorten the run")]
    Resource(String),
    #[error("{0}")]
    Input(String),
    #[error("norm bound violated after {iteration} steps: ‖h‖ = {norm} > {bound}")]
    NormBound {
        iteration: usize,
        norm: f64,
        bound: f64,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Exact-kernel expansion `h = Σⱼ βⱼ k(zⱼ, ·)`.
///
/// Support points may carry a key (for example a pool index); adding a point under
/// an existing key accumulates into that point's weight instead of growing the
/// support set.
#[derive(Debug, Clone)]
pub struct KernelTwin {
    kernel: KernelSpec,
    d: Option<usize>,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    keys: Vec<Option<usize>>,
    by_key: HashMap<usize, usize>,
    max_support: usize,
}

impl KernelTwin {
    pub fn new(kernel: KernelSpec) -> Self {
        Self::with_limit(kernel, MAX_EXPANSION)
    }

    pub fn with_limit(kernel: KernelSpec, max_support: usize) -> Self {
        KernelTwin {
            kernel,
            d: None,
            points: Vec::new(),
            weights: Vec::new(),
            keys: Vec::new(),
            by_key: HashMap::new(),
            max_support,
        }
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn support_len(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn key(&self, index: usize) -> Option<usize> {
        self.keys[index]
    }

    pub fn weight_of_key(&self, key: usize) -> Option<f64> {
        self.by_key.get(&key).map(|&i| self.weights[i])
    }

    /// Multiplies every weight by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|b| *b *= factor);
    }

    /// Adds `weight · k(point, ·)` and returns the support index it landed on.
    pub fn add(&mut self, key: Option<usize>, point: &[f64], weight: f64) -> Result<usize, DiagnosticsError> {
        match self.d {
            Some(d) if d != point.len() => {
                return Err(DiagnosticsError::Input(format!(
                    "support point has dimension {}, expected {d}",
                    point.len()
                )))
            }
            None => self.d = Some(point.len()),
            _ => {}
        }
        if let Some(&i) = key.and_then(|k| self.by_key.get(&k)) {
            self.weights[i] += weight;
            return Ok(i);
        }
        if self.points.len() >= self.max_support {
            return Err(DiagnosticsError::Resource(format!(
                "twin support would exceed {} points",
                self.max_support
            )));
        }
        let i = self.points.len();
        self.points.push(point.to_vec());
        self.weights.push(weight);
        self.keys.push(key);
        if let Some(k) = key {
            self.by_key.insert(k, i);
        }
        Ok(i)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, DiagnosticsError> {
        if let Some(d) = self.d {
            if d != x.len() {
                return Err(RfError::DimensionMismatch { expected: d, got: x.len() }.into());
            }
        }
        Ok(self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(z, b)| b * rbf_unchecked(z, x, self.kernel.sigma()))
            .sum())
    }

    /// Row-major Gram matrix over the support points.
    pub fn gram(&self) -> Vec<f64> {
        gram_matrix(&self.points, self.kernel.sigma())
    }

    /// `‖h‖²_H = βᵀKβ`.
    pub fn norm_sq(&self) -> f64 {
        quadratic_form(&self.gram(), &self.weights)
    }
}

fn gram_matrix<P: AsRef<[f64]> + Sync>(points: &[P], sigma: f64) -> Vec<f64> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    k.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rbf_unchecked(points[i].as_ref(), points[j].as_ref(), sigma);
        }
    });
    k
}

fn quadratic_form(k: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    v.iter()
        .enumerate()
        .filter(|(_, vi)| **vi != 0.0)
        .map(|(i, vi)| vi * k[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// The samples and scores one twin update consumes.
#[derive(Debug, Clone, Copy)]
pub struct TwinSamples<'a> {
    pub labeled: &'a [(&'a [f64], Label)],
    pub unlabeled: &'a [&'a [f64]],
    /// Scores at which the labeled loss derivatives are taken.
    pub labeled_scores: &'a [f64],
    /// Scores at which the unlabeled loss derivatives are taken.
    pub unlabeled_scores: &'a [f64],
    pub labeled_keys: Option<&'a [usize]>,
    pub unlabeled_keys: Option<&'a [usize]>,
}

/// What a twin update changed.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinUpdate {
    pub terms: LossTerms,
    /// `(key, weight)` of every nonzero section added after the shrink.
    pub added: Vec<(Option<usize>, f64)>,
}

/// One exact-kernel step: shrinks all weights by `1 − γ`, then adds
/// `−γ·C·l′/b_l` at each labeled sample and `−γ·C*·u′/b_u` at each unlabeled sample.
/// Sections with a zero derivative are skipped.
pub fn twin_step(
    twin: &mut KernelTwin,
    spec: &GradientSpec,
    gamma: f64,
    samples: &TwinSamples<'_>,
) -> Result<TwinUpdate, DiagnosticsError> {
    let nl = samples.labeled.len();
    let nu = samples.unlabeled.len();
    if samples.labeled_scores.len() != nl || samples.unlabeled_scores.len() != nu {
        return Err(DiagnosticsError::Input("scores do not match samples".into()));
    }
    if samples.labeled_keys.is_some_and(|k| k.len() != nl)
        || samples.unlabeled_keys.is_some_and(|k| k.len() != nu)
    {
        return Err(DiagnosticsError::Input("keys do not match samples".into()));
    }
    let labels: Vec<Label> = samples.labeled.iter().map(|(_, y)| *y).collect();
    let terms = spec.loss_terms(&labels, samples.labeled_scores, samples.unlabeled_scores);
    twin.scale(1.0 - gamma);
    let mut added = Vec::new();
    for (j, ((x, _), dv)) in samples.labeled.iter().zip(&terms.labeled_derivs).enumerate() {
        let w = -gamma * spec.c * dv / nl as f64;
        if w != 0.0 {
            let key = samples.labeled_keys.map(|k| k[j]);
            twin.add(key, x, w)?;
            added.push((key, w));
        }
    }
    for (j, (x, dv)) in samples.unlabeled.iter().zip(&terms.unlabeled_derivs).enumerate() {
        let w = -gamma * spec.c_star * dv / nu as f64;
        if w != 0.0 {
            let key = samples.unlabeled_keys.map(|k| k[j]);
            twin.add(key, x, w)?;
            added.push((key, w));
        }
    }
    Ok(TwinUpdate { terms, added })
}

/// A function that can be scored pointwise and carries an (exact or surrogate)
/// squared norm.
pub trait FunctionView {
    fn score(&self, x: &[f64]) -> Result<f64, DiagnosticsError>;
    fn norm_sq(&self) -> f64;
}

impl FunctionView for KernelTwin {
    fn score(&self, x: &[f64]) -> Result<f64, DiagnosticsError> {
        self.evaluate(x)
    }

    fn norm_sq(&self) -> f64 {
        KernelTwin::norm_sq(self)
    }
}

/// The norm is the feature-space surrogate `Σᵢ‖αᵢ‖²`, which matches the RKHS norm
/// only in expectation over the feature draws.
impl FunctionView for Model {
    fn score(&self, x: &[f64]) -> Result<f64, DiagnosticsError> {
        Ok(self.predict_score(x)?)
    }

    fn norm_sq(&self) -> f64 {
        self.feature_norm_sq()
    }
}

impl FunctionView for TrainState {
    fn score(&self, x: &[f64]) -> Result<f64, DiagnosticsError> {
        Ok(self.scores(&[x])?[0])
    }

    fn norm_sq(&self) -> f64 {
        self.coefficient_norm().powi(2)
    }
}

/// Mean of `|f(p) − h(p)|²` over the probe points.
pub fn gap_estimate<F: FunctionView + ?Sized>(
    f: &F,
    twin: &KernelTwin,
    probes: &[Vec<f64>],
) -> Result<f64, DiagnosticsError> {
    if probes.is_empty() {
        return Err(DiagnosticsError::Input("gap estimate needs at least one probe".into()));
    }
    let mut acc = 0.0;
    for p in probes {
        let diff = f.score(p)? - twin.evaluate(p)?;
        acc += diff * diff;
    }
    Ok(acc / probes.len() as f64)
}

/// `R(f) = ½‖f‖² + C·meanₗ hinge + C*·meanᵤ u`.
pub fn objective_value<F: FunctionView + ?Sized>(
    f: &F,
    data: &SemiDataset,
    spec: &GradientSpec,
) -> Result<f64, DiagnosticsError> {
    let mut lab = 0.0;
    for (x, y) in data.labeled() {
        lab += hinge_label(f.score(x)?, *y).value;
    }
    let mut unl = 0.0;
    for x in data.unlabeled() {
        unl += unlabeled_with(spec.loss, f.score(x)?, spec.convention).value;
    }
    Ok(0.5 * f.norm_sq()
        + spec.c * mean(lab, data.n_labeled())
        + spec.c_star * mean(unl, data.n_unlabeled()))
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `‖∇R(h)‖²_H` where `∇R(h) = h + (C/n_l)Σ l′(h(x), y)k(x,·) + (C*/n_u)Σ u′(h(x))k(x,·)`,
/// formed as one expansion over the twin's support and every data point.
pub fn rkhs_grad_norm(twin: &KernelTwin, data: &SemiDataset, spec: &GradientSpec) -> Result<f64, DiagnosticsError> {
    let total = twin.support_len() + data.n();
    if total > MAX_EXPANSION {
        return Err(DiagnosticsError::Resource(format!(
            "gradient expansion has {total} points, limit is {MAX_EXPANSION}"
        )));
    }
    let mut points: Vec<&[f64]> = twin.points().iter().map(Vec::as_slice).collect();
    let mut coef: Vec<f64> = twin.weights().to_vec();
    let cl = spec.c / data.n_labeled().max(1) as f64;
    for (x, y) in data.labeled() {
        points.push(x);
        coef.push(cl * hinge_label(twin.evaluate(x)?, *y).derivative);
    }
    let cu = spec.c_star / data.n_unlabeled().max(1) as f64;
    for x in data.unlabeled() {
        points.push(x);
        coef.push(cu * unlabeled_with(spec.loss, twin.evaluate(x)?, spec.convention).derivative);
    }
    let sigma = twin.kernel().sigma();
    Ok(coef
        .par_iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, ci)| {
            ci * points
                .iter()
                .zip(&coef)
                .filter(|(_, c)| **c != 0.0)
                .map(|(z, cj)| cj * rbf_unchecked(points[i], z, sigma))
                .sum::<f64>()
        })
        .sum())
}

/// Constants entering the convergence guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Kernel bound `sup k(x, x)`.
    pub kappa: f64,
    /// Feature product bound `sup |φ_ω(x)φ_ω(x′)|`.
    pub phi: f64,
    /// `M = C·M_l + C*·M_u`, the bound on the loss-derivative part of the gradient.
    pub m: f64,
    /// `M′ = C·L′ + C*·U′` from the loss Lipschitz constants.
    pub m_prime: f64,
    pub theta: Option<f64>,
    pub iterations: usize,
    /// `θ²M²(√κ + √φ)²`; only meaningful for the `θ/T^{3/4}` schedule.
    pub d: Option<f64>,
}

impl TheoryConstants {
    /// Ceiling on `‖h_t‖`: `√κ·M`.
    pub fn norm_bound(&self) -> f64 {
        self.kappa.sqrt() * self.m
    }

    /// Gap bound `D/√T`.
    pub fn gap_bound(&self) -> Option<f64> {
        self.d.map(|d| d / (self.iterations as f64).sqrt())
    }

    /// `E/T^{1/4} + F/T^{3/4}` with `R*` replaced by its lower bound 0, given an
    /// estimate of the gradient Lipschitz constant `L`.
    pub fn grad_norm_bound(&self, r_h1: f64, lipschitz: f64) -> Option<f64> {
        let theta = self.theta?;
        let t = self.iterations as f64;
        let root = self.kappa.sqrt() + self.phi.sqrt();
        let e = r_h1 / theta + theta * self.m * self.m * self.m_prime * root * self.kappa;
        let f = 2.0 * theta * self.m * self.m * lipschitz * self.kappa;
        Some(e / t.powf(0.25) + f / t.powf(0.75))
    }
}

pub fn theory_constants(cfg: &TrainConfig) -> TheoryConstants {
    let b = loss_bounds(cfg.loss);
    let m = cfg.c * b.m_l + cfg.c_star * b.m_u;
    let theta = match cfg.schedule {
        StepSchedule::TheoremRate { theta } => Some(theta),
        StepSchedule::Constant { .. } => None,
    };
    let root = KERNEL_BOUND.sqrt() + FEATURE_PRODUCT_BOUND.sqrt();
    TheoryConstants {
        kappa: KERNEL_BOUND,
        phi: FEATURE_PRODUCT_BOUND,
        m,
        m_prime: cfg.c * b.l_prime + cfg.c_star * b.u_prime,
        theta,
        iterations: cfg.iterations,
        d: theta.map(|th| th * th * m * m * root * root),
    }
}

/// Which scores drive the twin's loss derivatives. [`CouplingMode::TwinScores`] is
/// the wrong coupling and exists so tests can show that it changes the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CouplingMode {
    #[default]
    TrainerScores,
    TwinScores,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsOptions {
    pub probes: Vec<Vec<f64>>,
    pub coupling: CouplingMode,
    /// Abort with [`DiagnosticsError::NormBound`] on the first norm-bound violation.
    pub fail_on_violation: bool,
    /// Estimate of the gradient Lipschitz constant; enables the absolute
    /// gradient-norm bound check.
    pub lipschitz: Option<f64>,
}

impl DiagnosticsOptions {
    pub fn new(probes: Vec<Vec<f64>>) -> Self {
        DiagnosticsOptions {
            probes,
            coupling: CouplingMode::TrainerScores,
            fail_on_violation: true,
            lipschitz: None,
        }
    }
}

/// Draws `count` probe points from `pool` without replacement on a dedicated stream.
pub fn sample_probes(pool: &[Vec<f64>], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, pool.len(), count.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// State after `iteration` completed updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRecord {
    pub iteration: usize,
    /// Step size of the update that produced this iterate (0 for the initial one).
    pub gamma: f64,
    pub gap_sq: f64,
    pub h_norm: f64,
    pub grad_norm_sq: f64,
    /// Running minimum of `grad_norm_sq`.
    pub grad_norm_sq_min: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub bound: Option<f64>,
    /// `None` when the check does not apply to this configuration.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub constants: TheoryConstants,
    pub coupling: CouplingMode,
    #[serde(skip)]
    pub records: Vec<DiagnosticRecord>,
    /// Mean squared gap between the finished model and the twin on the probes.
    pub final_gap_sq: f64,
    /// Mean of `‖∇R(h_t)‖²` over the iterates `h_1..h_T`.
    pub grad_norm_sq_mean: f64,
    pub grad_norm_sq_min: f64,
    pub norm_violations: usize,
    pub max_norm_ratio: f64,
    pub support_size: usize,
    /// Largest relative disagreement between the incremental caches and the
    /// direct recomputation at the end of the run.
    pub consistency_error: f64,
    pub checks: Vec<CheckResult>,
}

impl DiagnosticReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration, r.gamma, r.gap_sq, r.h_norm, r.grad_norm_sq, r.grad_norm_sq_min, r.objective
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }
}

pub struct DiagnosticRun {
    pub model: Model,
    pub report: DiagnosticReport,
}

/// Pool-indexed caches maintained in lockstep with training.
struct Tracker<'a> {
    data: &'a SemiDataset,
    spec: GradientSpec,
    opts: &'a DiagnosticsOptions,
    bound: f64,
    n_l: usize,
    gram: Vec<f64>,
    probe_gram: Vec<f64>,
    twin: KernelTwin,
    h_pool: Vec<f64>,
    h_probe: Vec<f64>,
    f_probe: Vec<f64>,
    grad_min: f64,
    records: Vec<DiagnosticRecord>,
    violations: usize,
    max_ratio: f64,
    error: Option<DiagnosticsError>,
}

impl<'a> Tracker<'a> {
    fn new(cfg: &TrainConfig, data: &'a SemiDataset, opts: &'a DiagnosticsOptions) -> Result<Self, DiagnosticsError> {
        let n = data.n();
        if n > MAX_GRAM_POINTS {
            return Err(DiagnosticsError::Resource(format!(
                "diagnostics need a {n}×{n} Gram matrix, limit is {MAX_GRAM_POINTS} points"
            )));
        }
        if opts.probes.is_empty() {
            return Err(DiagnosticsError::Input("diagnostics need at least one probe".into()));
        }
        if let Some(p) = opts.probes.iter().find(|p| p.len() != data.d()) {
            return Err(RfError::DimensionMismatch { expected: data.d(), got: p.len() }.into());
        }
        let sigma = cfg.kernel.sigma();
        let pool = pool_points(data);
        let gram = gram_matrix(&pool, sigma);
        let probe_gram: Vec<f64> = opts
            .probes
            .iter()
            .flat_map(|p| pool.iter().map(move |z| rbf_unchecked(p, z, sigma)))
            .collect();
        let mut tracker = Tracker {
            data,
            spec: cfg.gradient_spec(),
            opts,
            bound: theory_constants(cfg).norm_bound(),
            n_l: data.n_labeled(),
            gram,
            probe_gram,
            twin: KernelTwin::with_limit(cfg.kernel, n),
            h_pool: vec![0.0; n],
            h_probe: vec![0.0; opts.probes.len()],
            f_probe: vec![0.0; opts.probes.len()],
            grad_min: f64::INFINITY,
            records: Vec::with_capacity(cfg.iterations + 1),
            violations: 0,
            max_ratio: 0.0,
            error: None,
        };
        tracker.record(0, 0.0)?;
        Ok(tracker)
    }

    fn point(&self, key: usize) -> &'a [f64] {
        if key < self.n_l {
            &self.data.labeled()[key].0
        } else {
            &self.data.unlabeled()[key - self.n_l]
        }
    }

    /// Weights of the twin laid out over the pool.
    fn pool_weights(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.data.n()];
        for (i, b) in self.twin.weights().iter().enumerate() {
            beta[self.twin.key(i).expect("tracker keys every point")] += b;
        }
        beta
    }

    fn record(&mut self, iteration: usize, gamma: f64) -> Result<(), DiagnosticsError> {
        let n = self.data.n();
        let beta = self.pool_weights();
        let h_norm_sq: f64 = beta.iter().zip(&self.h_pool).map(|(b, h)| b * h).sum();
        let h_norm = h_norm_sq.max(0.0).sqrt();

        let n_u = n - self.n_l;
        let cl = self.spec.c / self.n_l.max(1) as f64;
        let cu = self.spec.c_star / n_u.max(1) as f64;
        let mut v = beta;
        let (mut lab_loss, mut unl_loss) = (0.0, 0.0);
        for (j, vj) in v.iter_mut().enumerate() {
            let h = self.h_pool[j];
            if j < self.n_l {
                let e = hinge_label(h, self.data.labeled()[j].1);
                lab_loss += e.value;
                *vj += cl * e.derivative;
            } else {
                let e = unlabeled_with(self.spec.loss, h, self.spec.convention);
                unl_loss += e.value;
                *vj += cu * e.derivative;
            }
        }
        let grad_norm_sq = quadratic_form(&self.gram, &v);
        self.grad_min = self.grad_min.min(grad_norm_sq);
        let objective = 0.5 * h_norm_sq
            + self.spec.c * mean(lab_loss, self.n_l)
            + self.spec.c_star * mean(unl_loss, n_u);
        let gap_sq = self
            .f_probe
            .iter()
            .zip(&self.h_probe)
            .map(|(f, h)| (f - h) * (f - h))
            .sum::<f64>()
            / self.f_probe.len() as f64;

        let tolerance = 1e-9 * self.bound.max(1.0);
        if h_norm > 0.0 {
            self.max_ratio = self.max_ratio.max(h_norm / self.bound);
        }
        if h_norm > self.bound + tolerance {
            self.violations += 1;
            if self.opts.fail_on_violation {
                return Err(DiagnosticsError::NormBound {
                    iteration,
                    norm: h_norm,
                    bound: self.bound,
                });
            }
        }
        self.records.push(DiagnosticRecord {
            iteration,
            gamma,
            gap_sq,
            h_norm,
            grad_norm_sq,
            grad_norm_sq_min: self.grad_min,
            objective,
        });
        Ok(())
    }

    fn step(&mut self, info: &IterationInfo<'_>) -> Result<(), DiagnosticsError> {
        let gamma = info.gamma;
        let shrink = 1.0 - gamma;
        for (f, p) in self.f_probe.iter_mut().zip(&self.opts.probes) {
            *f = shrink * *f + info.block.dot_features(&info.step.alpha, p)?;
        }

        let lab_keys: Vec<usize> = info.labeled_indices.to_vec();
        let unl_keys: Vec<usize> = info.unlabeled_indices.iter().map(|k| k + self.n_l).collect();
        let labeled: Vec<(&[f64], Label)> = lab_keys
            .iter()
            .map(|&k| (self.point(k), self.data.labeled()[k].1))
            .collect();
        let unlabeled: Vec<&[f64]> = unl_keys.iter().map(|&k| self.point(k)).collect();
        let (lab_scores, unl_scores) = match self.opts.coupling {
            CouplingMode::TrainerScores => (
                info.step.labeled_scores.clone(),
                info.step.unlabeled_scores.clone(),
            ),
            CouplingMode::TwinScores => (
                lab_keys.iter().map(|&k| self.h_pool[k]).collect(),
                unl_keys.iter().map(|&k| self.h_pool[k]).collect(),
            ),
        };
        let update = twin_step(
            &mut self.twin,
            &self.spec,
            gamma,
            &TwinSamples {
                labeled: &labeled,
                unlabeled: &unlabeled,
                labeled_scores: &lab_scores,
                unlabeled_scores: &unl_scores,
                labeled_keys: Some(&lab_keys),
                unlabeled_keys: Some(&unl_keys),
            },
        )?;

        let n = self.data.n();
        self.h_pool.iter_mut().for_each(|h| *h *= shrink);
        self.h_probe.iter_mut().for_each(|h| *h *= shrink);
        for (key, w) in update.added {
            let key = key.expect("tracker keys every point");
            for (h, k) in self.h_pool.iter_mut().zip(&self.gram[key * n..(key + 1) * n]) {
                *h += w * k;
            }
            for (p, h) in self.h_probe.iter_mut().enumerate() {
                *h += w * self.probe_gram[p * n + key];
            }
        }
        self.record(info.iteration, gamma)
    }
}

impl TrainObserver for Tracker<'_> {
    fn observe(&mut self, info: &IterationInfo<'_>) {
        if self.error.is_none() {
            if let Err(e) = self.step(info) {
                self.error = Some(e);
            }
        }
    }
}

fn pool_points(data: &SemiDataset) -> Vec<&[f64]> {
    data.labeled()
        .iter()
        .map(|(x, _)| x.as_slice())
        .chain(data.unlabeled().iter().map(Vec::as_slice))
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Trains `cfg` on `data` with the exact-kernel twin attached and returns the model
/// together with the per-iterate series and the end-of-run checks.
pub fn run_diagnostics(
    cfg: &TrainConfig,
    data: &SemiDataset,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticRun, DiagnosticsError> {
    cfg.validate()?;
    let mut tracker = Tracker::new(cfg, data, opts)?;
    let model = train(cfg, data, Some(&mut tracker))?;
    if let Some(e) = tracker.error.take() {
        return Err(e);
    }

    // End-of-run cross-check of the incremental caches against direct evaluation.
    let f_final = model.predict_scores(&opts.probes)?;
    let mut final_gap = 0.0;
    let mut consistency: f64 = 0.0;
    for ((f, fc), (p, hc)) in f_final
        .iter()
        .zip(&tracker.f_probe)
        .zip(opts.probes.iter().zip(&tracker.h_probe))
    {
        let h = tracker.twin.evaluate(p)?;
        final_gap += (f - h) * (f - h);
        consistency = consistency.max(relative_error(*f, *fc)).max(relative_error(h, *hc));
    }
    final_gap /= opts.probes.len() as f64;
    let last = *tracker.records.last().expect("initial record exists");
    if tracker.twin.support_len() + data.n() <= MAX_EXPANSION {
        let direct = rkhs_grad_norm(&tracker.twin, data, &cfg.gradient_spec())?;
        consistency = consistency.max(relative_error(direct, last.grad_norm_sq));
    }

    let constants = theory_constants(cfg);
    let records = std::mem::take(&mut tracker.records);
    let iterates = &records[..records.len().saturating_sub(1).max(1)];
    let grad_mean = iterates.iter().map(|r| r.grad_norm_sq).sum::<f64>() / iterates.len() as f64;
    let grad_min = iterates.iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min);

    let mut checks = vec![CheckResult {
        name: "norm_bound",
        value: tracker.max_ratio * constants.norm_bound(),
        bound: Some(constants.norm_bound()),
        pass: Some(tracker.violations == 0),
    }];
    let gap_bound = constants.gap_bound();
    checks.push(CheckResult {
        name: "gap_bound",
        value: final_gap,
        bound: gap_bound,
        pass: gap_bound.map(|b| final_gap <= b),
    });
    let grad_bound = opts
        .lipschitz
        .and_then(|l| constants.grad_norm_bound(records[0].objective, l));
    checks.push(CheckResult {
        name: "grad_norm_bound",
        value: grad_mean,
        bound: grad_bound,
        pass: grad_bound.map(|b| grad_mean <= b),
    });

    let report = DiagnosticReport {
        constants,
        coupling: opts.coupling,
        records,
        final_gap_sq: final_gap,
        grad_norm_sq_mean: grad_mean,
        grad_norm_sq_min: grad_min,
        norm_violations: tracker.violations,
        max_norm_ratio: tracker.max_ratio,
        support_size: tracker.twin.support_len(),
        consistency_error: consistency,
        checks,
    };
    Ok(DiagnosticRun { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{DerivativeConvention, UnlabeledLossKind};

    fn kernel() -> KernelSpec {
        KernelSpec::new(0.5).unwrap()
    }

    fn spec(c: f64, c_star: f64) -> GradientSpec {
        GradientSpec {
            c,
            c_star,
            loss: UnlabeledLossKind::Shg,
            convention: DerivativeConvention::SignCorrected,
        }
    }

    fn cfg(schedule: StepSchedule, c: f64, c_star: f64) -> TrainConfig {
        TrainConfig {
            c,
            c_star,
            schedule,
            iterations: 64,
            batch_labeled: 1,
            batch_unlabeled: 1,
            loss: UnlabeledLossKind::Shg,
            convention: DerivativeConvention::SignCorrected,
            m: 8,
            kernel: kernel(),
            base_seed: 1,
            data_seed: 2,
        }
    }

    fn tiny() -> SemiDataset {
        SemiDataset::new(
            2,
            vec![(vec![0.0, 0.0], Label::Neg), (vec![1.0, 1.0], Label::Pos)],
            (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn theory_constants_examples() {
        let c = theory_constants(&cfg(StepSchedule::TheoremRate { theta: 1.0 }, 1.0, 1.0));
        assert_eq!(c.m, 2.0);
        let d = c.d.unwrap();
        assert!((d - 4.0 * (1.0 + 2f64.sqrt()).powi(2)).abs() < 1e-12);
        assert!((d - 23.3137).abs() < 1e-4);
        assert!((c.gap_bound().unwrap() - 2.914).abs() < 1e-3);
        let c0 = theory_constants(&cfg(StepSchedule::TheoremRate { theta: 1.0 }, 3.0, 0.0));
        assert_eq!(c0.m, 3.0);
        assert_eq!(c0.m_prime, 3.0);
        let constant = theory_constants(&cfg(StepSchedule::Constant { eta: 10.0 }, 1.0, 1.0));
        assert_eq!(constant.m, 2.0);
        assert!(constant.d.is_none() && constant.gap_bound().is_none());
    }

    #[test]
    fn single_weight_norm() {
        let mut twin = KernelTwin::new(kernel());
        twin.add(None, &[0.3, -0.2], 0.7).unwrap();
        assert!((twin.norm_sq() - 0.49).abs() < 1e-15);
        let data = SemiDataset::new(2, vec![(vec![5.0, 5.0], Label::Pos)], vec![vec![-5.0, 5.0]]).unwrap();
        let g = rkhs_grad_norm(&twin, &data, &spec(0.0, 0.0)).unwrap();
        assert!((g - 0.49).abs() < 1e-15);
        assert_eq!(rkhs_grad_norm(&KernelTwin::new(kernel()), &data, &spec(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn keyed_support_accumulates() {
        let mut twin = KernelTwin::new(kernel());
        twin.add(Some(3), &[1.0], 0.5).unwrap();
        twin.add(Some(3), &[1.0], 0.25).unwrap();
        twin.add(None, &[1.0], 1.0).unwrap();
        assert_eq!(twin.support_len(), 2);
        assert_eq!(twin.weight_of_key(3), Some(0.75));
        assert!(matches!(twin.add(None, &[1.0, 2.0], 1.0), Err(DiagnosticsError::Input(_))));
        let mut capped = KernelTwin::with_limit(kernel(), 1);
        capped.add(None, &[0.0], 1.0).unwrap();
        assert!(matches!(capped.add(None, &[1.0], 1.0), Err(DiagnosticsError::Resource(_))));
    }

    #[test]
    fn zero_function_objective() {
        let data = tiny();
        let twin = KernelTwin::new(kernel());
        let r = objective_value(&twin, &data, &spec(2.0, 3.0)).unwrap();
        assert!((r - 5.0).abs() < 1e-15);
        let mut h = KernelTwin::new(kernel());
        h.add(None, &[0.5, 0.5], 2.0).unwrap();
        assert!((objective_value(&h, &data, &spec(0.0, 0.0)).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn first_twin_step_uses_exact_sections() {
        let mut twin = KernelTwin::new(kernel());
        let xl: &[f64] = &[0.2, 0.8];
        let xu: &[f64] = &[1.0, -1.0];
        let labeled = [(xl, Label::Pos)];
        let update = twin_step(
            &mut twin,
            &spec(1.0, 1.0),
            0.5,
            &TwinSamples {
                labeled: &labeled,
                unlabeled: &[xu],
                labeled_scores: &[0.0],
                unlabeled_scores: &[0.0],
                labeled_keys: None,
                unlabeled_keys: None,
            },
        )
        .unwrap();
        // l'(0, +1) = −1 gives weight 0.5; u'(0) = 0 adds nothing.
        assert_eq!(update.added, vec![(None, 0.5)]);
        let p = [0.1, 0.1];
        let expected = 0.5 * crate::rf::exact_rbf(xl, &p, kernel()).unwrap();
        assert!((twin.evaluate(&p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_subgradient_only_shrinks() {
        let mut twin = KernelTwin::new(kernel());
        twin.add(None, &[0.0], 1.0).unwrap();
        let xl: &[f64] = &[1.0];
        let labeled = [(xl, Label::Pos)];
        let update = twin_step(
            &mut twin,
            &spec(1.0, 1.0),
            0.25,
            &TwinSamples {
                labeled: &labeled,
                unlabeled: &[xl],
                labeled_scores: &[3.0],
                unlabeled_scores: &[3.0],
                labeled_keys: None,
                unlabeled_keys: None,
            },
        )
        .unwrap();
        assert!(update.added.is_empty());
        assert_eq!(twin.weights(), &[0.75]);
    }

    #[test]
    fn gap_starts_at_zero_and_needs_probes() {
        let state = TrainState::new(1, 4, 2, kernel()).unwrap();
        let twin = KernelTwin::new(kernel());
        assert_eq!(gap_estimate(&state, &twin, &[vec![0.1, 0.2]]).unwrap(), 0.0);
        assert!(gap_estimate(&state, &twin, &[]).is_err());
    }

    #[test]
    fn runner_caches_agree_with_direct_routes() {
        let data = tiny();
        let probes = vec![vec![0.3, 0.3], vec![0.9, 0.1]];
        let c = cfg(StepSchedule::TheoremRate { theta: 1.0 }, 1.0, 1.0);
        let run = run_diagnostics(&c, &data, &DiagnosticsOptions::new(probes.clone())).unwrap();
        let r = &run.report;
        assert_eq!(r.records.len(), 65);
        assert_eq!(r.records[0].gap_sq, 0.0);
        assert!(r.consistency_error < 1e-9, "{}", r.consistency_error);
        assert_eq!(r.norm_violations, 0);
        assert!(r.all_checks_pass());
        let plain = train(&c, &data, None).unwrap();
        assert_eq!(plain, run.model);
        let csv = r.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 66);
        assert!(r.summary_json().contains("\"norm_bound\""));
    }

    #[test]
    fn runner_rejects_oversized_pools_and_missing_probes() {
        let data = tiny();
        let c = cfg(StepSchedule::Constant { eta: 2.0 }, 1.0, 1.0);
        assert!(matches!(
            run_diagnostics(&c, &data, &DiagnosticsOptions::new(vec![])),
            Err(DiagnosticsError::Input(_))
        ));
        let big = SemiDataset::new(
            1,
            vec![(vec![0.0], Label::Pos)],
            (0..MAX_GRAM_POINTS).map(|i| vec![i as f64]).collect(),
        )
        .unwrap();
        assert!(matches!(
            run_diagnostics(&c, &big, &DiagnosticsOptions::new(vec![vec![0.0]])),
            Err(DiagnosticsError::Resource(_))
        ));
    }

    #[test]
    fn probes_are_deterministic_subsets() {
        let pool: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let a = sample_probes(&pool, 10, 9);
        assert_eq!(a, sample_probes(&pool, 10, 9));
        assert_eq!(a.len(), 10);
        assert_eq!(sample_probes(&pool, 100, 9).len(), 50);
    }
}
