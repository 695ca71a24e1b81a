//! Triply stochastic functional gradient training.
//!
//! Iteration `i` samples a labeled batch, an unlabeled batch and the feature block of
//! iteration `i`, evaluates the in-progress function on the sampled points, and
//! appends
//!
//! ```text
//! αᵢ = −γᵢ · (C·meanₗ l'(f(xˡ), yˡ)·φᵢ(xˡ) + C*·meanᵤ u'(f(xᵘ))·φᵢ(xᵘ))
//! ```
//!
//! while every earlier coefficient shrinks by `(1 − γᵢ)`. The shrink is applied
//! lazily: coefficients are stored divided by the running product
//! `Pᵢ = Π_{k≤i}(1 − γ_k)` and only folded back (eager flush) when a factor falls
//! below [`FLUSH_FACTOR`] or the product would underflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SemiDataset;
use crate::loss::{hinge_label, unlabeled_with, DerivativeConvention, Label, UnlabeledLossKind};
use crate::model::Model;
use crate::rf::{FeatureBlock, KernelSpec, RfError};

/// Shrink factors below this trigger an eager flush.
pub const FLUSH_FACTOR: f64 = 1e-3;
const MIN_SCALE: f64 = 1e-100;

/// Mini-batch size used when nothing else is configured.
pub const DEFAULT_BATCH: usize = 256;
/// Default `η` of the constant schedule (`γ = 1/η`).
pub const DEFAULT_ETA: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("diverged at iteration {iteration}: {what}")]
    Divergence { iteration: usize, what: String },
    #[error(transparent)]
    Rf(#[from] RfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `γ = 1/η` for every iteration.
    Constant { eta: f64 },
    /// `γ = θ / T^{3/4}` for every iteration.
    TheoremRate { theta: f64 },
}

/// Step size of iteration `i` (1-based) out of `t`. Both schedules are constant in
/// `i`; the argument is kept so the signature covers iteration-dependent schedules.
pub fn step_size(schedule: StepSchedule, _i: usize, t: usize) -> Result<f64, TrainError> {
    let gamma = match schedule {
        StepSchedule::Constant { eta } => {
            if !(eta.is_finite() && eta >= 1.0) {
                return Err(TrainError::Config(format!("eta={eta} must be finite and >= 1")));
            }
            1.0 / eta
        }
        StepSchedule::TheoremRate { theta } => {
            if !(theta.is_finite() && theta > 0.0) {
                return Err(TrainError::Config(format!("theta={theta} must be > 0")));
            }
            if t == 0 {
                return Err(TrainError::Config("theorem rate needs T >= 1".into()));
            }
            theta / (t as f64).powf(0.75)
        }
    };
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(gamma)
    } else {
        Err(TrainError::Config(format!("step size {gamma} outside (0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c: f64,
    pub c_star: f64,
    pub schedule: StepSchedule,
    /// Number of iterations `T`.
    pub iterations: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub loss: UnlabeledLossKind,
    #[serde(default)]
    pub convention: DerivativeConvention,
    /// Random features per iteration.
    pub m: usize,
    pub kernel: KernelSpec,
    /// Seed of the feature stream.
    pub base_seed: u64,
    /// Seed of instance sampling.
    pub data_seed: u64,
}

/// `⌈√n⌉`.
pub fn default_feature_count(n: usize) -> usize {
    let mut m = (n as f64).sqrt().ceil() as usize;
    while m * m < n {
        m += 1;
    }
    while m > 1 && (m - 1) * (m - 1) >= n {
        m -= 1;
    }
    m.max(1)
}

/// Iterations needed to sweep the unlabeled pool `passes` times with batches of `batch`.
pub fn pass_iterations(n_unlabeled: usize, batch: usize, passes: f64) -> usize {
    ((passes * n_unlabeled as f64) / batch.max(1) as f64).ceil() as usize
}

impl TrainConfig {
    /// Defaults for a dataset with `n_l` labeled and `n_u` unlabeled points:
    /// batch 256, `m = ⌈√n⌉`, one pass over the unlabeled pool, `C* = C·n_l/n_u`,
    /// SHG unlabeled loss, `γ = 1/10`.
    pub fn defaults(n_l: usize, n_u: usize, c: f64, kernel: KernelSpec) -> Self {
        TrainConfig {
            c,
            c_star: balanced_c_star(c, n_l, n_u),
            schedule: StepSchedule::Constant { eta: DEFAULT_ETA },
            iterations: pass_iterations(n_u, DEFAULT_BATCH, 1.0),
            batch_labeled: DEFAULT_BATCH,
            batch_unlabeled: DEFAULT_BATCH,
            loss: UnlabeledLossKind::Shg,
            convention: DerivativeConvention::SignCorrected,
            m: default_feature_count(n_l + n_u),
            kernel,
            base_seed: 0,
            data_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(TrainError::Config(format!("C={} must be > 0", self.c)));
        }
        if !(self.c_star.is_finite() && self.c_star >= 0.0) {
            return Err(TrainError::Config(format!("C*={} must be >= 0", self.c_star)));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(TrainError::Config("batch sizes must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(TrainError::Config("m must be >= 1".into()));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if self.iterations > 0 {
            step_size(self.schedule, 1, self.iterations)?;
        }
        Ok(())
    }

    pub fn gradient_spec(&self) -> GradientSpec {
        GradientSpec {
            c: self.c,
            c_star: self.c_star,
            loss: self.loss,
            convention: self.convention,
        }
    }
}

/// `C·n_l/n_u`, or 0 for an empty unlabeled pool.
pub fn balanced_c_star(c: f64, n_l: usize, n_u: usize) -> f64 {
    if n_u == 0 {
        0.0
    } else {
        c * n_l as f64 / n_u as f64
    }
}

/// Loss weights and unlabeled loss shared by the TSG trainer and the fixed-feature
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSpec {
    pub c: f64,
    pub c_star: f64,
    pub loss: UnlabeledLossKind,
    pub convention: DerivativeConvention,
}

/// Loss derivatives at the current scores plus the batch objective estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub labeled_derivs: Vec<f64>,
    pub unlabeled_derivs: Vec<f64>,
    /// `C·meanₗ hinge + C*·meanᵤ u` at the scores.
    pub batch_loss: f64,
}

impl GradientSpec {
    pub fn loss_terms(
        &self,
        labels: &[Label],
        labeled_scores: &[f64],
        unlabeled_scores: &[f64],
    ) -> LossTerms {
        let mut lab_loss = 0.0;
        let labeled_derivs = labeled_scores
            .iter()
            .zip(labels)
            .map(|(&r, &y)| {
                let e = hinge_label(r, y);
                lab_loss += e.value;
                e.derivative
            })
            .collect();
        let mut unl_loss = 0.0;
        let unlabeled_derivs = unlabeled_scores
            .iter()
            .map(|&r| {
                let e = unlabeled_with(self.loss, r, self.convention);
                unl_loss += e.value;
                e.derivative
            })
            .collect();
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        LossTerms {
            labeled_derivs,
            unlabeled_derivs,
            batch_loss: self.c * mean(lab_loss, labels.len())
                + self.c_star * mean(unl_loss, unlabeled_scores.len()),
        }
    }

    /// `C·meanₗ l'·φ(xˡ) + C*·meanᵤ u'·φ(xᵘ)` in the coordinates of `block`.
    pub fn feature_gradient(
        &self,
        block: &FeatureBlock,
        labeled: &[&[f64]],
        unlabeled: &[&[f64]],
        terms: &LossTerms,
    ) -> Result<Vec<f64>, RfError> {
        let features = |points: &[&[f64]], derivs: &[f64]| -> Result<Vec<Vec<f64>>, RfError> {
            points
                .iter()
                .zip(derivs)
                .map(|(x, &dv)| {
                    if dv == 0.0 {
                        Ok(Vec::new())
                    } else {
                        block.feature_vector(x)
                    }
                })
                .collect()
        };
        let lab = features(labeled, &terms.labeled_derivs)?;
        let unl = features(unlabeled, &terms.unlabeled_derivs)?;
        Ok(self.combine(
            block.m(),
            lab.iter().map(Vec::as_slice),
            unl.iter().map(Vec::as_slice),
            terms,
        ))
    }

    /// Same combination from precomputed feature vectors. Entries whose derivative is
    /// zero are skipped and may be empty.
    pub fn combine<'a>(
        &self,
        m: usize,
        labeled: impl ExactSizeIterator<Item = &'a [f64]>,
        unlabeled: impl ExactSizeIterator<Item = &'a [f64]>,
        terms: &LossTerms,
    ) -> Vec<f64> {
        fn add<'a>(
            grad: &mut [f64],
            weight: f64,
            derivs: &[f64],
            phis: impl ExactSizeIterator<Item = &'a [f64]>,
        ) {
            let n = phis.len();
            if n == 0 || weight == 0.0 {
                return;
            }
            let w = weight / n as f64;
            for (phi, &dv) in phis.zip(derivs) {
                if dv == 0.0 {
                    continue;
                }
                for (g, p) in grad.iter_mut().zip(phi) {
                    *g += w * dv * p;
                }
            }
        }
        let mut grad = vec![0.0; m];
        add(&mut grad, self.c, &terms.labeled_derivs, labeled);
        add(&mut grad, self.c_star, &terms.unlabeled_derivs, unlabeled);
        grad
    }
}

/// In-progress coefficients with the lazily applied global shrink.
#[derive(Debug, Clone)]
pub struct TrainState {
    base_seed: u64,
    m: usize,
    d: usize,
    kernel: KernelSpec,
    /// Stored coefficients; the eager value is `scale · stored`.
    stored: Vec<f64>,
    scale: f64,
    stored_sq: f64,
    flushes: usize,
}

impl TrainState {
    pub fn new(base_seed: u64, m: usize, d: usize, kernel: KernelSpec) -> Result<Self, TrainError> {
        if m == 0 || d == 0 {
            return Err(RfError::InvalidShape { m, d }.into());
        }
        Ok(TrainState {
            base_seed,
            m,
            d,
            kernel,
            stored: Vec::new(),
            scale: 1.0,
            stored_sq: 0.0,
            flushes: 0,
        })
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.stored.len() / self.m
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of eager flushes performed so far.
    pub fn flushes(&self) -> usize {
        self.flushes
    }

    /// Feature block of the 1-based iteration `i`.
    pub fn block(&self, i: usize) -> Result<FeatureBlock, RfError> {
        FeatureBlock::spawn(self.base_seed, i as u64, self.m, self.d, self.kernel)
    }

    /// Eager coefficient of the 1-based iteration `i`.
    pub fn coefficient(&self, i: usize) -> Vec<f64> {
        self.stored[(i - 1) * self.m..i * self.m]
            .iter()
            .map(|u| self.scale * u)
            .collect()
    }

    pub fn eager_coefficients(&self) -> Vec<Vec<f64>> {
        (1..=self.iteration()).map(|i| self.coefficient(i)).collect()
    }

    /// `sqrt(Σᵢ ‖αᵢ‖²)`.
    pub fn coefficient_norm(&self) -> f64 {
        self.scale * self.stored_sq.sqrt()
    }

    /// Current function values, regenerating each earlier block once for all points.
    pub fn scores(&self, points: &[&[f64]]) -> Result<Vec<f64>, RfError> {
        let mut acc = vec![0.0; points.len()];
        for (j, u) in self.stored.chunks_exact(self.m).enumerate() {
            let block = self.block(j + 1)?;
            for (a, x) in acc.iter_mut().zip(points) {
                *a += block.dot_features(u, x)?;
            }
        }
        for a in &mut acc {
            *a *= self.scale;
        }
        Ok(acc)
    }

    /// Appends `alpha` as the newest coefficient and shrinks all earlier ones by
    /// `1 − gamma`.
    pub fn push(&mut self, alpha: &[f64], gamma: f64) {
        debug_assert_eq!(alpha.len(), self.m);
        let factor = 1.0 - gamma;
        if factor < FLUSH_FACTOR || self.scale * factor < MIN_SCALE {
            let s = self.scale * factor;
            self.stored.iter_mut().for_each(|u| *u *= s);
            self.scale = 1.0;
            self.flushes += 1;
            self.stored.extend_from_slice(alpha);
            self.stored_sq = self.stored.iter().map(|u| u * u).sum();
        } else {
            self.scale *= factor;
            let inv = 1.0 / self.scale;
            for a in alpha {
                let u = a * inv;
                self.stored_sq += u * u;
                self.stored.push(u);
            }
        }
    }

    pub fn into_model(
        self,
        loss: UnlabeledLossKind,
        convention: DerivativeConvention,
    ) -> Result<Model, TrainError> {
        let scale = self.scale;
        let flat = self.stored.into_iter().map(|u| u * scale).collect();
        Model::from_flat(self.base_seed, self.m, self.d, self.kernel, loss, convention, flat)
            .map_err(|e| TrainError::Divergence {
                iteration: 0,
                what: e.to_string(),
            })
    }
}

/// Everything computed during one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub gamma: f64,
    /// `f_i` at the labeled batch.
    pub labeled_scores: Vec<f64>,
    /// `f_i` at the unlabeled batch.
    pub unlabeled_scores: Vec<f64>,
    pub terms: LossTerms,
    /// Feature-space gradient `gᵢ`.
    pub gradient: Vec<f64>,
    /// The appended coefficient `αᵢ = −γᵢ gᵢ`.
    pub alpha: Vec<f64>,
}

fn check_finite(values: &[f64], iteration: usize, what: &str) -> Result<(), TrainError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::Divergence {
            iteration,
            what: format!("non-finite {what}"),
        })
    }
}

/// One TSG iteration on the given batches with the block of the next iteration.
pub fn tsg_step(
    state: &mut TrainState,
    labeled: &[(&[f64], Label)],
    unlabeled: &[&[f64]],
    block: &FeatureBlock,
    cfg: &TrainConfig,
) -> Result<StepReport, TrainError> {
    let iteration = state.iteration() + 1;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(TrainError::Input("batches must be nonempty".into()));
    }
    if block.iteration() != iteration as u64 || block.m() != state.m || block.d() != state.d {
        return Err(TrainError::Input(format!(
            "block for iteration {} (m={}, d={}) does not match iteration {iteration} (m={}, d={})",
            block.iteration(),
            block.m(),
            block.d(),
            state.m,
            state.d
        )));
    }
    let gamma = step_size(cfg.schedule, iteration, cfg.iterations.max(iteration))?;

    let lab_points: Vec<&[f64]> = labeled.iter().map(|(x, _)| *x).collect();
    let labels: Vec<Label> = labeled.iter().map(|(_, y)| *y).collect();
    // One replay pass over the earlier blocks scores both batches.
    let all: Vec<&[f64]> = lab_points.iter().chain(unlabeled).copied().collect();
    let mut labeled_scores = state.scores(&all)?;
    let unlabeled_scores = labeled_scores.split_off(lab_points.len());
    check_finite(&labeled_scores, iteration, "labeled score")?;
    check_finite(&unlabeled_scores, iteration, "unlabeled score")?;

    let spec = cfg.gradient_spec();
    let terms = spec.loss_terms(&labels, &labeled_scores, &unlabeled_scores);
    let gradient = spec.feature_gradient(block, &lab_points, unlabeled, &terms)?;
    let alpha: Vec<f64> = gradient.iter().map(|g| -gamma * g).collect();
    check_finite(&alpha, iteration, "coefficient")?;
    state.push(&alpha, gamma);

    Ok(StepReport {
        iteration,
        gamma,
        labeled_scores,
        unlabeled_scores,
        terms,
        gradient,
        alpha,
    })
}

/// Uniform with-replacement sampling of batch indices. Per iteration, all labeled
/// indices are drawn first, then all unlabeled ones, each via
/// `Rng::random_range(0..n)` on a ChaCha8 stream seeded with the data seed.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(data_seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(data_seed),
        }
    }

    pub fn draw(&mut self, n: usize, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.rng.random_range(0..n)).collect()
    }

    /// `(labeled indices, unlabeled indices)` for one iteration.
    pub fn next_batches(&mut self, n_l: usize, b_l: usize, n_u: usize, b_u: usize) -> (Vec<usize>, Vec<usize>) {
        let lab = self.draw(n_l, b_l);
        let unl = self.draw(n_u, b_u);
        (lab, unl)
    }
}

/// Per-iteration view handed to a [`TrainObserver`].
pub struct IterationInfo<'a> {
    pub iteration: usize,
    pub gamma: f64,
    pub batch_loss: f64,
    pub coefficient_norm: f64,
    pub labeled_indices: &'a [usize],
    pub unlabeled_indices: &'a [usize],
    pub step: &'a StepReport,
    pub block: &'a FeatureBlock,
    /// State after the update, i.e. `f_{i+1}`.
    pub state: &'a TrainState,
}

pub trait TrainObserver {
    fn observe(&mut self, info: &IterationInfo<'_>);
}

impl<F: FnMut(&IterationInfo<'_>)> TrainObserver for F {
    fn observe(&mut self, info: &IterationInfo<'_>) {
        self(info)
    }
}

pub fn train(
    cfg: &TrainConfig,
    data: &SemiDataset,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<Model, TrainError> {
    cfg.validate()?;
    if data.n_labeled() == 0 || data.n_unlabeled() == 0 {
        return Err(TrainError::Input(format!(
            "need labeled and unlabeled points, got {} and {}",
            data.n_labeled(),
            data.n_unlabeled()
        )));
    }
    let mut state = TrainState::new(cfg.base_seed, cfg.m, data.d(), cfg.kernel)?;
    let mut sampler = BatchSampler::new(cfg.data_seed);
    for i in 1..=cfg.iterations {
        let (lab_idx, unl_idx) = sampler.next_batches(
            data.n_labeled(),
            cfg.batch_labeled,
            data.n_unlabeled(),
            cfg.batch_unlabeled,
        );
        let labeled: Vec<(&[f64], Label)> = lab_idx
            .iter()
            .map(|&k| {
                let (x, y) = &data.labeled()[k];
                (x.as_slice(), *y)
            })
            .collect();
        let unlabeled: Vec<&[f64]> = unl_idx.iter().map(|&k| data.unlabeled()[k].as_slice()).collect();
        let block = state.block(i)?;
        let step = tsg_step(&mut state, &labeled, &unlabeled, &block, cfg)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs.observe(&IterationInfo {
                iteration: i,
                gamma: step.gamma,
                batch_loss: step.terms.batch_loss,
                coefficient_norm: state.coefficient_norm(),
                labeled_indices: &lab_idx,
                unlabeled_indices: &unl_idx,
                step: &step,
                block: &block,
                state: &state,
            });
        }
    }
    state.into_model(cfg.loss, cfg.convention)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> KernelSpec {
        KernelSpec::new(1.0).unwrap()
    }

    fn cfg(t: usize) -> TrainConfig {
        TrainConfig {
            c: 1.0,
            c_star: 1.0,
            schedule: StepSchedule::Constant { eta: 2.0 },
            iterations: t,
            batch_labeled: 1,
            batch_unlabeled: 1,
            loss: UnlabeledLossKind::Shg,
            convention: DerivativeConvention::SignCorrected,
            m: 4,
            kernel: kernel(),
            base_seed: 3,
            data_seed: 4,
        }
    }

    #[test]
    fn step_sizes() {
        let g = step_size(StepSchedule::TheoremRate { theta: 1.0 }, 1, 16).unwrap();
        assert!((g - 0.125).abs() < 1e-15);
        assert_eq!(step_size(StepSchedule::Constant { eta: 10.0 }, 7, 100).unwrap(), 0.1);
        assert_eq!(step_size(StepSchedule::Constant { eta: 10.0 }, 99, 100).unwrap(), 0.1);
        let theta = 81f64.powf(0.75);
        assert_eq!(step_size(StepSchedule::TheoremRate { theta }, 1, 81).unwrap(), 1.0);
        assert!(step_size(StepSchedule::TheoremRate { theta: theta * 1.01 }, 1, 81).is_err());
        assert!(step_size(StepSchedule::Constant { eta: 0.5 }, 1, 1).is_err());
        assert!(step_size(StepSchedule::Constant { eta: f64::NAN }, 1, 1).is_err());
        assert!(step_size(StepSchedule::TheoremRate { theta: 0.0 }, 1, 1).is_err());
    }

    #[test]
    fn feature_count_is_ceil_sqrt() {
        assert_eq!(default_feature_count(1000), 32);
        assert_eq!(default_feature_count(1024), 32);
        assert_eq!(default_feature_count(1025), 33);
        assert_eq!(default_feature_count(400), 20);
        assert_eq!(default_feature_count(1), 1);
        assert_eq!(default_feature_count(0), 1);
    }

    #[test]
    fn protocol_defaults() {
        let c = TrainConfig::defaults(200, 800, 2.0, kernel());
        assert_eq!(c.iterations, 4);
        assert_eq!(c.m, 32);
        assert_eq!(c.batch_labeled, 256);
        assert_eq!(c.c_star, 0.5);
        assert_eq!(c.loss, UnlabeledLossKind::Shg);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut c = cfg(4);
        c.c = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg(4);
        c.c_star = -1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(4);
        c.batch_unlabeled = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(4);
        c.loss = UnlabeledLossKind::Ramp { s: 2.0 };
        assert!(c.validate().is_err());
        let mut c = cfg(0);
        c.schedule = StepSchedule::TheoremRate { theta: 1.0 };
        c.validate().unwrap();
    }

    #[test]
    fn first_step_hand_trace() {
        let xl = [0.3, -0.2];
        let xu = [1.5, 0.4];
        let mut c = cfg(1);
        c.m = 5;
        let mut state = TrainState::new(c.base_seed, c.m, 2, kernel()).unwrap();
        let block = state.block(1).unwrap();
        let rep = tsg_step(&mut state, &[(&xl, Label::Pos)], &[&xu], &block, &c).unwrap();
        assert_eq!(rep.gamma, 0.5);
        assert_eq!(rep.labeled_scores, vec![0.0]);
        // l'(0, +1) = −1 and u'(0) = 0, so α₁ = 0.5·φ₁(xˡ).
        let phi = block.feature_vector(&xl).unwrap();
        for (a, p) in state.coefficient(1).iter().zip(&phi) {
            assert!((a - 0.5 * p).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_subgradient_regime_only_shrinks() {
        let c = cfg(2);
        let mut state = TrainState::new(c.base_seed, c.m, 1, kernel()).unwrap();
        state.push(&[3.0, -2.0, 1.0, 4.0], 0.5);
        let block = state.block(2).unwrap();
        let before = state.coefficient(1);
        // Find points whose scores sit outside the margin band.
        let mut far_pos = None;
        let mut far_any = None;
        for k in 0..4000 {
            let x = [k as f64 * 0.01 - 20.0];
            let s = state.scores(&[&x]).unwrap()[0];
            if s >= 1.0 && far_pos.is_none() {
                far_pos = Some(x);
            }
            if s.abs() >= 1.0 && far_any.is_none() {
                far_any = Some(x);
            }
        }
        let (xl, xu) = (far_pos.unwrap(), far_any.unwrap());
        let rep = tsg_step(&mut state, &[(&xl, Label::Pos)], &[&xu], &block, &c).unwrap();
        assert!(rep.gradient.iter().all(|&g| g == 0.0));
        assert!(state.coefficient(2).iter().all(|&a| a == 0.0));
        for (a, b) in state.coefficient(1).iter().zip(&before) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_batch_equals_single() {
        let c = cfg(1);
        let xl = [0.1];
        let xu = [0.7];
        let mut s1 = TrainState::new(0, 4, 1, kernel()).unwrap();
        s1.push(&[0.2, 0.1, -0.3, 0.5], 0.5);
        let mut s2 = s1.clone();
        let block = s1.block(2).unwrap();
        let mut c2 = c;
        c2.iterations = 2;
        tsg_step(&mut s1, &[(&xl, Label::Neg)], &[&xu], &block, &c2).unwrap();
        tsg_step(&mut s2, &[(&xl, Label::Neg), (&xl, Label::Neg)], &[&xu, &xu], &block, &c2).unwrap();
        for (a, b) in s1.coefficient(2).iter().zip(&s2.coefficient(2)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_rejects_mismatched_block_and_empty_batches() {
        let c = cfg(2);
        let mut state = TrainState::new(0, 4, 1, kernel()).unwrap();
        let wrong = state.block(2).unwrap();
        let x = [0.0];
        assert!(matches!(
            tsg_step(&mut state, &[(&x, Label::Pos)], &[&x], &wrong, &c),
            Err(TrainError::Input(_))
        ));
        let right = state.block(1).unwrap();
        assert!(tsg_step(&mut state, &[], &[&x], &right, &c).is_err());
    }

    #[test]
    fn lazy_flush_on_unit_step() {
        let mut state = TrainState::new(0, 2, 1, kernel()).unwrap();
        state.push(&[1.0, 2.0], 0.5);
        state.push(&[3.0, 4.0], 0.5);
        state.push(&[5.0, 6.0], 1.0);
        assert_eq!(state.flushes(), 1);
        assert_eq!(state.scale(), 1.0);
        assert_eq!(state.eager_coefficients(), vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 6.0]]);
        state.push(&[1.0, 1.0], 0.25);
        assert_eq!(state.coefficient(3), vec![3.75, 4.5]);
        let norm = (3.75f64.powi(2) + 4.5f64.powi(2) + 2.0).sqrt();
        assert!((state.coefficient_norm() - norm).abs() < 1e-12);
    }

    #[test]
    fn underflow_guard() {
        let mut state = TrainState::new(0, 1, 1, kernel()).unwrap();
        for _ in 0..2000 {
            state.push(&[1.0], 0.5);
        }
        assert!(state.flushes() > 0);
        let last = state.coefficient(2000)[0];
        let prev = state.coefficient(1999)[0];
        assert_eq!(last, 1.0);
        assert!((prev - 0.5).abs() < 1e-15);
        assert!(state.eager_coefficients().iter().all(|a| a[0].is_finite()));
    }

    #[test]
    fn sampler_order_is_labeled_then_unlabeled() {
        let mut a = BatchSampler::new(9);
        let (l, u) = a.next_batches(5, 3, 100, 2);
        let mut b = BatchSampler::new(9);
        assert_eq!(b.draw(5, 3), l);
        assert_eq!(b.draw(100, 2), u);
        assert!(l.iter().all(|&i| i < 5));
    }
}
