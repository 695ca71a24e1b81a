//! Fixed-random-feature baseline: plain SGD on a linear model over one block of
//! `m_total` random Fourier features drawn once before training.
//!
//! Uses the same losses, batch averaging and composite gradient as the TSG trainer,
//! so the only difference between the two is feature freshness.
//!
//! File format `FRS1` (little-endian): magic, `u32` version, `u64` d, `u64` m_total,
//! `f64` σ, `u64` block seed, 10-byte loss tag, then `m_total` `f64` weights.

use serde::{Deserialize, Serialize};

use crate::data::SemiDataset;
use crate::loss::{DerivativeConvention, Label, UnlabeledLossKind};
use crate::model::{decode_loss, encode_loss, Cursor, FormatError, FORMAT_VERSION};
use crate::rf::{FeatureBlock, KernelSpec, RfError};
use crate::trainer::{
    pass_iterations, step_size, BatchSampler, GradientSpec, StepSchedule, TrainError,
};

pub const FRS_MAGIC: &[u8; 4] = b"FRS1";
/// Iteration index reserved for the baseline's single block; TSG blocks start at 1.
pub const FIXED_BLOCK_INDEX: u64 = 0;
pub const DEFAULT_PASSES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrsConfig {
    pub c: f64,
    pub c_star: f64,
    pub schedule: StepSchedule,
    /// Passes over the unlabeled pool.
    pub passes: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub loss: UnlabeledLossKind,
    #[serde(default)]
    pub convention: DerivativeConvention,
    pub m_total: usize,
    pub kernel: KernelSpec,
    pub base_seed: u64,
    pub data_seed: u64,
}

impl FrsConfig {
    /// Total SGD steps for a pool of `n_unlabeled` points.
    pub fn steps(&self, n_unlabeled: usize) -> usize {
        pass_iterations(n_unlabeled, self.batch_unlabeled, self.passes)
    }

    fn validate(&self, steps: usize) -> Result<(), TrainError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(TrainError::Config(format!("C={} must be > 0", self.c)));
        }
        if !(self.c_star.is_finite() && self.c_star >= 0.0) {
            return Err(TrainError::Config(format!("C*={} must be >= 0", self.c_star)));
        }
        if self.m_total == 0 || self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(TrainError::Config("m_total and batch sizes must be >= 1".into()));
        }
        if !(self.passes.is_finite() && self.passes >= 0.0) {
            return Err(TrainError::Config(format!("passes={} must be >= 0", self.passes)));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if steps > 0 {
            step_size(self.schedule, 1, steps)?;
        }
        Ok(())
    }
}

/// Linear model `⟨w, φ(x)⟩` over a single regenerable feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRfModel {
    base_seed: u64,
    d: usize,
    kernel: KernelSpec,
    loss: UnlabeledLossKind,
    convention: DerivativeConvention,
    weights: Vec<f64>,
    block: FeatureBlock,
}

impl LinearRfModel {
    pub fn new(
        base_seed: u64,
        d: usize,
        kernel: KernelSpec,
        loss: UnlabeledLossKind,
        convention: DerivativeConvention,
        weights: Vec<f64>,
    ) -> Result<Self, RfError> {
        let block = FeatureBlock::spawn(base_seed, FIXED_BLOCK_INDEX, weights.len(), d, kernel)?;
        Ok(LinearRfModel {
            base_seed,
            d,
            kernel,
            loss,
            convention,
            weights,
            block,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn block(&self) -> &FeatureBlock {
        &self.block
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m_total(&self) -> usize {
        self.weights.len()
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64, RfError> {
        self.block.dot_features(&self.weights, x)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<Label, RfError> {
        Ok(Label::from_score(self.predict_score(x)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(50 + 8 * self.weights.len());
        out.extend_from_slice(FRS_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.kernel.sigma().to_le_bytes());
        out.extend_from_slice(&self.base_seed.to_le_bytes());
        out.extend_from_slice(&encode_loss(self.loss, self.convention));
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut cur = Cursor::new(bytes);
        cur.magic(FRS_MAGIC)?;
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let d = cur.usize("d")?;
        let m_total = cur.usize("m_total")?;
        let sigma = cur.f64("sigma")?;
        let base_seed = cur.u64("block seed")?;
        let (loss, convention) = decode_loss(cur.take(10, "loss tag")?)?;
        let kernel =
            KernelSpec::new(sigma).map_err(|e| FormatError::CorruptHeader(e.to_string()))?;
        if m_total == 0 || d == 0 {
            return Err(FormatError::CorruptHeader(format!("m_total={m_total}, d={d}")));
        }
        if cur.remaining() / 8 < m_total {
            return Err(FormatError::Truncated("weights"));
        }
        let weights = (0..m_total)
            .map(|_| cur.f64("weights"))
            .collect::<Result<Vec<_>, _>>()?;
        if cur.remaining() != 0 {
            return Err(FormatError::TrailingBytes);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FormatError::CorruptHeader("non-finite weight".into()));
        }
        LinearRfModel::new(base_seed, d, kernel, loss, convention, weights)
            .map_err(|e| FormatError::CorruptHeader(e.to_string()))
    }
}

/// Trains the fixed-feature baseline for `cfg.passes` passes over the unlabeled pool.
pub fn train_frs(cfg: &FrsConfig, data: &SemiDataset) -> Result<LinearRfModel, TrainError> {
    if data.n_labeled() == 0 || data.n_unlabeled() == 0 {
        return Err(TrainError::Input(format!(
            "need labeled and unlabeled points, got {} and {}",
            data.n_labeled(),
            data.n_unlabeled()
        )));
    }
    let steps = cfg.steps(data.n_unlabeled());
    cfg.validate(steps)?;
    let block = FeatureBlock::spawn(cfg.base_seed, FIXED_BLOCK_INDEX, cfg.m_total, data.d(), cfg.kernel)?;

    // Features are fixed, so every point is mapped once up front.
    let lab_phi = data
        .labeled()
        .iter()
        .map(|(x, _)| block.feature_vector(x))
        .collect::<Result<Vec<_>, _>>()?;
    let unl_phi = data
        .unlabeled()
        .iter()
        .map(|x| block.feature_vector(x))
        .collect::<Result<Vec<_>, _>>()?;

    let spec = GradientSpec {
        c: cfg.c,
        c_star: cfg.c_star,
        loss: cfg.loss,
        convention: cfg.convention,
    };
    let steps_per_epoch = pass_iterations(data.n_unlabeled(), cfg.batch_unlabeled, 1.0).max(1);
    let mut w = vec![0.0; cfg.m_total];
    let mut sampler = BatchSampler::new(cfg.data_seed);
    for step in 1..=steps {
        let gamma = step_size(cfg.schedule, step, steps)?;
        let (lab_idx, unl_idx) = sampler.next_batches(
            data.n_labeled(),
            cfg.batch_labeled,
            data.n_unlabeled(),
            cfg.batch_unlabeled,
        );
        let dot = |phi: &Vec<f64>| phi.iter().zip(&w).map(|(p, c)| p * c).sum::<f64>();
        let lab_scores: Vec<f64> = lab_idx.iter().map(|&k| dot(&lab_phi[k])).collect();
        let unl_scores: Vec<f64> = unl_idx.iter().map(|&k| dot(&unl_phi[k])).collect();
        let labels: Vec<Label> = lab_idx.iter().map(|&k| data.labeled()[k].1).collect();
        let terms = spec.loss_terms(&labels, &lab_scores, &unl_scores);
        let grad = spec.combine(
            cfg.m_total,
            lab_idx.iter().map(|&k| lab_phi[k].as_slice()),
            unl_idx.iter().map(|&k| unl_phi[k].as_slice()),
            &terms,
        );
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi = (1.0 - gamma) * *wi - gamma * g;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Divergence {
                iteration: step,
                what: format!("non-finite weights in epoch {}", (step - 1) / steps_per_epoch + 1),
            });
        }
    }
    Ok(LinearRfModel {
        base_seed: cfg.base_seed,
        d: data.d(),
        kernel: cfg.kernel,
        loss: cfg.loss,
        convention: cfg.convention,
        weights: w,
        block,
    })
}
