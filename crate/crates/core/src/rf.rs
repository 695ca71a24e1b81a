//! Random Fourier features for the Gaussian RBF kernel `k(x, x') = exp(-σ‖x − x'‖²)`.
//!
//! Every iteration of training owns one [`FeatureBlock`] of `m` features. Blocks are
//! never stored: they are regenerated on demand from `(base_seed, iteration)`, so a
//! trained model only needs its coefficient vectors plus the seed.
//!
//! # Generator contract
//!
//! A block is drawn from a ChaCha8 stream keyed by `base_seed` (expanded with
//! `SeedableRng::seed_from_u64`) and selecting stream number `iteration`. Draw order:
//!
//! 1. the `m × d` direction matrix, row-major, each coordinate `N(0, 2σ)`;
//! 2. the `m` phases, each `2π·U[0, 1)`.
//!
//! Normals are `rand_distr::StandardNormal` (ziggurat) draws scaled by `sqrt(2σ)`.
//! Regeneration sits on the hot path of both training and prediction, and the
//! ziggurat needs no transcendental calls in the common case.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfError {
    #[error("invalid kernel bandwidth sigma={0} (must be finite and > 0)")]
    InvalidSigma(f64),
    #[error("invalid feature block shape: m={m}, d={d} (both must be >= 1)")]
    InvalidShape { m: usize, d: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Gaussian RBF kernel parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct KernelSpec {
    sigma: f64,
}

impl TryFrom<f64> for KernelSpec {
    type Error = RfError;

    fn try_from(sigma: f64) -> Result<Self, RfError> {
        KernelSpec::new(sigma)
    }
}

impl From<KernelSpec> for f64 {
    fn from(k: KernelSpec) -> f64 {
        k.sigma
    }
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self, RfError> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(KernelSpec { sigma })
        } else {
            Err(RfError::InvalidSigma(sigma))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Per-coordinate standard deviation of the spectral measure, `sqrt(2σ)`.
    pub fn spectral_std(&self) -> f64 {
        (2.0 * self.sigma).sqrt()
    }
}

/// Upper bound on the kernel value (`k(x, x') ≤ κ`).
pub const KERNEL_BOUND: f64 = 1.0;
/// Upper bound on a single-feature product `|2 cos(·) cos(·)|`.
pub const FEATURE_PRODUCT_BOUND: f64 = 2.0;

/// `m` random Fourier directions and phases for a single iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    iteration: u64,
    m: usize,
    d: usize,
    sigma: f64,
    directions: Vec<f64>,
    phases: Vec<f64>,
}

impl FeatureBlock {
    /// Regenerates the block of iteration `iteration`. Pure in all arguments.
    pub fn spawn(
        base_seed: u64,
        iteration: u64,
        m: usize,
        d: usize,
        spec: KernelSpec,
    ) -> Result<Self, RfError> {
        if m == 0 || d == 0 {
            return Err(RfError::InvalidShape { m, d });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(iteration);
        let std = spec.spectral_std();
        let directions: Vec<f64> = (0..m * d)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let phases = (0..m)
            .map(|_| {
                let p = TAU * rng.random::<f64>();
                if p >= TAU {
                    0.0
                } else {
                    p
                }
            })
            .collect();

        Ok(FeatureBlock {
            iteration,
            m,
            d,
            sigma: spec.sigma(),
            directions,
            phases,
        })
    }

    /// Builds a block from explicit directions (row-major `m × d`) and phases.
    pub fn from_parts(
        iteration: u64,
        d: usize,
        spec: KernelSpec,
        directions: Vec<f64>,
        phases: Vec<f64>,
    ) -> Result<Self, RfError> {
        let m = phases.len();
        if m == 0 || d == 0 {
            return Err(RfError::InvalidShape { m, d });
        }
        if directions.len() != m * d {
            return Err(RfError::DimensionMismatch {
                expected: m * d,
                got: directions.len(),
            });
        }
        Ok(FeatureBlock {
            iteration,
            m,
            d,
            sigma: spec.sigma(),
            directions,
            phases,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        &self.directions[j * self.d..(j + 1) * self.d]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), RfError> {
        if x.len() != self.d {
            Err(RfError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Feature scale `sqrt(2/m)`; also the bound on every feature entry.
    pub fn scale(&self) -> f64 {
        (2.0 / self.m as f64).sqrt()
    }

    /// `φ(x)_j = sqrt(2/m)·cos(ω_j·x + b_j)`.
    pub fn feature_vector(&self, x: &[f64]) -> Result<Vec<f64>, RfError> {
        let mut out = vec![0.0; self.m];
        self.feature_vector_into(x, &mut out)?;
        Ok(out)
    }

    pub fn feature_vector_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), RfError> {
        self.check_dim(x)?;
        if out.len() != self.m {
            return Err(RfError::DimensionMismatch {
                expected: self.m,
                got: out.len(),
            });
        }
        let scale = self.scale();
        for (j, o) in out.iter_mut().enumerate() {
            *o = scale * (dot(self.direction(j), x) + self.phases[j]).cos();
        }
        Ok(())
    }

    /// `⟨coef, φ(x)⟩` without materialising `φ(x)`.
    pub fn dot_features(&self, coef: &[f64], x: &[f64]) -> Result<f64, RfError> {
        self.check_dim(x)?;
        if coef.len() != self.m {
            return Err(RfError::DimensionMismatch {
                expected: self.m,
                got: coef.len(),
            });
        }
        let mut acc = 0.0;
        for (j, c) in coef.iter().enumerate() {
            acc += c * (dot(self.direction(j), x) + self.phases[j]).cos();
        }
        Ok(self.scale() * acc)
    }

    /// Inner product of the two feature vectors; always within `[-2, 2]`.
    pub fn approx_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64, RfError> {
        let fx = self.feature_vector(x)?;
        let fy = self.feature_vector(y)?;
        Ok(dot(&fx, &fy))
    }
}

/// `exp(−σ‖x − x'‖²)`.
pub fn exact_rbf(x: &[f64], y: &[f64], spec: KernelSpec) -> Result<f64, RfError> {
    if x.len() != y.len() {
        return Err(RfError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(rbf_unchecked(x, y, spec.sigma()))
}

#[inline]
pub(crate) fn rbf_unchecked(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sigma * sq).exp()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
