//! Independent reference implementations used as test oracles. Nothing here calls
//! the trainer, the loss module or the diagnostics engine.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg_core::data::SemiDataset;
use tsg_core::loss::{DerivativeConvention, Label, UnlabeledLossKind};
use tsg_core::rf::FeatureBlock;
use tsg_core::trainer::{StepSchedule, TrainConfig};

/// `sqrt(2/m)·cos(ωⱼ·x + bⱼ)` for every feature, written out from the block's raw
/// directions and phases.
pub fn features(block: &FeatureBlock, x: &[f64]) -> Vec<f64> {
    let m = block.m();
    (0..m)
        .map(|j| {
            let w = block.direction(j);
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + block.phases()[j];
            (2.0 / m as f64).sqrt() * arg.cos()
        })
        .collect()
}

pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sigma * d2).exp()
}

pub fn hinge_derivative(r: f64, y: f64) -> f64 {
    if y * r < 1.0 {
        -y
    } else {
        0.0
    }
}

pub fn hinge_value(r: f64, y: f64) -> f64 {
    (1.0 - y * r).max(0.0)
}

fn sgn(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r.signum()
    }
}

/// Sign-corrected unlabeled derivative.
pub fn unlabeled_derivative(kind: UnlabeledLossKind, r: f64) -> f64 {
    match kind {
        UnlabeledLossKind::Shg => {
            if r.abs() < 1.0 {
                -sgn(r)
            } else {
                0.0
            }
        }
        UnlabeledLossKind::Sshg => {
            if r.abs() < 1.0 {
                -(1.0 - r.abs()) * sgn(r)
            } else {
                0.0
            }
        }
        UnlabeledLossKind::Ramp { s } => {
            let inner = if r < 1.0 { -1.0 } else { 0.0 };
            let outer = if r < s { -1.0 } else { 0.0 };
            inner - outer
        }
        UnlabeledLossKind::Da => -10.0 * r * (-5.0 * r * r).exp(),
    }
}

pub fn unlabeled_value(kind: UnlabeledLossKind, r: f64) -> f64 {
    match kind {
        UnlabeledLossKind::Shg => (1.0 - r.abs()).max(0.0),
        UnlabeledLossKind::Sshg => 0.5 * (1.0 - r.abs()).max(0.0).powi(2),
        UnlabeledLossKind::Ramp { s } => (1.0 - r).max(0.0) - (s - r).max(0.0),
        UnlabeledLossKind::Da => (-5.0 * r * r).exp(),
    }
}

fn gamma(schedule: StepSchedule, t: usize) -> f64 {
    match schedule {
        StepSchedule::Constant { eta } => 1.0 / eta,
        StepSchedule::TheoremRate { theta } => theta / (t as f64).powf(0.75),
    }
}

/// Eager straight-line training: every iteration recomputes `f` from scratch and
/// rescales every earlier coefficient explicitly.
pub fn eager_train(cfg: &TrainConfig, data: &SemiDataset) -> Vec<Vec<f64>> {
    assert_eq!(cfg.convention, DerivativeConvention::SignCorrected);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let blocks: Vec<FeatureBlock> = (1..=cfg.iterations)
        .map(|i| FeatureBlock::spawn(cfg.base_seed, i as u64, cfg.m, data.d(), cfg.kernel).unwrap())
        .collect();
    let mut alphas: Vec<Vec<f64>> = Vec::new();
    for i in 0..cfg.iterations {
        let lab: Vec<usize> = (0..cfg.batch_labeled).map(|_| rng.random_range(0..data.n_labeled())).collect();
        let unl: Vec<usize> = (0..cfg.batch_unlabeled).map(|_| rng.random_range(0..data.n_unlabeled())).collect();
        let f = |x: &[f64]| -> f64 {
            alphas
                .iter()
                .zip(&blocks)
                .map(|(a, b)| a.iter().zip(features(b, x)).map(|(u, v)| u * v).sum::<f64>())
                .sum()
        };
        let g_step = gamma(cfg.schedule, cfg.iterations);
        let mut grad = vec![0.0; cfg.m];
        for &k in &lab {
            let (x, y) = &data.labeled()[k];
            let dv = hinge_derivative(f(x), y.value());
            if dv != 0.0 {
                for (g, p) in grad.iter_mut().zip(features(&blocks[i], x)) {
                    *g += cfg.c / lab.len() as f64 * dv * p;
                }
            }
        }
        for &k in &unl {
            let x = &data.unlabeled()[k];
            let dv = unlabeled_derivative(cfg.loss, f(x));
            if dv != 0.0 {
                for (g, p) in grad.iter_mut().zip(features(&blocks[i], x)) {
                    *g += cfg.c_star / unl.len() as f64 * dv * p;
                }
            }
        }
        for a in alphas.iter_mut() {
            for v in a.iter_mut() {
                *v *= 1.0 - g_step;
            }
        }
        alphas.push(grad.iter().map(|g| -g_step * g).collect());
    }
    alphas
}

/// `|a − b| ≤ tol·max(|a|, |b|)`, with an absolute floor for exact zeros.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-300
}

pub fn labels_of(values: &[f64]) -> Vec<Label> {
    values.iter().map(|&v| Label::try_from(v).unwrap()).collect()
}
