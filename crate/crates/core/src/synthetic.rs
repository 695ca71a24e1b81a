//! Seeded synthetic binary problems for tests, benchmarks and the CLI's `--synthetic`
//! inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::loss::Label;

/// Points with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.random::<bool>() {
        Label::Pos
    } else {
        Label::Neg
    }
}

/// Two unit-covariance Gaussians centred at `±(shift, 0, …, 0)` with equal class
/// priors. The Bayes error is `Φ(−shift)`.
pub fn two_gaussians(n: usize, d: usize, shift: f64, seed: u64) -> Labeled {
    assert!(d >= 1, "dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = random_label(&mut rng);
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        x[0] += y.value() * shift;
        points.push(x);
        labels.push(y);
    }
    Labeled { points, labels }
}

/// Two balls of radius 1 centred at `±(3, 0, …, 0)`, so the classes are separated
/// by a gap of width 4 around the hyperplane `x₀ = 0`.
pub fn separable(n: usize, d: usize, seed: u64) -> Labeled {
    assert!(d >= 1, "dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = random_label(&mut rng);
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        let mut x: Vec<f64> = dir.iter().map(|v| v / norm * radius).collect();
        x[0] += 3.0 * y.value();
        points.push(x);
        labels.push(y);
    }
    Labeled { points, labels }
}

/// Fraction of `predicted` that disagree with `truth`.
pub fn error_rate(predicted: &[Label], truth: &[Label]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    wrong as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussians_are_centred_by_class() {
        let s = two_gaussians(4000, 3, 2.0, 1);
        let mean = |y: Label| {
            let xs: Vec<f64> = s
                .points
                .iter()
                .zip(&s.labels)
                .filter(|(_, l)| **l == y)
                .map(|(x, _)| x[0])
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!((mean(Label::Pos) - 2.0).abs() < 0.1);
        assert!((mean(Label::Neg) + 2.0).abs() < 0.1);
        assert_eq!(s, two_gaussians(4000, 3, 2.0, 1));
    }

    #[test]
    fn separable_has_margin() {
        let s = separable(500, 4, 2);
        for (x, y) in s.points.iter().zip(&s.labels) {
            assert!(x[0] * y.value() >= 2.0 - 1e-12);
        }
    }

    #[test]
    fn error_rate_counts_disagreements() {
        let t = [Label::Pos, Label::Neg, Label::Pos, Label::Neg];
        let p = [Label::Pos, Label::Pos, Label::Pos, Label::Pos];
        assert_eq!(error_rate(&p, &t), 0.5);
        assert_eq!(error_rate(&[], &[]), 0.0);
    }
}
