//! Labeled hinge loss and the non-convex unlabeled losses (SHG, SSHG, Ramp, DA).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("ramp parameter s must be finite and < 1, got {0}")]
    InvalidRamp(f64),
    #[error("unknown loss '{0}' (expected shg, sshg, ramp:<s> or da)")]
    UnknownLoss(String),
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    /// `+1` for scores `≥ 0`, `−1` otherwise.
    pub fn from_score(score: f64) -> Self {
        if score >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl TryFrom<f64> for Label {
    type Error = LossError;

    fn try_from(v: f64) -> Result<Self, LossError> {
        if v == 1.0 {
            Ok(Label::Pos)
        } else if v == -1.0 {
            Ok(Label::Neg)
        } else {
            Err(LossError::InvalidLabel(v))
        }
    }
}

/// A loss value together with its (sub)derivative in the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub derivative: f64,
}

/// `max(0, 1 − y·r)` with subgradient `0` if `y·r ≥ 1`, else `−y`.
pub fn hinge(r: f64, y: f64) -> Result<LossEval, LossError> {
    Ok(hinge_label(r, Label::try_from(y)?))
}

pub fn hinge_label(r: f64, y: Label) -> LossEval {
    let y = y.value();
    let margin = y * r;
    if margin >= 1.0 {
        LossEval {
            value: 0.0,
            derivative: 0.0,
        }
    } else {
        LossEval {
            value: 1.0 - margin,
            derivative: -y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UnlabeledLossKind {
    /// Symmetric hinge `max{0, 1 − |r|}`.
    Shg,
    /// Squared symmetric hinge `½max{0, 1 − |r|}²`.
    Sshg,
    /// `H₁(r) − H_s(r)` with `H_s(z) = max{0, s − z}`.
    Ramp { s: f64 },
    /// Differentiable approximation `exp(−5r²)`.
    Da,
}

impl UnlabeledLossKind {
    pub fn ramp(s: f64) -> Result<Self, LossError> {
        let kind = UnlabeledLossKind::Ramp { s };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            UnlabeledLossKind::Ramp { s } if !(s.is_finite() && s < 1.0) => {
                Err(LossError::InvalidRamp(s))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for UnlabeledLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnlabeledLossKind::Shg => write!(f, "shg"),
            UnlabeledLossKind::Sshg => write!(f, "sshg"),
            UnlabeledLossKind::Ramp { s } => write!(f, "ramp:{s}"),
            UnlabeledLossKind::Da => write!(f, "da"),
        }
    }
}

impl FromStr for UnlabeledLossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "shg" => Ok(UnlabeledLossKind::Shg),
            "sshg" => Ok(UnlabeledLossKind::Sshg),
            "da" => Ok(UnlabeledLossKind::Da),
            "ramp" => UnlabeledLossKind::ramp(0.0),
            other => match other.strip_prefix("ramp:") {
                Some(param) => {
                    let s: f64 = param
                        .parse()
                        .map_err(|_| LossError::UnknownLoss(s.to_string()))?;
                    UnlabeledLossKind::ramp(s)
                }
                None => Err(LossError::UnknownLoss(s.to_string())),
            },
        }
    }
}

/// How SHG/SSHG derivatives are reported inside the margin band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeConvention {
    /// Chain rule through `|r|`: SHG gives `−sign(r)`, SSHG gives `(|r| − 1)·sign(r)`.
    #[default]
    SignCorrected,
    /// Tabulated form without the `sign(r)` factor: SHG gives `−1`, SSHG gives `|r| − 1`.
    Literal,
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unlabeled loss with the default (sign-corrected) derivative convention.
pub fn unlabeled(kind: UnlabeledLossKind, r: f64) -> LossEval {
    unlabeled_with(kind, r, DerivativeConvention::SignCorrected)
}

pub fn unlabeled_with(kind: UnlabeledLossKind, r: f64, convention: DerivativeConvention) -> LossEval {
    let literal = convention == DerivativeConvention::Literal;
    match kind {
        UnlabeledLossKind::Shg => {
            let a = r.abs();
            if a >= 1.0 {
                LossEval {
                    value: 0.0,
                    derivative: 0.0,
                }
            } else {
                LossEval {
                    value: 1.0 - a,
                    derivative: if literal { -1.0 } else { -sign(r) },
                }
            }
        }
        UnlabeledLossKind::Sshg => {
            let a = r.abs();
            if a >= 1.0 {
                LossEval {
                    value: 0.0,
                    derivative: 0.0,
                }
            } else {
                let gap = 1.0 - a;
                LossEval {
                    value: 0.5 * gap * gap,
                    derivative: if literal { a - 1.0 } else { (a - 1.0) * sign(r) },
                }
            }
        }
        UnlabeledLossKind::Ramp { s } => {
            let h = |t: f64| (t - r).max(0.0);
            let dh = |t: f64| if r >= t { 0.0 } else { -1.0 };
            LossEval {
                value: h(1.0) - h(s),
                derivative: dh(1.0) - dh(s),
            }
        }
        UnlabeledLossKind::Da => {
            let e = (-5.0 * r * r).exp();
            LossEval {
                value: e,
                derivative: -10.0 * r * e,
            }
        }
    }
}

/// Derivative and Lipschitz bounds of the labeled/unlabeled loss pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBounds {
    /// `sup |l'|` for the hinge.
    pub m_l: f64,
    /// `sup |u'|` for the unlabeled loss.
    pub m_u: f64,
    /// Lipschitz constant of the hinge value.
    pub l_prime: f64,
    /// Lipschitz constant of the unlabeled loss value.
    pub u_prime: f64,
}

/// `sup_r 10|r|e^{−5r²}`, attained at `r = 1/√10`.
pub fn da_derivative_bound() -> f64 {
    10f64.sqrt() * (-0.5f64).exp()
}

pub fn loss_bounds(kind: UnlabeledLossKind) -> LossBounds {
    let m_u = match kind {
        UnlabeledLossKind::Shg | UnlabeledLossKind::Sshg | UnlabeledLossKind::Ramp { .. } => 1.0,
        UnlabeledLossKind::Da => da_derivative_bound(),
    };
    // For these piecewise-smooth losses the value's Lipschitz constant is the
    // derivative bound.
    LossBounds {
        m_l: 1.0,
        m_u,
        l_prime: 1.0,
        u_prime: m_u,
    }
}
