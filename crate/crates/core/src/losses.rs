//! Scalar losses of the residual `u = f(x) - y` and their derivatives.
//!
//! The robust kinds follow the windowed form `σ² W(u² / σ²)`; `σ` is the
//! robustness scale and is ignored by the two quadratic kinds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `u² / 2`. Its derivative is the plain residual.
    HalfSquared,
    /// `u²`.
    Squared,
    Welsch,
    Cauchy,
    Fair,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::HalfSquared => "half-squared",
            LossKind::Squared => "squared",
            LossKind::Welsch => "welsch",
            LossKind::Cauchy => "cauchy",
            LossKind::Fair => "fair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "half-squared" => LossKind::HalfSquared,
            "squared" => LossKind::Squared,
            "welsch" => LossKind::Welsch,
            "cauchy" => LossKind::Cauchy,
            "fair" => LossKind::Fair,
            _ => return None,
        })
    }

    pub fn needs_scale(self) -> bool {
        matches!(self, LossKind::Welsch | LossKind::Cauchy | LossKind::Fair)
    }

    pub const ALL: [LossKind; 5] = [
        LossKind::HalfSquared,
        LossKind::Squared,
        LossKind::Welsch,
        LossKind::Cauchy,
        LossKind::Fair,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
    sigma: f64,
}

/// Upper bounds on `|L''|` and `|L'|` over the whole real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessBounds {
    pub second_derivative: Option<f64>,
    pub derivative: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind, sigma: f64) -> Result<Self> {
        if kind.needs_scale() && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} loss needs a positive scale, got {sigma}",
                kind.name()
            )));
        }
        Ok(LossSpec { kind, sigma })
    }

    pub fn half_squared() -> Self {
        LossSpec {
            kind: LossKind::HalfSquared,
            sigma: 1.0,
        }
    }

    pub fn squared() -> Self {
        LossSpec {
            kind: LossKind::Squared,
            sigma: 1.0,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Welsch and Cauchy are nonconvex in the residual.
    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, LossKind::Welsch | LossKind::Cauchy)
    }

    pub fn value(&self, u: f64) -> f64 {
        let s = self.sigma;
        match self.kind {
            LossKind::HalfSquared => 0.5 * u * u,
            LossKind::Squared => u * u,
            LossKind::Welsch => -s * s * (-(u * u) / (2.0 * s * s)).exp_m1(),
            LossKind::Cauchy => s * s * ((u * u) / (2.0 * s * s)).ln_1p(),
            LossKind::Fair => {
                let a = u.abs() / s;
                s * s * (a - a.ln_1p())
            }
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        let s = self.sigma;
        match self.kind {
            LossKind::HalfSquared => u,
            LossKind::Squared => 2.0 * u,
            LossKind::Welsch => u * (-(u * u) / (2.0 * s * s)).exp(),
            LossKind::Cauchy => u / (1.0 + (u * u) / (2.0 * s * s)),
            LossKind::Fair => u / (1.0 + u.abs() / s),
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        let s = self.sigma;
        match self.kind {
            LossKind::HalfSquared => 1.0,
            LossKind::Squared => 2.0,
            LossKind::Welsch => {
                let r = (u * u) / (s * s);
                (-0.5 * r).exp() * (1.0 - r)
            }
            LossKind::Cauchy => {
                let q = (u * u) / (2.0 * s * s);
                (1.0 - q) / ((1.0 + q) * (1.0 + q))
            }
            LossKind::Fair => {
                let a = 1.0 + u.abs() / s;
                1.0 / (a * a)
            }
        }
    }

    pub fn smoothness_bounds(&self) -> SmoothnessBounds {
        let s = self.sigma;
        match self.kind {
            LossKind::HalfSquared => SmoothnessBounds {
                second_derivative: Some(1.0),
                derivative: None,
            },
            LossKind::Squared => SmoothnessBounds {
                second_derivative: Some(2.0),
                derivative: None,
            },
            // max |u e^{-u²/2σ²}| at u = σ
            LossKind::Welsch => SmoothnessBounds {
                second_derivative: Some(1.0),
                derivative: Some(s * (-0.5f64).exp()),
            },
            // max |u / (1 + u²/2σ²)| at u = √2 σ
            LossKind::Cauchy => SmoothnessBounds {
                second_derivative: Some(1.0),
                derivative: Some(s / std::f64::consts::SQRT_2),
            },
            // sup as |u| → ∞
            LossKind::Fair => SmoothnessBounds {
                second_derivative: Some(1.0),
                derivative: Some(s),
            },
        }
    }
}

pub fn loss_value(spec: &LossSpec, u: f64) -> f64 {
    spec.value(u)
}

pub fn loss_derivative(spec: &LossSpec, u: f64) -> f64 {
    spec.derivative(u)
}

pub fn smoothness_bounds(spec: &LossSpec) -> SmoothnessBounds {
    spec.smoothness_bounds()
}
