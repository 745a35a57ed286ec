//! Empirical risks over the RKHS and their Fréchet derivatives.
//!
//! For agent `i` with data `(x_s, y_s)`, `s = 1..n_i`,
//!
//! ```text
//! J_i(f)   = scale · [ (1/n_i) Σ_s L(f(x_s) − y_s) + (λ_i/2) ‖f‖² ]
//! D J_i(f) = scale · [ (1/n_i) Σ_s L'(f(x_s) − y_s) K_{x_s} + λ_i f ]
//! ```
//!
//! The data inputs must be centers of the shared space, so the derivative is
//! again a coefficient vector over that space.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::datagen::LocalData;
use crate::error::{Error, Result};
use crate::kernel::{rkhs_inner, RkhsFunction, RkhsSpace};
use crate::losses::LossSpec;

#[derive(Debug, Clone)]
pub struct LocalRisk {
    space: Arc<RkhsSpace>,
    data: LocalData,
    loss: LossSpec,
    lambda: f64,
    scale: f64,
    indices: Vec<usize>,
}

impl LocalRisk {
    pub fn new(
        space: &Arc<RkhsSpace>,
        data: LocalData,
        loss: LossSpec,
        lambda: f64,
        scale: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be > 0, got {scale}"
            )));
        }
        if data.dim() != space.centers().dim() {
            return Err(Error::DimMismatch {
                expected: space.centers().dim(),
                got: data.dim(),
            });
        }
        let indices = data
            .inputs
            .iter()
            .enumerate()
            .map(|(s, x)| {
                space
                    .centers()
                    .position(x)
                    .ok_or(Error::CenterNotRegistered {
                        agent: data.agent,
                        index: s,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalRisk {
            space: Arc::clone(space),
            data,
            loss,
            lambda,
            scale,
            indices,
        })
    }

    pub fn space(&self) -> &Arc<RkhsSpace> {
        &self.space
    }

    pub fn data(&self) -> &LocalData {
        &self.data
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Positions of this agent's inputs in the center set.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn check(&self, f: &RkhsFunction) -> Result<()> {
        if f.space().centers().dim() != self.space.centers().dim() {
            return Err(Error::DimMismatch {
                expected: self.space.centers().dim(),
                got: f.space().centers().dim(),
            });
        }
        f.check_same_space(&RkhsFunction::zero(&self.space))
    }

    /// Residuals `f(x_s) − y_s` of a coefficient vector.
    pub fn residuals(&self, c: &DVector<f64>) -> Vec<f64> {
        self.indices
            .iter()
            .zip(&self.data.outputs)
            .map(|(&k, y)| self.space.value_at_center(k, c) - y)
            .collect()
    }

    fn data_term(&self, residuals: &[f64]) -> f64 {
        residuals.iter().map(|u| self.loss.value(*u)).sum::<f64>() / self.data.len() as f64
    }

    pub fn value_coefficients(&self, c: &DVector<f64>) -> f64 {
        let mut v = self.data_term(&self.residuals(c));
        if self.lambda > 0.0 {
            v += 0.5 * self.lambda * self.space.inner_coefficients(c, c);
        }
        self.scale * v
    }

    /// Gradient coefficients and the RKHS norm of the gradient. Without
    /// regularization the gradient is supported on the agent's own centers
    /// and the norm costs `O(n_i²)`.
    pub fn gradient_with_norm(&self, c: &DVector<f64>) -> (DVector<f64>, f64) {
        let residuals = self.residuals(c);
        let w = self.scale / self.data.len() as f64;
        let mut g = c * (self.scale * self.lambda);
        for (&k, u) in self.indices.iter().zip(&residuals) {
            g[k] += w * self.loss.derivative(*u);
        }
        let norm_sq = if self.lambda > 0.0 {
            self.space.inner_coefficients(&g, &g)
        } else {
            let gram = self.space.gram();
            let mut acc = 0.0;
            for &a in &self.indices {
                for &b in &self.indices {
                    acc += g[a] * g[b] * gram[(a, b)];
                }
            }
            // Duplicate inputs share an index and would be counted twice.
            if has_duplicates(&self.indices) {
                acc = self.space.inner_coefficients(&g, &g);
            }
            acc
        };
        (g, norm_sq.max(0.0).sqrt())
    }

    pub fn gradient_coefficients(&self, c: &DVector<f64>) -> DVector<f64> {
        let residuals = self.residuals(c);
        let w = self.scale / self.data.len() as f64;
        let mut g = c * (self.scale * self.lambda);
        for (&k, u) in self.indices.iter().zip(&residuals) {
            g[k] += w * self.loss.derivative(*u);
        }
        g
    }

    /// `L̂ = scale · (sup|L''| · λ_max(G_i) / n_i + λ_i)`, with `G_i` the Gram
    /// block of the agent's own inputs.
    pub fn smoothness(&self) -> f64 {
        let n = self.indices.len();
        let block = DMatrix::from_fn(n, n, |a, b| {
            self.space.gram()[(self.indices[a], self.indices[b])]
        });
        let top = max_eigenvalue(block);
        let curvature = self
            .loss
            .smoothness_bounds()
            .second_derivative
            .unwrap_or(f64::INFINITY);
        self.scale * (curvature * top / n as f64 + self.lambda)
    }
}

fn has_duplicates(indices: &[usize]) -> bool {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).any(|w| w[0] == w[1])
}

pub(crate) fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn risk_value(risk: &LocalRisk, f: &RkhsFunction) -> Result<f64> {
    risk.check(f)?;
    Ok(risk.value_coefficients(f.coefficients()))
}

pub fn frechet_gradient(risk: &LocalRisk, f: &RkhsFunction) -> Result<RkhsFunction> {
    risk.check(f)?;
    RkhsFunction::from_coefficients(risk.space(), risk.gradient_coefficients(f.coefficients()))
}

/// Relative error between the central difference of `J_i` along `direction`
/// and `⟨D J_i(f), direction⟩`.
pub fn directional_fd_check(
    risk: &LocalRisk,
    f: &RkhsFunction,
    direction: &RkhsFunction,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step h must be positive, got {h}"
        )));
    }
    let plus = risk_value(risk, &f.add_scaled(h, direction)?)?;
    let minus = risk_value(risk, &f.add_scaled(-h, direction)?)?;
    let fd = (plus - minus) / (2.0 * h);
    let analytic = rkhs_inner(&frechet_gradient(risk, f)?, direction)?;
    Ok((fd - analytic).abs() / (analytic.abs() + 1e-12))
}

/// `J = Σ_i J_i`.
#[derive(Debug, Clone)]
pub struct GlobalRisk {
    locals: Vec<LocalRisk>,
}

impl GlobalRisk {
    pub fn new(locals: Vec<LocalRisk>) -> Result<Self> {
        let first = locals.first().ok_or_else(|| {
            Error::InvalidParameter("global risk needs at least one agent".into())
        })?;
        for r in &locals[1..] {
            RkhsFunction::zero(first.space()).check_same_space(&RkhsFunction::zero(r.space()))?;
        }
        Ok(GlobalRisk { locals })
    }

    pub fn locals(&self) -> &[LocalRisk] {
        &self.locals
    }

    pub fn agents(&self) -> usize {
        self.locals.len()
    }

    pub fn space(&self) -> &Arc<RkhsSpace> {
        self.locals[0].space()
    }

    pub fn is_convex(&self) -> bool {
        self.locals.iter().all(|r| r.loss().is_convex())
    }

    pub fn value_coefficients(&self, c: &DVector<f64>) -> f64 {
        let gc = self.space().gram() * c;
        let mut reg = None;
        self.locals
            .iter()
            .map(|r| {
                let residuals: Vec<f64> = r
                    .indices
                    .iter()
                    .zip(&r.data.outputs)
                    .map(|(&k, y)| gc[k] - y)
                    .collect();
                let mut v = r.data_term(&residuals);
                if r.lambda > 0.0 {
                    let norm_sq = *reg.get_or_insert_with(|| c.dot(&gc));
                    v += 0.5 * r.lambda * norm_sq;
                }
                r.scale * v
            })
            .sum()
    }

    pub fn gradient_coefficients(&self, c: &DVector<f64>) -> DVector<f64> {
        let gc = self.space().gram() * c;
        let mut g = DVector::zeros(c.len());
        for r in &self.locals {
            let w = r.scale / r.data.len() as f64;
            if r.lambda > 0.0 {
                g.axpy(r.scale * r.lambda, c, 1.0);
            }
            for (&k, y) in r.indices.iter().zip(&r.data.outputs) {
                g[k] += w * r.loss.derivative(gc[k] - y);
            }
        }
        g
    }

    pub fn gradient_norm_coefficients(&self, c: &DVector<f64>) -> f64 {
        let g = self.gradient_coefficients(c);
        self.space().inner_coefficients(&g, &g).max(0.0).sqrt()
    }

    /// Smoothness constant of `J` in the RKHS norm:
    /// `max_i sup|L_i''| · λ_max(W^{1/2} G_D W^{1/2}) + Σ_i scale_i λ_i`, where
    /// `G_D` is the Gram matrix of all data points and `W` holds the weights
    /// `scale_i / n_i`.
    pub fn smoothness(&self) -> f64 {
        let mut idx = Vec::new();
        let mut weights = Vec::new();
        let mut curvature: f64 = 0.0;
        let mut reg = 0.0;
        for r in &self.locals {
            let w = (r.scale / r.data.len() as f64).sqrt();
            for &k in &r.indices {
                idx.push(k);
                weights.push(w);
            }
            curvature = curvature.max(
                r.loss
                    .smoothness_bounds()
                    .second_derivative
                    .unwrap_or(f64::INFINITY),
            );
            reg += r.scale * r.lambda;
        }
        let gram = self.space().gram();
        let n = idx.len();
        let m = DMatrix::from_fn(n, n, |a, b| {
            weights[a] * gram[(idx[a], idx[b])] * weights[b]
        });
        curvature * max_eigenvalue(m) + reg
    }
}

pub fn global_value(global: &GlobalRisk, f: &RkhsFunction) -> Result<f64> {
    global.locals[0].check(f)?;
    Ok(global.value_coefficients(f.coefficients()))
}

pub fn global_gradient(global: &GlobalRisk, f: &RkhsFunction) -> Result<RkhsFunction> {
    global.locals[0].check(f)?;
    RkhsFunction::from_coefficients(
        global.space(),
        global.gradient_coefficients(f.coefficients()),
    )
}
