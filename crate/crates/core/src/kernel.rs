//! Mercer kernels, Gram matrices and functions in the induced RKHS.
//!
//! A function is stored as a coefficient vector over a fixed [`CenterSet`]:
//! `f = Σ_j c_j K(z_j, ·)`. All functions of one run share a single
//! [`RkhsSpace`], which owns the centers and caches their Gram matrix, so
//! inner products and norms reduce to `cᵀ G c'`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A positive semi-definite kernel on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MercerKernel {
    /// `K(x, y) = exp(-‖x - y‖² / γ²)`.
    Gaussian { bandwidth: f64 },
}

impl MercerKernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(MercerKernel::Gaussian { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        match *self {
            MercerKernel::Gaussian { bandwidth } => bandwidth,
        }
    }

    /// Kernel value. Callers are responsible for matching dimensions.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            MercerKernel::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (bandwidth * bandwidth)).exp()
            }
        }
    }
}

/// Ordered list of points `z_1..z_N` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl CenterSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyCenters)?.len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        Ok(CenterSet { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Index of the first center equal to `x`, if any.
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == x)
    }
}

/// `G[j][k] = K(z_j, z_k)`.
pub fn gram_matrix(kernel: &MercerKernel, centers: &CenterSet) -> Result<DMatrix<f64>> {
    let n = centers.len();
    if n == 0 {
        return Err(Error::EmptyCenters);
    }
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        gram[(j, j)] = kernel.eval(centers.point(j), centers.point(j));
        for k in (j + 1)..n {
            let v = kernel.eval(centers.point(j), centers.point(k));
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    Ok(gram)
}

/// Kernel, centers and the cached Gram matrix shared by every function of a run.
#[derive(Debug)]
pub struct RkhsSpace {
    kernel: MercerKernel,
    centers: CenterSet,
    gram: DMatrix<f64>,
}

impl RkhsSpace {
    pub fn new(kernel: MercerKernel, centers: CenterSet) -> Result<Arc<Self>> {
        let gram = gram_matrix(&kernel, &centers)?;
        Ok(Arc::new(RkhsSpace {
            kernel,
            centers,
            gram,
        }))
    }

    pub fn kernel(&self) -> &MercerKernel {
        &self.kernel
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `cᵀ G c'` without wrapping the vectors in functions.
    pub fn inner_coefficients(&self, c: &DVector<f64>, other: &DVector<f64>) -> f64 {
        let gc = &self.gram * other;
        c.dot(&gc)
    }

    /// RKHS norms of every column of `coefficients` (one function per column).
    /// Uses one matrix product, so it is the preferred path for per-agent metrics.
    pub fn column_norms(&self, coefficients: &DMatrix<f64>) -> Vec<f64> {
        let gc = &self.gram * coefficients;
        (0..coefficients.ncols())
            .map(|k| coefficients.column(k).dot(&gc.column(k)).max(0.0).sqrt())
            .collect()
    }

    /// Value at center `k` of the function with the given coefficients: `(G c)_k`.
    #[inline]
    pub fn value_at_center(&self, k: usize, c: &DVector<f64>) -> f64 {
        self.gram.row(k).transpose().dot(c)
    }

    fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || (self.kernel == other.kernel && self.centers == other.centers)
    }
}

/// An element `Σ_j c_j K(z_j, ·)` of the RKHS.
#[derive(Debug, Clone)]
pub struct RkhsFunction {
    space: Arc<RkhsSpace>,
    coefficients: DVector<f64>,
}

impl RkhsFunction {
    pub fn zero(space: &Arc<RkhsSpace>) -> Self {
        RkhsFunction {
            space: Arc::clone(space),
            coefficients: DVector::zeros(space.len()),
        }
    }

    pub fn from_coefficients(space: &Arc<RkhsSpace>, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != space.len() {
            return Err(Error::DimMismatch {
                expected: space.len(),
                got: coefficients.len(),
            });
        }
        Ok(RkhsFunction {
            space: Arc::clone(space),
            coefficients,
        })
    }

    /// The atom `K(z_j, ·)`.
    pub fn atom(space: &Arc<RkhsSpace>, j: usize) -> Self {
        let mut f = Self::zero(space);
        f.coefficients[j] = 1.0;
        f
    }

    pub fn space(&self) -> &Arc<RkhsSpace> {
        &self.space
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coefficients
    }

    pub fn into_coefficients(self) -> DVector<f64> {
        self.coefficients
    }

    pub fn norm_squared(&self) -> f64 {
        self.space
            .inner_coefficients(&self.coefficients, &self.coefficients)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().max(0.0).sqrt()
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &RkhsFunction) -> Result<RkhsFunction> {
        self.check_same_space(other)?;
        Ok(RkhsFunction {
            space: Arc::clone(&self.space),
            coefficients: &self.coefficients + &other.coefficients * alpha,
        })
    }

    pub fn scaled(&self, alpha: f64) -> RkhsFunction {
        RkhsFunction {
            space: Arc::clone(&self.space),
            coefficients: &self.coefficients * alpha,
        }
    }

    pub fn check_same_space(&self, other: &RkhsFunction) -> Result<()> {
        if self.space.same_as(&other.space) {
            Ok(())
        } else {
            Err(Error::CenterSetMismatch)
        }
    }
}

/// Point evaluation through the reproducing property, `f(x) = Σ_j c_j K(z_j, x)`.
pub fn evaluate(f: &RkhsFunction, x: &[f64]) -> Result<f64> {
    let centers = f.space.centers();
    if x.len() != centers.dim() {
        return Err(Error::DimMismatch {
            expected: centers.dim(),
            got: x.len(),
        });
    }
    let kernel = f.space.kernel();
    Ok(f.coefficients
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| c * kernel.eval(centers.point(j), x))
        .sum())
}

/// `⟨f, g⟩_{H_K} = cᵀ G c'`.
pub fn rkhs_inner(f: &RkhsFunction, g: &RkhsFunction) -> Result<f64> {
    f.check_same_space(g)?;
    Ok(f.space.inner_coefficients(&f.coefficients, &g.coefficients))
}

/// `Σ_k w_k f_k`. Zero weights are skipped, so sparse mixing rows cost only
/// their support.
pub fn linear_combine(weights: &[f64], funcs: &[&RkhsFunction]) -> Result<RkhsFunction> {
    if weights.len() != funcs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} functions",
            weights.len(),
            funcs.len()
        )));
    }
    let first = funcs.first().ok_or_else(|| {
        Error::InvalidParameter("linear_combine needs at least one function".into())
    })?;
    let mut acc = DVector::zeros(first.coefficients.len());
    for (w, f) in weights.iter().zip(funcs) {
        first.check_same_space(f)?;
        if *w != 0.0 {
            acc.axpy(*w, &f.coefficients, 1.0);
        }
    }
    Ok(RkhsFunction {
        space: Arc::clone(&first.space),
        coefficients: acc,
    })
}
