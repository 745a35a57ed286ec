//! Centralized reference solutions.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::dfmd::SimplexFunctional;
use crate::error::{Error, Result};
use crate::kernel::RkhsFunction;
use crate::losses::LossKind;
use crate::objective::GlobalRisk;

/// Diagonal jitter for unregularized normal equations.
pub const GRAM_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum Minimizer {
    Rkhs(RkhsFunction),
    /// Plain weights; lattice points may sit on the boundary.
    Simplex(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub minimizer: Minimizer,
    pub value: f64,
    pub method: &'static str,
    pub gradient_norm: f64,
    /// PL constant of the local objectives, `min_i scale_i λ_i`, when positive.
    pub mu: Option<f64>,
    pub notes: Vec<String>,
    /// Final objective value of every start, zero start first.
    pub restart_values: Vec<f64>,
}

impl OracleReport {
    pub fn rkhs(&self) -> Option<&RkhsFunction> {
        match &self.minimizer {
            Minimizer::Rkhs(f) => Some(f),
            Minimizer::Simplex(_) => None,
        }
    }
}

fn pl_constant(global: &GlobalRisk) -> Option<f64> {
    let mu = global
        .locals()
        .iter()
        .map(|r| r.scale() * r.lambda())
        .fold(f64::INFINITY, f64::min);
    (mu > 0.0 && mu.is_finite()).then_some(mu)
}

/// Closed-form minimizer for quadratic losses.
///
/// Stationarity in coefficient space reads `(Eᵀ W E G + Λ I) c = Eᵀ W y`,
/// where `E` selects each datum's center, `W` holds `2κ scale_i / n_i`
/// (`κ = ½` for half-squared, `1` for squared) and `Λ = Σ_i scale_i λ_i`.
/// When every center carries exactly one datum this is the symmetric system
/// `(G + Λ W⁻¹) c = y`, solved by Cholesky. Otherwise the minimum-norm
/// solution comes from an SVD.
pub fn solve_ls_pooled(global: &GlobalRisk) -> Result<OracleReport> {
    let space = global.space();
    let n = space.len();
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut reg = 0.0;
    for r in global.locals() {
        let kappa = match r.loss().kind() {
            LossKind::HalfSquared => 0.5,
            LossKind::Squared => 1.0,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "closed-form oracle needs a quadratic loss, got {}",
                    other.name()
                )))
            }
        };
        let w = 2.0 * kappa * r.scale() / r.data().len() as f64;
        for (&k, &y) in r.indices().iter().zip(&r.data().outputs) {
            rows.push((k, y, w));
        }
        reg += r.scale() * r.lambda();
    }
    if rows.is_empty() {
        return Err(Error::InvalidParameter("pooled data is empty".into()));
    }

    let mut hits = vec![0usize; n];
    for (k, _, _) in &rows {
        hits[*k] += 1;
    }
    let gram = space.gram();
    let mut notes = Vec::new();
    let coefficients = if hits.iter().all(|h| *h == 1) {
        let mut weight = DVector::zeros(n);
        let mut target = DVector::zeros(n);
        for (k, y, w) in &rows {
            weight[*k] = *w;
            target[*k] = *y;
        }
        let mut system = gram.clone();
        for k in 0..n {
            system[(k, k)] += reg / weight[k];
        }
        let jitter = if reg > 0.0 { 0.0 } else { GRAM_JITTER };
        let mut factored = system.clone();
        for k in 0..n {
            factored[(k, k)] += jitter;
        }
        match Cholesky::new(factored) {
            Some(chol) => {
                let mut c = chol.solve(&target);
                // One refinement step against the unjittered system.
                let residual = &target - &system * &c;
                c += chol.solve(&residual);
                c
            }
            None => {
                notes.push("cholesky failed; minimum-norm solve".into());
                min_norm_solve(system, &target)?
            }
        }
    } else {
        notes.push("repeated or unused centers; minimum-norm solve".into());
        let mut lhs = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (k, y, w) in &rows {
            for j in 0..n {
                lhs[(*k, j)] += w * gram[(*k, j)];
            }
            rhs[*k] += w * y;
        }
        for k in 0..n {
            lhs[(k, k)] += reg;
        }
        min_norm_solve(lhs, &rhs)?
    };

    let value = global.value_coefficients(&coefficients);
    let gradient_norm = global.gradient_norm_coefficients(&coefficients);
    Ok(OracleReport {
        minimizer: Minimizer::Rkhs(RkhsFunction::from_coefficients(space, coefficients)?),
        value,
        method: "normal-equations",
        gradient_norm,
        mu: pl_constant(global),
        notes,
        restart_values: vec![value],
    })
}

fn min_norm_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = SVD::new(a, true, true);
    let tol = svd.singular_values.max() * 1e-12;
    svd.solve(b, tol)
        .map_err(|e| Error::InvalidParameter(format!("minimum-norm solve failed: {e}")))
}

/// Stopping tolerance on the gradient norm for [`solve_centralized_gd`].
pub const GD_TOLERANCE: f64 = 1e-11;

fn descend(
    global: &GlobalRisk,
    mut c: DVector<f64>,
    iters: usize,
    eta: f64,
) -> (DVector<f64>, f64, f64, usize) {
    for k in 0..iters {
        let g = global.gradient_coefficients(&c);
        let norm = global.space().inner_coefficients(&g, &g).max(0.0).sqrt();
        if norm <= GD_TOLERANCE {
            return (c.clone(), global.value_coefficients(&c), norm, k);
        }
        c.axpy(-eta, &g, 1.0);
    }
    let norm = global.gradient_norm_coefficients(&c);
    (c.clone(), global.value_coefficients(&c), norm, iters)
}

/// Full-gradient descent on the pooled objective from the zero function and
/// `restarts` random starts. `eta` defaults to `1/L` with `L` from
/// [`GlobalRisk::smoothness`]. The lowest final value wins; ties go to the
/// lower start index.
pub fn solve_centralized_gd(
    global: &GlobalRisk,
    iters: usize,
    eta: Option<f64>,
    restarts: usize,
    seed: u64,
) -> Result<OracleReport> {
    if iters == 0 {
        return Err(Error::InvalidParameter("iters must be at least 1".into()));
    }
    let eta = match eta {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {e}"
            )))
        }
        None => 1.0 / global.smoothness(),
    };
    let n = global.space().len();
    let spread = global
        .locals()
        .iter()
        .flat_map(|r| r.data().outputs.iter().copied())
        .fold(0.0f64, |a, y| a.max(y.abs()))
        .max(1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut starts = vec![DVector::zeros(n)];
    for _ in 0..restarts {
        starts.push(DVector::from_fn(n, |_, _| {
            spread * (2.0 * rng.random::<f64>() - 1.0)
        }));
    }
    let results: Vec<_> = starts
        .into_par_iter()
        .map(|c| descend(global, c, iters, eta))
        .collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.1 < results[best].1 {
            best = k;
        }
    }
    let restart_values: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (c, value, gradient_norm, used) = results
        .into_iter()
        .nth(best)
        .expect("at least the zero start");
    let mut notes = vec![format!("best start {best}, {used} iterations, step {eta}")];
    if !global.is_convex() {
        notes.push("possibly-local-minimum".into());
    }
    if gradient_norm > 1e-8 {
        notes.push(format!(
            "gradient norm {gradient_norm:.3e} above 1e-8 after {iters} iterations"
        ));
    }
    Ok(OracleReport {
        minimizer: Minimizer::Rkhs(RkhsFunction::from_coefficients(global.space(), c)?),
        value,
        method: "centralized-gd",
        gradient_norm,
        mu: pl_constant(global),
        notes,
        restart_values,
    })
}

/// Closed form for quadratic losses, multi-start descent otherwise.
pub fn reference_solution(global: &GlobalRisk, seed: u64) -> Result<OracleReport> {
    let quadratic = global
        .locals()
        .iter()
        .all(|r| matches!(r.loss().kind(), LossKind::HalfSquared | LossKind::Squared));
    if quadratic {
        solve_ls_pooled(global)
    } else {
        solve_centralized_gd(global, 200_000, None, 5, seed)
    }
}

fn lattice_points(n: usize, r: usize, prefix: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    let used: usize = prefix.iter().sum();
    if prefix.len() == n - 1 {
        prefix.push(r - used);
        visit(prefix);
        prefix.pop();
        return;
    }
    for k in 0..=(r - used) {
        prefix.push(k);
        lattice_points(n, r, prefix, visit);
        prefix.pop();
    }
}

/// Best point of the lattice `{k/r}` on the simplex. Linear functionals go
/// straight to the best vertex.
pub fn brute_force_simplex(functional: &SimplexFunctional, r: usize) -> Result<OracleReport> {
    let n = functional.len();
    if n > 4 {
        return Err(Error::SimplexTooLarge(n));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "simplex needs n >= 2, got {n}"
        )));
    }
    if r < 10 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be at least 10, got {r}"
        )));
    }
    let (best, value, method) = if functional.curvature == 0.0 {
        let mut k = 0;
        for j in 1..n {
            if functional.linear[j] < functional.linear[k] {
                k = j;
            }
        }
        let mut p = DVector::zeros(n);
        p[k] = 1.0;
        let v = functional.value_weights(&p);
        (p, v, "vertex-enumeration")
    } else {
        let mut best = DVector::zeros(n);
        let mut value = f64::INFINITY;
        let mut p = DVector::zeros(n);
        lattice_points(n, r, &mut Vec::with_capacity(n), &mut |ks| {
            for (j, k) in ks.iter().enumerate() {
                p[j] = *k as f64 / r as f64;
            }
            let v = functional.value_weights(&p);
            if v < value {
                value = v;
                best.copy_from(&p);
            }
        });
        (best, value, "lattice-search")
    };
    let gradient_norm = functional.gradient_weights(&best).amax();
    Ok(OracleReport {
        minimizer: Minimizer::Simplex(best),
        value,
        method,
        gradient_norm,
        mu: None,
        notes: vec![format!("resolution {r}")],
        restart_values: vec![value],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, inject_outliers, LocalData};
    use crate::kernel::{CenterSet, MercerKernel, RkhsSpace};
    use crate::losses::LossSpec;
    use crate::objective::LocalRisk;
    use approx::assert_abs_diff_eq;

    fn pooled(points: Vec<Vec<f64>>, ys: Vec<f64>, lambda: f64, loss: LossSpec) -> GlobalRisk {
        let space = RkhsSpace::new(
            MercerKernel::gaussian(0.5).unwrap(),
            CenterSet::new(points.clone()).unwrap(),
        )
        .unwrap();
        let data = LocalData::new(0, points, ys).unwrap();
        GlobalRisk::new(vec![
            LocalRisk::new(&space, data, loss, lambda, 1.0).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn single_datum_interpolates() {
        let g = pooled(
            vec![vec![0.3, 0.1]],
            vec![1.7],
            0.0,
            LossSpec::half_squared(),
        );
        let rep = solve_ls_pooled(&g).unwrap();
        assert_abs_diff_eq!(rep.rkhs().unwrap().coefficients()[0], 1.7, epsilon = 1e-9);
        assert!(rep.value < 1e-18);
        assert_eq!(rep.mu, None);
    }

    #[test]
    fn zero_labels_give_zero() {
        let g = pooled(
            vec![vec![0.0], vec![0.4], vec![-0.9]],
            vec![0.0; 3],
            0.0,
            LossSpec::half_squared(),
        );
        let rep = solve_ls_pooled(&g).unwrap();
        assert!(rep.rkhs().unwrap().coefficients().amax() == 0.0);
        assert_eq!(rep.value, 0.0);
    }

    #[test]
    fn regularized_pair_matches_descent() {
        let g = pooled(
            vec![vec![0.0], vec![0.6]],
            vec![1.0, -0.5],
            0.1,
            LossSpec::half_squared(),
        );
        let closed = solve_ls_pooled(&g).unwrap();
        assert!(closed.gradient_norm <= 1e-8);
        assert_abs_diff_eq!(closed.mu.unwrap(), 0.1, epsilon = 1e-15);
        let gd = solve_centralized_gd(&g, 100_000, None, 0, 1).unwrap();
        let diff = closed.rkhs().unwrap().coefficients() - gd.rkhs().unwrap().coefficients();
        assert!(diff.amax() <= 1e-8, "{diff}");
        assert_abs_diff_eq!(closed.value, gd.value, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_inputs_use_min_norm() {
        let g = pooled(
            vec![vec![0.2], vec![0.2], vec![0.7]],
            vec![1.0, 3.0, 0.0],
            0.0,
            LossSpec::squared(),
        );
        let rep = solve_ls_pooled(&g).unwrap();
        // Both copies of 0.2 fit the mean label 2.
        assert!(rep.gradient_norm <= 1e-8, "{}", rep.gradient_norm);
        assert_abs_diff_eq!(rep.value, (1.0 + 1.0) / 3.0, epsilon = 1e-8);
        assert!(rep.notes.iter().any(|n| n.contains("minimum-norm")));
    }

    #[test]
    fn gd_returns_start_at_zero_residual() {
        let g = pooled(
            vec![vec![0.1], vec![0.5]],
            vec![0.0, 0.0],
            0.0,
            LossSpec::new(LossKind::Cauchy, 1.0).unwrap(),
        );
        let rep = solve_centralized_gd(&g, 10, None, 0, 0).unwrap();
        assert_eq!(rep.gradient_norm, 0.0);
        assert!(rep.notes.iter().any(|n| n == "possibly-local-minimum"));
        assert!(rep.notes[0].contains("0 iterations"));
    }

    fn preset_risk(loss: LossSpec, outliers: bool) -> GlobalRisk {
        let mut data = generate(6, 5, 4, 3).unwrap();
        if outliers {
            data = inject_outliers(&data, 5.0).unwrap();
        }
        let space = RkhsSpace::new(
            MercerKernel::gaussian(0.33).unwrap(),
            CenterSet::new(data.all_inputs()).unwrap(),
        )
        .unwrap();
        let locals = data
            .agents
            .iter()
            .map(|a| LocalRisk::new(&space, a.clone(), loss, 0.0, 1.0 / 6.0).unwrap())
            .collect();
        GlobalRisk::new(locals).unwrap()
    }

    #[test]
    fn closed_form_and_descent_agree() {
        let g = preset_risk(LossSpec::half_squared(), false);
        let closed = solve_ls_pooled(&g).unwrap();
        let gd = solve_centralized_gd(&g, 100_000, None, 2, 5).unwrap();
        assert!((closed.value - gd.value).abs() <= 1e-6);
        assert!(closed.gradient_norm <= 1e-8);
    }

    #[test]
    fn cauchy_multistart() {
        let g = preset_risk(LossSpec::new(LossKind::Cauchy, 1.0).unwrap(), true);
        let rep = reference_solution(&g, 9).unwrap();
        assert_eq!(rep.restart_values.len(), 6);
        assert!(rep.gradient_norm <= 1e-8, "{}", rep.gradient_norm);
        assert!(rep.restart_values.iter().all(|v| *v >= rep.value));
    }

    #[test]
    fn simplex_examples() {
        let lin = SimplexFunctional::linear(vec![3.0, 1.0, 2.0]);
        let rep = brute_force_simplex(&lin, 10).unwrap();
        match rep.minimizer {
            Minimizer::Simplex(p) => assert_eq!(p.as_slice(), &[0.0, 1.0, 0.0]),
            _ => unreachable!(),
        }
        assert_eq!(rep.value, 1.0);

        let quad = SimplexFunctional::quadratic(1.0, vec![0.23, 0.41, 0.36]).unwrap();
        let rep = brute_force_simplex(&quad, 10).unwrap();
        match rep.minimizer {
            Minimizer::Simplex(p) => {
                assert!((p - DVector::from_vec(vec![0.2, 0.4, 0.4])).amax() < 1e-15)
            }
            _ => unreachable!(),
        }

        let big = SimplexFunctional::linear(vec![0.0; 5]);
        assert_eq!(
            brute_force_simplex(&big, 10).unwrap_err().code(),
            "simplex-too-large"
        );
        assert!(brute_force_simplex(&lin, 9).is_err());
    }
}
