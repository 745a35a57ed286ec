//! Distributed functional mirror descent.
//!
//! One iteration per agent: map the state to the dual with `∂Ψ`, take the
//! gradient step there, map back with `(∂Ψ)^{-1}`, project onto the decision
//! domain under the Bregman divergence, then mix with the neighbors.
//!
//! Two geometries are provided. [`QuadraticGeometry`] works on RKHS
//! coefficients and reduces to DFGD on the whole space. [`EntropyGeometry`]
//! works on a discretized simplex and yields a distributed multiplicative
//! weights update.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dfgd::{record_iterate, IterateRecord, RunConfig, RunTrajectory};
use crate::error::{Error, Result};
use crate::kernel::{linear_combine, RkhsFunction};
use crate::network::{MixingMatrix, MixingSchedule};
use crate::objective::GlobalRisk;

/// Floor applied to weights when converting plain weights to log-weights.
pub const LOG_WEIGHT_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionDomain {
    WholeSpace,
    RkhsBall { radius: f64 },
    ProbabilitySimplex { size: usize },
}

impl DecisionDomain {
    pub fn rkhs_ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(DecisionDomain::RkhsBall { radius })
    }

    pub fn simplex(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidParameter(format!(
                "simplex needs at least 2 points, got {size}"
            )));
        }
        Ok(DecisionDomain::ProbabilitySimplex { size })
    }

    pub fn name(&self) -> String {
        match self {
            DecisionDomain::WholeSpace => "whole-space".into(),
            DecisionDomain::RkhsBall { radius } => format!("rkhs-ball({radius})"),
            DecisionDomain::ProbabilitySimplex { size } => format!("probability-simplex({size})"),
        }
    }
}

/// A mirror map `Ψ` together with the operations DFMD needs.
pub trait MirrorGeometry: Sync {
    type Point: Clone + Send + Sync;
    type Dual: Clone + Send + Sync;

    /// `σ_Ψ` with respect to [`MirrorGeometry::distance`].
    fn modulus(&self) -> f64;
    fn forward(&self, f: &Self::Point) -> Result<Self::Dual>;
    fn inverse(&self, q: &Self::Dual) -> Result<Self::Point>;
    /// `D_Ψ(f‖g) = Ψ(f) − Ψ(g) − ⟨f − g, ∂Ψ(g)⟩`.
    fn bregman(&self, f: &Self::Point, g: &Self::Point) -> Result<f64>;
    /// `⟨f − g, q⟩`.
    fn pairing(&self, f: &Self::Point, g: &Self::Point, q: &Self::Dual) -> Result<f64>;
    fn distance(&self, f: &Self::Point, g: &Self::Point) -> Result<f64>;
    /// `q − η s`.
    fn dual_step(&self, q: &Self::Dual, s: &Self::Dual, eta: f64) -> Result<Self::Dual>;
    fn project(&self, domain: &DecisionDomain, f: Self::Point) -> Result<Self::Point>;
    /// `Σ_j a_j f_j` for convex weights `a`.
    fn combine(&self, weights: &[f64], points: &[&Self::Point]) -> Result<Self::Point>;
}

/// `Ψ(f) = ½‖f‖²` on the RKHS. Both gradient maps are the identity on
/// coefficients.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticGeometry;

pub fn quadratic_geometry() -> QuadraticGeometry {
    QuadraticGeometry
}

impl MirrorGeometry for QuadraticGeometry {
    type Point = RkhsFunction;
    type Dual = RkhsFunction;

    fn modulus(&self) -> f64 {
        1.0
    }

    fn forward(&self, f: &RkhsFunction) -> Result<RkhsFunction> {
        Ok(f.clone())
    }

    fn inverse(&self, q: &RkhsFunction) -> Result<RkhsFunction> {
        Ok(q.clone())
    }

    fn bregman(&self, f: &RkhsFunction, g: &RkhsFunction) -> Result<f64> {
        Ok(0.5 * f.add_scaled(-1.0, g)?.norm_squared())
    }

    fn pairing(&self, f: &RkhsFunction, g: &RkhsFunction, q: &RkhsFunction) -> Result<f64> {
        let diff = f.add_scaled(-1.0, g)?;
        diff.check_same_space(q)?;
        Ok(f.space()
            .inner_coefficients(diff.coefficients(), q.coefficients()))
    }

    fn distance(&self, f: &RkhsFunction, g: &RkhsFunction) -> Result<f64> {
        Ok(f.add_scaled(-1.0, g)?.norm())
    }

    fn dual_step(&self, q: &RkhsFunction, s: &RkhsFunction, eta: f64) -> Result<RkhsFunction> {
        q.check_same_space(s)?;
        let mut c = q.coefficients().clone();
        c.axpy(-eta, s.coefficients(), 1.0);
        RkhsFunction::from_coefficients(q.space(), c)
    }

    fn project(&self, domain: &DecisionDomain, f: RkhsFunction) -> Result<RkhsFunction> {
        match *domain {
            DecisionDomain::WholeSpace => Ok(f),
            DecisionDomain::RkhsBall { radius } => {
                let norm = f.norm();
                if norm <= radius {
                    Ok(f)
                } else {
                    Ok(f.scaled(radius / norm))
                }
            }
            DecisionDomain::ProbabilitySimplex { .. } => Err(Error::IncompatibleDomain(format!(
                "quadratic RKHS geometry cannot project onto {}",
                domain.name()
            ))),
        }
    }

    fn combine(&self, weights: &[f64], points: &[&RkhsFunction]) -> Result<RkhsFunction> {
        linear_combine(weights, points)
    }
}

/// A strictly positive finite measure on a fixed grid, stored as log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveMeasure {
    log_weights: DVector<f64>,
}

impl PositiveMeasure {
    /// Zero weights are floored at `exp(LOG_WEIGHT_FLOOR)`.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("empty weight vector".into()));
        }
        let mut log_weights = DVector::zeros(weights.len());
        for (k, &w) in weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("weight {k} is {w}")));
            }
            log_weights[k] = w.ln().max(LOG_WEIGHT_FLOOR);
        }
        Ok(PositiveMeasure { log_weights })
    }

    pub fn from_log_weights(log_weights: DVector<f64>) -> Result<Self> {
        if log_weights.is_empty()
            || log_weights
                .iter()
                .any(|l| l.is_nan() || *l == f64::INFINITY)
        {
            return Err(Error::InvalidParameter(
                "log-weights must be nonempty and below +inf".into(),
            ));
        }
        Ok(PositiveMeasure {
            log_weights: log_weights.map(|l| l.max(LOG_WEIGHT_FLOOR)),
        })
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    pub fn weights(&self) -> DVector<f64> {
        self.log_weights.map(f64::exp)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights().sum()
    }

    fn log_total_mass(&self) -> f64 {
        log_sum_exp(self.log_weights.iter().copied())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A point in the interior of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(PositiveMeasure);

impl ProbabilityVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: &[f64]) -> Result<Self> {
        let measure = PositiveMeasure::from_weights(weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(ProbabilityVector(measure))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("empty simplex".into()));
        }
        Ok(ProbabilityVector(PositiveMeasure {
            log_weights: DVector::from_element(n, -(n as f64).ln()),
        }))
    }

    /// Rescales a positive measure to unit mass.
    pub fn normalize(measure: PositiveMeasure) -> Self {
        let log_mass = measure.log_total_mass();
        ProbabilityVector(PositiveMeasure {
            log_weights: measure
                .log_weights
                .map(|l| (l - log_mass).max(LOG_WEIGHT_FLOOR)),
        })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> DVector<f64> {
        self.0.weights()
    }

    pub fn measure(&self) -> &PositiveMeasure {
        &self.0
    }

    pub fn into_measure(self) -> PositiveMeasure {
        self.0
    }
}

/// Negative entropy `Ψ(p) = Σ p_j log p_j` on positive measures of a fixed
/// size. Its Bregman divergence is the generalized KL divergence, which is the
/// plain KL divergence on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntropyGeometry {
    size: usize,
}

pub fn entropy_geometry(size: usize) -> Result<EntropyGeometry> {
    if size < 2 {
        return Err(Error::InvalidParameter(format!(
            "entropy geometry needs n >= 2, got {size}"
        )));
    }
    Ok(EntropyGeometry { size })
}

impl EntropyGeometry {
    pub fn size(&self) -> usize {
        self.size
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.size {
            return Err(Error::DimMismatch {
                expected: self.size,
                got: len,
            });
        }
        Ok(())
    }
}

/// `KL(p‖q) = Σ p_j log(p_j / q_j)` for probability vectors.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    let g = entropy_geometry(p.len().max(2))?;
    g.bregman(p.measure(), q.measure())
}

impl MirrorGeometry for EntropyGeometry {
    type Point = PositiveMeasure;
    type Dual = DVector<f64>;

    /// With respect to the 1-norm on the simplex (Pinsker).
    fn modulus(&self) -> f64 {
        1.0
    }

    fn forward(&self, f: &PositiveMeasure) -> Result<DVector<f64>> {
        self.check(f.len())?;
        Ok(f.log_weights.add_scalar(1.0))
    }

    fn inverse(&self, q: &DVector<f64>) -> Result<PositiveMeasure> {
        self.check(q.len())?;
        PositiveMeasure::from_log_weights(q.add_scalar(-1.0))
    }

    fn bregman(&self, f: &PositiveMeasure, g: &PositiveMeasure) -> Result<f64> {
        self.check(f.len())?;
        self.check(g.len())?;
        let mut total = 0.0;
        for (lf, lg) in f.log_weights.iter().zip(g.log_weights.iter()) {
            let (pf, pg) = (lf.exp(), lg.exp());
            total += pf * (lf - lg) - pf + pg;
        }
        Ok(total.max(0.0))
    }

    fn pairing(&self, f: &PositiveMeasure, g: &PositiveMeasure, q: &DVector<f64>) -> Result<f64> {
        self.check(f.len())?;
        self.check(g.len())?;
        self.check(q.len())?;
        Ok((f.weights() - g.weights()).dot(q))
    }

    fn distance(&self, f: &PositiveMeasure, g: &PositiveMeasure) -> Result<f64> {
        self.check(f.len())?;
        self.check(g.len())?;
        Ok((f.weights() - g.weights()).lp_norm(1))
    }

    fn dual_step(&self, q: &DVector<f64>, s: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        self.check(q.len())?;
        self.check(s.len())?;
        let mut out = q.clone();
        out.axpy(-eta, s, 1.0);
        Ok(out)
    }

    fn project(&self, domain: &DecisionDomain, f: PositiveMeasure) -> Result<PositiveMeasure> {
        match *domain {
            DecisionDomain::WholeSpace => Ok(f),
            DecisionDomain::ProbabilitySimplex { size } => {
                self.check(size)?;
                self.check(f.len())?;
                Ok(ProbabilityVector::normalize(f).into_measure())
            }
            DecisionDomain::RkhsBall { .. } => Err(Error::IncompatibleDomain(format!(
                "entropy geometry cannot project onto {}",
                domain.name()
            ))),
        }
    }

    fn combine(&self, weights: &[f64], points: &[&PositiveMeasure]) -> Result<PositiveMeasure> {
        if weights.len() != points.len() || points.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        for p in points {
            self.check(p.len())?;
        }
        let active: Vec<(f64, &PositiveMeasure)> = weights
            .iter()
            .zip(points)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, p)| (a.ln(), *p))
            .collect();
        if active.is_empty() {
            return Err(Error::InvalidParameter("no positive mixing weight".into()));
        }
        let log_weights = DVector::from_fn(self.size, |k, _| {
            log_sum_exp(active.iter().map(move |(la, p)| la + p.log_weights[k]))
        });
        PositiveMeasure::from_log_weights(log_weights)
    }
}

/// Stages 1 to 3 for one agent: `Π((∂Ψ)^{-1}(∂Ψ(f) − η s))`.
pub fn mirror_local_step<G: MirrorGeometry>(
    geometry: &G,
    domain: &DecisionDomain,
    f: &G::Point,
    subgradient: &G::Dual,
    eta: f64,
) -> Result<G::Point> {
    let q = geometry.forward(f)?;
    let h = geometry.dual_step(&q, subgradient, eta)?;
    geometry.project(domain, geometry.inverse(&h)?)
}

/// One DFMD iteration with precomputed subgradients.
pub fn dfmd_step<G: MirrorGeometry>(
    geometry: &G,
    domain: &DecisionDomain,
    states: &[G::Point],
    mixing: &MixingMatrix,
    subgradients: &[G::Dual],
    eta: f64,
) -> Result<Vec<G::Point>> {
    mixing.ensure_doubly_stochastic()?;
    if states.len() != mixing.size() || subgradients.len() != mixing.size() {
        return Err(Error::InvalidParameter(format!(
            "{} states, {} subgradients, {}x{} mixing matrix",
            states.len(),
            subgradients.len(),
            mixing.size(),
            mixing.size()
        )));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be >= 0, got {eta}"
        )));
    }
    let local = states
        .par_iter()
        .zip(subgradients.par_iter())
        .map(|(f, s)| mirror_local_step(geometry, domain, f, s, eta))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&G::Point> = local.iter().collect();
    (0..mixing.size())
        .map(|i| geometry.combine(&mixing.row(i), &refs))
        .collect()
}

/// DFMD on the RKHS with the quadratic mirror map. Only convex losses are
/// accepted.
pub fn run_dfmd_rkhs(
    config: &RunConfig,
    domain: &DecisionDomain,
    schedule: &MixingSchedule,
    global: &GlobalRisk,
    initial: Vec<RkhsFunction>,
) -> Result<RunTrajectory<RkhsFunction>> {
    if let Some(r) = global.locals().iter().find(|r| !r.loss().is_convex()) {
        return Err(Error::NonconvexLoss(r.loss().kind().name()));
    }
    let geometry = QuadraticGeometry;
    if let DecisionDomain::ProbabilitySimplex { .. } = domain {
        geometry.project(domain, RkhsFunction::zero(global.space()))?;
    }
    let eta = config.step_size();
    if config.horizon == 0 || config.record.stride == 0 || !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need T >= 1, stride >= 1 and a finite step, got T={} stride={} eta={eta}",
            config.horizon, config.record.stride
        )));
    }
    let risks = global.locals();
    if initial.len() != risks.len() || schedule.agents() != risks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} initial states, {} agents in the objective, {} in the schedule",
            initial.len(),
            risks.len(),
            schedule.agents()
        )));
    }
    let opts = config.record;
    let initial_norm_sum = initial.iter().map(|f| f.norm()).sum();
    let mut sums: Vec<DVector<f64>> = initial
        .iter()
        .map(|f| DVector::zeros(f.coefficients().len()))
        .collect();
    let mut records = Vec::new();
    let mut snapshots = opts.snapshots.then(Vec::new);
    let mut empirical_g: f64 = 0.0;
    let mut states = initial;

    for t in 1..=config.horizon {
        for (s, f) in sums.iter_mut().zip(&states) {
            *s += f.coefficients();
        }
        let grads: Vec<(DVector<f64>, f64)> = states
            .par_iter()
            .zip(risks.par_iter())
            .map(|(f, r)| r.gradient_with_norm(f.coefficients()))
            .collect();
        let mut subgradients = Vec::with_capacity(grads.len());
        for (g, norm) in grads {
            empirical_g = empirical_g.max(norm);
            subgradients.push(RkhsFunction::from_coefficients(global.space(), g)?);
        }
        let next = dfmd_step(
            &geometry,
            domain,
            &states,
            &schedule.matrix(t),
            &subgradients,
            eta,
        )?;
        if (t - 1) % opts.stride == 0 {
            records.push(record_iterate(t, &states, global, &opts, empirical_g)?);
            if let Some(snaps) = snapshots.as_mut() {
                snaps.push(states.clone());
            }
        }
        states = next;
    }

    let inv = 1.0 / config.horizon as f64;
    let ergodic = sums
        .into_iter()
        .map(|s| RkhsFunction::from_coefficients(global.space(), s * inv))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunTrajectory {
        horizon: config.horizon,
        stride: opts.stride,
        eta,
        records,
        snapshots,
        ergodic,
        final_states: states,
        initial_norm_sum,
        empirical_g,
    })
}

/// `J(p) = ⟨c, p⟩ + (w/2)‖p − p°‖² + const` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFunctional {
    pub linear: DVector<f64>,
    pub curvature: f64,
    pub center: DVector<f64>,
    pub constant: f64,
}

impl SimplexFunctional {
    pub fn linear(c: Vec<f64>) -> Self {
        let n = c.len();
        SimplexFunctional {
            linear: DVector::from_vec(c),
            curvature: 0.0,
            center: DVector::zeros(n),
            constant: 0.0,
        }
    }

    pub fn quadratic(curvature: f64, center: Vec<f64>) -> Result<Self> {
        if !(curvature >= 0.0 && curvature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "curvature must be >= 0, got {curvature}"
            )));
        }
        let n = center.len();
        Ok(SimplexFunctional {
            linear: DVector::zeros(n),
            curvature,
            center: DVector::from_vec(center),
            constant: 0.0,
        })
    }

    pub fn with_linear(mut self, c: Vec<f64>) -> Result<Self> {
        if c.len() != self.center.len() {
            return Err(Error::DimMismatch {
                expected: self.center.len(),
                got: c.len(),
            });
        }
        self.linear = DVector::from_vec(c);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn value_weights(&self, p: &DVector<f64>) -> f64 {
        let d = p - &self.center;
        self.linear.dot(p) + 0.5 * self.curvature * d.norm_squared() + self.constant
    }

    pub fn gradient_weights(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.linear + (p - &self.center) * self.curvature
    }

    pub fn value(&self, p: &ProbabilityVector) -> f64 {
        self.value_weights(&p.weights())
    }

    pub fn gradient(&self, p: &ProbabilityVector) -> DVector<f64> {
        self.gradient_weights(&p.weights())
    }

    /// The functional `Σ_i J_i`, rewritten in the same form.
    pub fn sum(parts: &[SimplexFunctional]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty functional list".into()))?;
        let n = first.len();
        let mut linear = DVector::zeros(n);
        let mut curvature = 0.0;
        let mut weighted_center = DVector::zeros(n);
        let mut constant = 0.0;
        for f in parts {
            if f.len() != n || f.center.len() != n {
                return Err(Error::DimMismatch {
                    expected: n,
                    got: f.len(),
                });
            }
            linear += &f.linear;
            curvature += f.curvature;
            weighted_center += &f.center * f.curvature;
            constant += f.constant + 0.5 * f.curvature * f.center.norm_squared();
        }
        let center = if curvature > 0.0 {
            weighted_center / curvature
        } else {
            DVector::zeros(n)
        };
        constant -= 0.5 * curvature * center.norm_squared();
        Ok(SimplexFunctional {
            linear,
            curvature,
            center,
            constant,
        })
    }
}

fn simplex_record(
    t: usize,
    states: &[PositiveMeasure],
    total: &SimplexFunctional,
    opts: &crate::dfgd::RecordOptions,
    empirical_g: f64,
) -> IterateRecord {
    let weights: Vec<DVector<f64>> = states.iter().map(|p| p.weights()).collect();
    let objective = if opts.objective {
        weights.iter().map(|w| total.value_weights(w)).collect()
    } else {
        Vec::new()
    };
    let consensus = if opts.consensus {
        let mean = weights
            .iter()
            .fold(DVector::zeros(total.len()), |a, w| a + w)
            / weights.len() as f64;
        weights.iter().map(|w| (w - &mean).lp_norm(1)).collect()
    } else {
        Vec::new()
    };
    let gradient_norms = if opts.gradient_norm {
        weights
            .iter()
            .map(|w| total.gradient_weights(w).amax())
            .collect()
    } else {
        Vec::new()
    };
    IterateRecord {
        t,
        objective,
        consensus,
        gradient_norms,
        empirical_g,
    }
}

/// DFMD with the entropy mirror map on the probability simplex. Recorded
/// consensus is the 1-norm deviation from the network mean; gradient norms
/// are sup-norms, the dual of the 1-norm.
pub fn run_ms_dfmd(
    config: &RunConfig,
    schedule: &MixingSchedule,
    functionals: &[SimplexFunctional],
    initial: Vec<ProbabilityVector>,
) -> Result<RunTrajectory<ProbabilityVector>> {
    let m = functionals.len();
    if initial.len() != m || schedule.agents() != m {
        return Err(Error::InvalidParameter(format!(
            "{} initial states, {} functionals, {} agents in the schedule",
            initial.len(),
            m,
            schedule.agents()
        )));
    }
    let n = functionals[0].len();
    let geometry = entropy_geometry(n)?;
    let domain = DecisionDomain::simplex(n)?;
    for f in functionals {
        if f.len() != n || f.center.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: f.len(),
            });
        }
    }
    for p in &initial {
        geometry.check(p.len())?;
    }
    let total = SimplexFunctional::sum(functionals)?;
    let eta = config.step_size();
    if config.horizon == 0 || config.record.stride == 0 || !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need T >= 1, stride >= 1 and a finite step, got T={} stride={} eta={eta}",
            config.horizon, config.record.stride
        )));
    }
    let opts = config.record;
    let initial_norm_sum = initial.iter().map(|p| p.weights().lp_norm(1)).sum();
    let mut states: Vec<PositiveMeasure> = initial
        .into_iter()
        .map(ProbabilityVector::into_measure)
        .collect();
    let mut sums = vec![DVector::<f64>::zeros(n); m];
    let mut records = Vec::new();
    let mut snapshots: Option<Vec<Vec<ProbabilityVector>>> = opts.snapshots.then(Vec::new);
    let mut empirical_g: f64 = 0.0;

    for t in 1..=config.horizon {
        let weights: Vec<DVector<f64>> = states.iter().map(|p| p.weights()).collect();
        for (s, w) in sums.iter_mut().zip(&weights) {
            *s += w;
        }
        let subgradients: Vec<DVector<f64>> = functionals
            .iter()
            .zip(&weights)
            .map(|(f, w)| f.gradient_weights(w))
            .collect();
        for s in &subgradients {
            empirical_g = empirical_g.max(s.amax());
        }
        let next = dfmd_step(
            &geometry,
            &domain,
            &states,
            &schedule.matrix(t),
            &subgradients,
            eta,
        )?;
        if (t - 1) % opts.stride == 0 {
            records.push(simplex_record(t, &states, &total, &opts, empirical_g));
            if let Some(snaps) = snapshots.as_mut() {
                snaps.push(states.iter().cloned().map(ProbabilityVector).collect());
            }
        }
        states = next;
    }

    let inv = 1.0 / config.horizon as f64;
    let ergodic = sums
        .into_iter()
        .map(|s| {
            Ok(ProbabilityVector::normalize(PositiveMeasure::from_weights(
                (s * inv).as_slice(),
            )?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunTrajectory {
        horizon: config.horizon,
        stride: opts.stride,
        eta,
        records,
        snapshots,
        ergodic,
        final_states: states.into_iter().map(ProbabilityVector).collect(),
        initial_norm_sum,
        empirical_g,
    })
}

/// `J(μ̃_{ℓ,T}) − J*` for every agent's ergodic average.
pub fn ms_dfmd_errors(
    trajectory: &RunTrajectory<ProbabilityVector>,
    functionals: &[SimplexFunctional],
    optimal_value: f64,
) -> Result<Vec<f64>> {
    let total = SimplexFunctional::sum(functionals)?;
    Ok(trajectory
        .ergodic
        .iter()
        .map(|p| total.value(p) - optimal_value)
        .collect())
}

/// `⟨f − h, ∂Ψ(f) − ∂Ψ(g)⟩ − [D(f‖g) + D(h‖f) − D(h‖g)]`, zero up to rounding.
pub fn three_point_gap<G: MirrorGeometry>(
    geometry: &G,
    f: &G::Point,
    g: &G::Point,
    h: &G::Point,
) -> Result<f64> {
    let lhs = geometry.pairing(f, h, &geometry.forward(f)?)?
        - geometry.pairing(f, h, &geometry.forward(g)?)?;
    let rhs = geometry.bregman(f, g)? + geometry.bregman(h, f)? - geometry.bregman(h, g)?;
    Ok(lhs - rhs)
}

/// `D(f‖Σ a_j g_j) − Σ a_j D(f‖g_j)`, nonpositive under separate convexity.
pub fn separate_convexity_gap<G: MirrorGeometry>(
    geometry: &G,
    f: &G::Point,
    weights: &[f64],
    points: &[&G::Point],
) -> Result<f64> {
    let mixed = geometry.combine(weights, points)?;
    let mut avg = 0.0;
    for (a, g) in weights.iter().zip(points) {
        avg += a * geometry.bregman(f, g)?;
    }
    Ok(geometry.bregman(f, &mixed)? - avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate;
    use crate::dfgd::{dfgd_step, run_dfgd, RecordOptions, StepRule};
    use crate::kernel::{CenterSet, MercerKernel, RkhsSpace};
    use crate::losses::{LossKind, LossSpec};
    use crate::network::ring_schedule;
    use crate::objective::LocalRisk;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn risks(loss: LossSpec) -> (Arc<RkhsSpace>, GlobalRisk) {
        let data = generate(3, 3, 2, 11).unwrap();
        let space = RkhsSpace::new(
            MercerKernel::gaussian(0.7).unwrap(),
            CenterSet::new(data.all_inputs()).unwrap(),
        )
        .unwrap();
        let locals = data
            .agents
            .iter()
            .map(|a| LocalRisk::new(&space, a.clone(), loss, 0.0, 1.0 / 3.0).unwrap())
            .collect();
        (space.clone(), GlobalRisk::new(locals).unwrap())
    }

    #[test]
    fn quadratic_examples() {
        let space = RkhsSpace::new(
            MercerKernel::gaussian(1.0).unwrap(),
            CenterSet::new(vec![vec![0.0]]).unwrap(),
        )
        .unwrap();
        let atom = RkhsFunction::atom(&space, 0);
        let g = quadratic_geometry();
        assert_eq!(g.bregman(&atom, &atom).unwrap(), 0.0);
        assert_eq!(g.bregman(&atom, &RkhsFunction::zero(&space)).unwrap(), 0.5);
        let two = atom.scaled(2.0);
        let ball = DecisionDomain::rkhs_ball(1.0).unwrap();
        assert_eq!(g.project(&ball, two).unwrap().coefficients()[0], 1.0);
        assert!(DecisionDomain::rkhs_ball(0.0).is_err());
        let err = g
            .project(&DecisionDomain::simplex(3).unwrap(), atom)
            .unwrap_err();
        assert_eq!(err.code(), "incompatible-domain");
    }

    #[test]
    fn kl_examples() {
        let p = ProbabilityVector::new(&[0.75, 0.25]).unwrap();
        let q = ProbabilityVector::new(&[0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let u = ProbabilityVector::uniform(4).unwrap();
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), 0.130812, epsilon = 1e-6);
    }

    #[test]
    fn entropy_maps_round_trip() {
        let g = entropy_geometry(3).unwrap();
        let p = PositiveMeasure::from_weights(&[0.2, 1.5, 3e-5]).unwrap();
        let back = g.inverse(&g.forward(&p).unwrap()).unwrap();
        assert!((back.weights() - p.weights()).amax() < 1e-10);
        assert!(entropy_geometry(1).is_err());
        let zero = PositiveMeasure::from_weights(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(zero.log_weights()[0], LOG_WEIGHT_FLOOR);
        assert!(ProbabilityVector::new(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn multiplicative_weights_example() {
        let g = entropy_geometry(2).unwrap();
        let p = ProbabilityVector::uniform(2).unwrap().into_measure();
        let one = MixingMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let out = dfmd_step(
            &g,
            &DecisionDomain::simplex(2).unwrap(),
            &[p],
            &one,
            &[s],
            2f64.ln(),
        )
        .unwrap();
        let w = out[0].weights();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn entropy_step_is_multiplicative_update() {
        let g = entropy_geometry(4).unwrap();
        let p = [0.1, 0.2, 0.3, 0.4];
        let s = [0.5, -1.0, 2.0, 0.0];
        let eta = 0.3;
        let out = mirror_local_step(
            &g,
            &DecisionDomain::simplex(4).unwrap(),
            &PositiveMeasure::from_weights(&p).unwrap(),
            &DVector::from_row_slice(&s),
            eta,
        )
        .unwrap();
        let raw: Vec<f64> = p
            .iter()
            .zip(&s)
            .map(|(p, s)| p * (-eta * s).exp())
            .collect();
        let z: f64 = raw.iter().sum();
        for (k, w) in out.weights().iter().enumerate() {
            assert_abs_diff_eq!(*w, raw[k] / z, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_subgradient_only_mixes() {
        let g = entropy_geometry(3).unwrap();
        let dom = DecisionDomain::simplex(3).unwrap();
        let states = vec![
            ProbabilityVector::new(&[0.2, 0.3, 0.5])
                .unwrap()
                .into_measure(),
            ProbabilityVector::new(&[0.6, 0.2, 0.2])
                .unwrap()
                .into_measure(),
        ];
        let p = MixingMatrix::new(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let zeros = vec![DVector::zeros(3); 2];
        let out = dfmd_step(&g, &dom, &states, &p, &zeros, 0.9).unwrap();
        for o in out {
            let w = o.weights();
            assert!((w - DVector::from_vec(vec![0.4, 0.25, 0.35])).amax() < 1e-15);
        }
    }

    #[test]
    fn reduces_to_dfgd() {
        let (space, global) = risks(LossSpec::half_squared());
        let sched = ring_schedule(3).unwrap();
        let eta = 0.4;
        let mut a: Vec<_> = (0..3).map(|_| RkhsFunction::zero(&space)).collect();
        let mut b = a.clone();
        for t in 1..=30 {
            let subs: Vec<_> = b
                .iter()
                .zip(global.locals())
                .map(|(f, r)| {
                    RkhsFunction::from_coefficients(
                        &space,
                        r.gradient_coefficients(f.coefficients()),
                    )
                    .unwrap()
                })
                .collect();
            a = dfgd_step(&a, &sched.matrix(t), global.locals(), eta).unwrap();
            b = dfmd_step(
                &QuadraticGeometry,
                &DecisionDomain::WholeSpace,
                &b,
                &sched.matrix(t),
                &subs,
                eta,
            )
            .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x.coefficients() - y.coefficients()).amax() <= 1e-12);
            }
        }
        let cfg = RunConfig::new(25, StepRule::InverseSqrtHorizon);
        let init = vec![RkhsFunction::zero(&space); 3];
        let x = run_dfgd(&cfg, &sched, &global, init.clone()).unwrap();
        let y = run_dfmd_rkhs(&cfg, &DecisionDomain::WholeSpace, &sched, &global, init).unwrap();
        assert_eq!(x.records, y.records);
        for (p, q) in x.ergodic.iter().zip(&y.ergodic) {
            assert!((p.coefficients() - q.coefficients()).amax() <= 1e-12);
        }
    }

    #[test]
    fn ball_keeps_states_inside() {
        let (space, global) = risks(LossSpec::squared());
        let sched = ring_schedule(3).unwrap();
        let cfg = RunConfig::new(40, StepRule::Constant(2.0)).with_record(RecordOptions {
            snapshots: true,
            ..RecordOptions::default()
        });
        let ball = DecisionDomain::rkhs_ball(0.25).unwrap();
        let traj = run_dfmd_rkhs(
            &cfg,
            &ball,
            &sched,
            &global,
            vec![RkhsFunction::zero(&space); 3],
        )
        .unwrap();
        for states in traj.snapshots.unwrap() {
            for f in states {
                assert!(f.norm() <= 0.25 + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonconvex_loss() {
        let (space, global) = risks(LossSpec::new(LossKind::Welsch, 1.0).unwrap());
        let sched = ring_schedule(3).unwrap();
        let cfg = RunConfig::new(5, StepRule::InverseSqrtHorizon);
        let err = run_dfmd_rkhs(
            &cfg,
            &DecisionDomain::WholeSpace,
            &sched,
            &global,
            vec![RkhsFunction::zero(&space); 3],
        )
        .unwrap_err();
        assert_eq!(err.code(), "nonconvex-loss");
    }

    #[test]
    fn identical_linear_functionals_move_to_vertex() {
        let c = vec![0.7, 0.2, 0.9];
        let fs = vec![SimplexFunctional::linear(c); 4];
        let sched = ring_schedule(4).unwrap();
        let cfg = RunConfig::new(2000, StepRule::InverseSqrtHorizon);
        let traj = run_ms_dfmd(
            &cfg,
            &sched,
            &fs,
            vec![ProbabilityVector::uniform(3).unwrap(); 4],
        )
        .unwrap();
        for p in &traj.final_states {
            assert!(p.weights()[1] > 0.99, "{:?}", p.weights());
        }
    }

    #[test]
    fn single_agent_quadratic_approaches_center() {
        let center = vec![0.2, 0.5, 0.3];
        let f = SimplexFunctional::quadratic(1.0, center.clone()).unwrap();
        let one = MixingSchedule::custom(
            vec![MixingMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap()],
            1,
            1.0,
        )
        .unwrap();
        let cfg = RunConfig::new(3000, StepRule::Constant(0.5));
        let traj = run_ms_dfmd(
            &cfg,
            &one,
            &[f],
            vec![ProbabilityVector::uniform(3).unwrap()],
        )
        .unwrap();
        let w = traj.final_states[0].weights();
        assert!((w - DVector::from_vec(center)).amax() < 1e-6);
    }

    #[test]
    fn functional_sum_matches_parts() {
        let parts = vec![
            SimplexFunctional::quadratic(1.0, vec![0.1, 0.6, 0.3])
                .unwrap()
                .with_linear(vec![0.2, -0.1, 0.0])
                .unwrap(),
            SimplexFunctional::quadratic(3.0, vec![0.5, 0.5, 0.0]).unwrap(),
            SimplexFunctional::linear(vec![1.0, 2.0, -1.0]),
        ];
        let total = SimplexFunctional::sum(&parts).unwrap();
        let p = DVector::from_vec(vec![0.3, 0.3, 0.4]);
        let direct: f64 = parts.iter().map(|f| f.value_weights(&p)).sum();
        assert_abs_diff_eq!(total.value_weights(&p), direct, epsilon = 1e-14);
        let grad: DVector<f64> = parts
            .iter()
            .map(|f| f.gradient_weights(&p))
            .fold(DVector::zeros(3), |a, g| a + g);
        assert!((total.gradient_weights(&p) - grad).amax() < 1e-14);
    }

    #[test]
    fn geometry_identities_on_examples() {
        let g = entropy_geometry(3).unwrap();
        let f = PositiveMeasure::from_weights(&[0.2, 0.5, 0.9]).unwrap();
        let a = PositiveMeasure::from_weights(&[1.0, 0.1, 0.4]).unwrap();
        let b = PositiveMeasure::from_weights(&[0.3, 0.3, 0.3]).unwrap();
        assert!(three_point_gap(&g, &f, &a, &b).unwrap().abs() < 1e-12);
        assert!(separate_convexity_gap(&g, &f, &[0.3, 0.7], &[&a, &b]).unwrap() <= 1e-12);

        let (space, _) = risks(LossSpec::half_squared());
        let q = QuadraticGeometry;
        let mk = |s: f64| {
            RkhsFunction::from_coefficients(
                &space,
                DVector::from_fn(9, |k, _| (s * k as f64).sin()),
            )
            .unwrap()
        };
        let (x, y, z) = (mk(0.3), mk(1.1), mk(2.3));
        assert!(three_point_gap(&q, &x, &y, &z).unwrap().abs() < 1e-12);
        assert!(separate_convexity_gap(&q, &x, &[0.5, 0.5], &[&y, &z]).unwrap() <= 1e-12);
    }
}
