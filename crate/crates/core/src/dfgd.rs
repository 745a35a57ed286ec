//! Distributed functional gradient descent over the RKHS.
//!
//! Each iteration every agent takes a local gradient step
//! `h_i = f_i − η D J_i(f_i)` and then averages with its neighbors,
//! `f_i ← Σ_j [P_t]_ij h_j`. The local stage runs in parallel across agents;
//! mixing waits for all of them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{linear_combine, RkhsFunction};
use crate::network::{MixingBoundParams, MixingMatrix, MixingSchedule};
use crate::objective::{GlobalRisk, LocalRisk};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Constant(f64),
    /// `η = 1/√T`.
    InverseSqrtHorizon,
    /// `η = 1/(2L√(T+3))`.
    SmoothRate {
        smoothness: f64,
    },
}

impl StepRule {
    pub fn step_size(&self, horizon: usize) -> f64 {
        match *self {
            StepRule::Constant(eta) => eta,
            StepRule::InverseSqrtHorizon => 1.0 / (horizon as f64).sqrt(),
            StepRule::SmoothRate { smoothness } => {
                1.0 / (2.0 * smoothness * (horizon as f64 + 3.0).sqrt())
            }
        }
    }
}

/// Which per-iterate metrics to record, and how often.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    pub stride: usize,
    /// `J(f_{i,t})` for every agent.
    pub objective: bool,
    /// `‖f_{i,t} − f̄_t‖`.
    pub consensus: bool,
    /// `‖D J(f_{i,t})‖` of the global objective.
    pub gradient_norm: bool,
    /// Keep every recorded state.
    pub snapshots: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            stride: 1,
            objective: true,
            consensus: true,
            gradient_norm: true,
            snapshots: false,
        }
    }
}

impl RecordOptions {
    pub fn nothing() -> Self {
        RecordOptions {
            stride: usize::MAX,
            objective: false,
            consensus: false,
            gradient_norm: false,
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub horizon: usize,
    pub step: StepRule,
    pub record: RecordOptions,
}

impl RunConfig {
    pub fn new(horizon: usize, step: StepRule) -> Self {
        RunConfig {
            horizon,
            step,
            record: RecordOptions::default(),
        }
    }

    pub fn with_record(mut self, record: RecordOptions) -> Self {
        self.record = record;
        self
    }

    pub fn step_size(&self) -> f64 {
        self.step.step_size(self.horizon)
    }

    fn validate(&self) -> Result<f64> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter(
                "horizon T must be at least 1".into(),
            ));
        }
        if self.record.stride == 0 {
            return Err(Error::InvalidParameter(
                "record stride must be at least 1".into(),
            ));
        }
        let eta = self.step_size();
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be finite and >= 0, got {eta}"
            )));
        }
        Ok(eta)
    }
}

/// Warnings for a constant step outside `0 < η < min{2m/μ, 1/(4L)}`. The range
/// is sufficient for the last-iterate guarantee, not necessary, so callers
/// log these rather than fail.
pub fn check_constant_step(
    eta: f64,
    agents: usize,
    mu: Option<f64>,
    smoothness: Option<f64>,
) -> Vec<String> {
    let mut warnings = Vec::new();
    if let Some(mu) = mu.filter(|mu| *mu > 0.0) {
        let cap = 2.0 * agents as f64 / mu;
        if eta >= cap {
            warnings.push(format!("step {eta} >= 2m/mu = {cap}"));
        }
    }
    if let Some(l) = smoothness.filter(|l| *l > 0.0) {
        let cap = 1.0 / (4.0 * l);
        if eta >= cap {
            warnings.push(format!("step {eta} >= 1/(4L) = {cap}"));
        }
    }
    warnings
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub t: usize,
    pub objective: Vec<f64>,
    pub consensus: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    /// Largest local gradient norm `‖D J_i(f_{i,s})‖` over all `s ≤ t`.
    pub empirical_g: f64,
}

/// Per-iteration history of a run plus its ergodic averages.
#[derive(Debug, Clone)]
pub struct RunTrajectory<P> {
    pub horizon: usize,
    pub stride: usize,
    pub eta: f64,
    pub records: Vec<IterateRecord>,
    /// States at recorded iterates, when requested.
    pub snapshots: Option<Vec<Vec<P>>>,
    /// `f̃_{ℓ,T} = (1/T) Σ_{t=1}^T f_{ℓ,t}` for every agent.
    pub ergodic: Vec<P>,
    /// `f_{ℓ,T+1}`.
    pub final_states: Vec<P>,
    /// `Σ_i ‖f_{i,1}‖`.
    pub initial_norm_sum: f64,
    /// Largest local gradient norm seen during the run.
    pub empirical_g: f64,
}

/// Local stage for one agent: `(h_i, ‖D J_i(f_i)‖)`.
fn local_step(risk: &LocalRisk, c: &DVector<f64>, eta: f64) -> (DVector<f64>, f64) {
    let (g, norm) = risk.gradient_with_norm(c);
    let mut h = c.clone();
    h.axpy(-eta, &g, 1.0);
    (h, norm)
}

fn check_agents(states: &[RkhsFunction], mixing: &MixingMatrix, risks: &[LocalRisk]) -> Result<()> {
    if states.len() != risks.len() || states.len() != mixing.size() {
        return Err(Error::InvalidParameter(format!(
            "{} states, {} risks, {}x{} mixing matrix",
            states.len(),
            risks.len(),
            mixing.size(),
            mixing.size()
        )));
    }
    for (f, r) in states.iter().zip(risks) {
        f.check_same_space(&RkhsFunction::zero(r.space()))?;
    }
    Ok(())
}

fn mix(mixing: &MixingMatrix, h: &[RkhsFunction]) -> Result<Vec<RkhsFunction>> {
    let refs: Vec<&RkhsFunction> = h.iter().collect();
    (0..mixing.size())
        .map(|i| linear_combine(&mixing.row(i), &refs))
        .collect()
}

fn step_with_norms(
    states: &[RkhsFunction],
    mixing: &MixingMatrix,
    risks: &[LocalRisk],
    eta: f64,
) -> Result<(Vec<RkhsFunction>, Vec<f64>)> {
    mixing.ensure_doubly_stochastic()?;
    check_agents(states, mixing, risks)?;
    let local: Vec<(DVector<f64>, f64)> = states
        .par_iter()
        .zip(risks.par_iter())
        .map(|(f, r)| local_step(r, f.coefficients(), eta))
        .collect();
    let mut norms = Vec::with_capacity(local.len());
    let mut h = Vec::with_capacity(local.len());
    for ((c, norm), f) in local.into_iter().zip(states) {
        norms.push(norm);
        h.push(RkhsFunction::from_coefficients(f.space(), c)?);
    }
    Ok((mix(mixing, &h)?, norms))
}

/// One DFGD iteration. Returns the post-mixing states.
pub fn dfgd_step(
    states: &[RkhsFunction],
    mixing: &MixingMatrix,
    risks: &[LocalRisk],
    eta: f64,
) -> Result<Vec<RkhsFunction>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be >= 0, got {eta}"
        )));
    }
    Ok(step_with_norms(states, mixing, risks, eta)?.0)
}

/// Coefficient matrix with one column per agent.
pub fn stack_columns(states: &[RkhsFunction]) -> DMatrix<f64> {
    let cols: Vec<_> = states.iter().map(|f| f.coefficients().clone()).collect();
    DMatrix::from_columns(&cols)
}

/// The network average `f̄ = (1/m) Σ_i f_i`.
pub fn network_average(states: &[RkhsFunction]) -> Result<RkhsFunction> {
    let w = vec![1.0 / states.len() as f64; states.len()];
    linear_combine(&w, &states.iter().collect::<Vec<_>>())
}

/// `‖f_i − f̄‖_{H_K}` for every agent.
pub fn consensus_errors(states: &[RkhsFunction]) -> Result<Vec<f64>> {
    let avg = network_average(states)?;
    let mut dev = stack_columns(states);
    for mut col in dev.column_iter_mut() {
        col -= avg.coefficients();
    }
    Ok(states[0].space().column_norms(&dev))
}

/// Right-hand side of the consensus inequality specialised to the quadratic
/// mirror map (`σ = 1`):
/// `ω γ^{t−1} Σ_i ‖f_{i,1}‖ + m ω Ĝ η / (1 − γ)`.
pub fn consensus_bound(
    params: MixingBoundParams,
    agents: usize,
    initial_norm_sum: f64,
    empirical_g: f64,
    eta: f64,
    t: usize,
) -> f64 {
    let decay = params.omega * params.gamma.powi(t.saturating_sub(1) as i32) * initial_norm_sum;
    decay + agents as f64 * params.omega * empirical_g * eta / (1.0 - params.gamma)
}

/// Iterates that violate [`consensus_bound`] in a recorded trajectory.
pub fn consensus_violations<P>(
    trajectory: &RunTrajectory<P>,
    schedule: &MixingSchedule,
) -> Vec<(usize, f64, f64)> {
    let params = schedule.mixing_bound_params();
    let m = schedule.agents();
    trajectory
        .records
        .iter()
        .filter(|r| !r.consensus.is_empty())
        .filter_map(|r| {
            let worst = r.consensus.iter().copied().fold(0.0, f64::max);
            let bound = consensus_bound(
                params,
                m,
                trajectory.initial_norm_sum,
                r.empirical_g,
                trajectory.eta,
                r.t,
            );
            (worst > bound).then_some((r.t, worst, bound))
        })
        .collect()
}

pub(crate) fn record_iterate(
    t: usize,
    states: &[RkhsFunction],
    global: &GlobalRisk,
    opts: &RecordOptions,
    empirical_g: f64,
) -> Result<IterateRecord> {
    let (objective, gradient_norms) = if opts.objective || opts.gradient_norm {
        let pairs: Vec<(f64, f64)> = states
            .par_iter()
            .map(|f| {
                let c = f.coefficients();
                let v = if opts.objective {
                    global.value_coefficients(c)
                } else {
                    f64::NAN
                };
                let g = if opts.gradient_norm {
                    global.gradient_norm_coefficients(c)
                } else {
                    f64::NAN
                };
                (v, g)
            })
            .collect();
        let (v, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        (
            if opts.objective { v } else { Vec::new() },
            if opts.gradient_norm { g } else { Vec::new() },
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let consensus = if opts.consensus {
        consensus_errors(states)?
    } else {
        Vec::new()
    };
    Ok(IterateRecord {
        t,
        objective,
        consensus,
        gradient_norms,
        empirical_g,
    })
}

/// Runs `T` iterations from `initial`, consuming `P_1, …, P_T`.
pub fn run_dfgd(
    config: &RunConfig,
    schedule: &MixingSchedule,
    global: &GlobalRisk,
    initial: Vec<RkhsFunction>,
) -> Result<RunTrajectory<RkhsFunction>> {
    let eta = config.validate()?;
    let opts = config.record;
    let risks = global.locals();
    if initial.len() != risks.len() || schedule.agents() != risks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} initial states, {} agents in the objective, {} in the schedule",
            initial.len(),
            risks.len(),
            schedule.agents()
        )));
    }
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
        let mixing = schedule.matrix(t);
        let (next, norms) = step_with_norms(&states, &mixing, risks, eta)?;
        empirical_g = norms.into_iter().fold(empirical_g, f64::max);
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
        .zip(&states)
        .map(|(s, f)| RkhsFunction::from_coefficients(f.space(), s * inv))
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

/// `f̃_{ℓ,T}`. For `T` equal to the run length the running sum is used;
/// shorter horizons need stride-1 snapshots.
pub fn ergodic_average(
    trajectory: &RunTrajectory<RkhsFunction>,
    agent: usize,
    horizon: usize,
) -> Result<RkhsFunction> {
    if agent >= trajectory.ergodic.len() {
        return Err(Error::InvalidParameter(format!("no agent {agent}")));
    }
    if horizon == 0 || horizon > trajectory.horizon {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} outside 1..={}",
            trajectory.horizon
        )));
    }
    if horizon == trajectory.horizon {
        return Ok(trajectory.ergodic[agent].clone());
    }
    let snaps = match (&trajectory.snapshots, trajectory.stride) {
        (Some(s), 1) => s,
        _ => {
            return Err(Error::NeedFullRecord {
                stride: trajectory.stride,
                horizon,
            })
        }
    };
    let funcs: Vec<&RkhsFunction> = snaps[..horizon].iter().map(|s| &s[agent]).collect();
    linear_combine(&vec![1.0 / horizon as f64; horizon], &funcs)
}
