//! Named experiment configurations.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate, inject_outliers_with, ExperimentData, OutlierPattern, NORMAL_TRANSFORM,
};
use crate::dfgd::StepRule;
use crate::dfmd::{DecisionDomain, SimplexFunctional};
use crate::error::{Error, Result};
use crate::kernel::{CenterSet, MercerKernel, RkhsSpace};
use crate::losses::{LossKind, LossSpec};
use crate::network::{load_schedule_file, random_ring_split, ring_schedule, MixingSchedule};
use crate::objective::{GlobalRisk, LocalRisk};

pub const DEFAULT_TGRID: [usize; 6] = [100, 250, 500, 1000, 2000, 4000];
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Fig1Ls,
    Fig2Agents,
    Fig4Cauchy,
    Fig6Dims,
    MsdfmdDemo,
    Custom,
}

impl PresetName {
    pub const ALL: [PresetName; 6] = [
        PresetName::Fig1Ls,
        PresetName::Fig2Agents,
        PresetName::Fig4Cauchy,
        PresetName::Fig6Dims,
        PresetName::MsdfmdDemo,
        PresetName::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetName::Fig1Ls => "fig1-ls",
            PresetName::Fig2Agents => "fig2-agents",
            PresetName::Fig4Cauchy => "fig4-cauchy",
            PresetName::Fig6Dims => "fig6-dims",
            PresetName::MsdfmdDemo => "msdfmd-demo",
            PresetName::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        PresetName::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Multiplier applied to every local risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// `1/m`.
    InverseAgents,
    Fixed(f64),
}

impl ScaleRule {
    pub fn value(self, agents: usize) -> f64 {
        match self {
            ScaleRule::InverseAgents => 1.0 / agents as f64,
            ScaleRule::Fixed(s) => s,
        }
    }

    fn describe(self) -> String {
        match self {
            ScaleRule::InverseAgents => "1/m".into(),
            ScaleRule::Fixed(s) => format!("{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSpec {
    Ring,
    RandomRing {
        window: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
        window: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierSpec {
    pub shift: f64,
    pub pattern: OutlierPattern,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    Dfgd,
    /// Mirror descent with the quadratic map over the RKHS.
    Dfmd {
        domain: DecisionDomain,
    },
    /// Mirror descent with the entropy map over a probability simplex.
    MsDfmd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Single,
    Agents(Vec<usize>),
    Dims(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub agents: usize,
    pub samples: usize,
    pub dim: usize,
    pub bandwidth: f64,
    pub loss: LossSpec,
    pub lambda: f64,
    pub scale: ScaleRule,
    pub outliers: Option<OutlierSpec>,
    pub network: NetworkSpec,
    /// Replaces the schedule's own entry floor when set.
    pub zeta: Option<f64>,
    pub step: StepRule,
    pub engine: Engine,
    pub sweep: Sweep,
    pub tgrid: Vec<usize>,
    pub seed: u64,
}

/// Data, RKHS and objective for one concrete variant.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: ExperimentData,
    pub space: Arc<RkhsSpace>,
    pub global: GlobalRisk,
}

impl ExperimentPreset {
    pub fn fig1_ls() -> Self {
        ExperimentPreset {
            name: PresetName::Fig1Ls,
            agents: 30,
            samples: 10,
            dim: 10,
            bandwidth: 0.33,
            loss: LossSpec::half_squared(),
            lambda: 0.0,
            scale: ScaleRule::InverseAgents,
            outliers: None,
            network: NetworkSpec::Ring,
            zeta: None,
            step: StepRule::InverseSqrtHorizon,
            engine: Engine::Dfgd,
            sweep: Sweep::Single,
            tgrid: DEFAULT_TGRID.to_vec(),
            seed: DEFAULT_SEED,
        }
    }

    pub fn fig2_agents() -> Self {
        ExperimentPreset {
            name: PresetName::Fig2Agents,
            sweep: Sweep::Agents(vec![30, 40, 50]),
            ..Self::fig1_ls()
        }
    }

    pub fn fig4_cauchy() -> Self {
        ExperimentPreset {
            name: PresetName::Fig4Cauchy,
            loss: LossSpec::new(LossKind::Cauchy, 1.0).expect("positive scale"),
            outliers: Some(OutlierSpec {
                shift: 5.0,
                pattern: OutlierPattern::AllAgents,
            }),
            ..Self::fig1_ls()
        }
    }

    pub fn fig6_dims() -> Self {
        ExperimentPreset {
            name: PresetName::Fig6Dims,
            sweep: Sweep::Dims(vec![5, 10, 20]),
            ..Self::fig4_cauchy()
        }
    }

    /// Four agents on a ring, three grid points, heterogeneous functionals
    /// from [`msdfmd_functionals`].
    pub fn msdfmd_demo() -> Self {
        ExperimentPreset {
            name: PresetName::MsdfmdDemo,
            agents: 4,
            samples: 0,
            dim: 3,
            engine: Engine::MsDfmd,
            ..Self::fig1_ls()
        }
    }

    pub fn named(name: PresetName) -> Self {
        match name {
            PresetName::Fig1Ls => Self::fig1_ls(),
            PresetName::Fig2Agents => Self::fig2_agents(),
            PresetName::Fig4Cauchy => Self::fig4_cauchy(),
            PresetName::Fig6Dims => Self::fig6_dims(),
            PresetName::MsdfmdDemo => Self::msdfmd_demo(),
            PresetName::Custom => ExperimentPreset {
                name: PresetName::Custom,
                ..Self::fig1_ls()
            },
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        PresetName::parse(name)
            .map(Self::named)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset '{name}'")))
    }

    /// One preset per swept value, labelled `m30`, `d5`, …; a single preset
    /// has an empty label.
    pub fn variants(&self) -> Vec<(String, ExperimentPreset)> {
        let single = |p: ExperimentPreset| ExperimentPreset {
            sweep: Sweep::Single,
            ..p
        };
        match &self.sweep {
            Sweep::Single => vec![(String::new(), self.clone())],
            Sweep::Agents(ms) => ms
                .iter()
                .map(|&m| {
                    (
                        format!("m{m}"),
                        single(ExperimentPreset {
                            agents: m,
                            ..self.clone()
                        }),
                    )
                })
                .collect(),
            Sweep::Dims(ds) => ds
                .iter()
                .map(|&d| {
                    (
                        format!("d{d}"),
                        single(ExperimentPreset {
                            dim: d,
                            ..self.clone()
                        }),
                    )
                })
                .collect(),
        }
    }

    pub fn scale_value(&self) -> f64 {
        self.scale.value(self.agents)
    }

    pub fn check(&self) -> Result<()> {
        if self.agents < 1 {
            return Err(Error::InvalidParameter("need at least one agent".into()));
        }
        if self.tgrid.is_empty() || self.tgrid.contains(&0) {
            return Err(Error::InvalidParameter(
                "T grid must be nonempty with every T >= 1".into(),
            ));
        }
        if let Sweep::Agents(v) | Sweep::Dims(v) = &self.sweep {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::InvalidParameter(
                    "sweep values must be positive".into(),
                ));
            }
        }
        if let ScaleRule::Fixed(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "scale must be positive, got {s}"
                )));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        match self.engine {
            Engine::MsDfmd => {
                if self.agents != 4 || self.dim != 3 {
                    return Err(Error::InvalidParameter(
                        "the simplex demo is defined for 4 agents on 3 grid points".into(),
                    ));
                }
            }
            Engine::Dfmd { .. } if !self.loss.is_convex() => {
                return Err(Error::NonconvexLoss(self.loss.kind().name()));
            }
            Engine::Dfmd {
                domain: DecisionDomain::ProbabilitySimplex { .. },
            } => {
                return Err(Error::IncompatibleDomain(
                    "RKHS mirror descent cannot use a simplex domain".into(),
                ));
            }
            _ => {
                if self.samples < 1 || self.dim < 1 {
                    return Err(Error::InvalidParameter("need n >= 1 and d >= 1".into()));
                }
                MercerKernel::gaussian(self.bandwidth)?;
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<MixingSchedule> {
        let schedule = match &self.network {
            NetworkSpec::Ring => ring_schedule(self.agents)?,
            NetworkSpec::RandomRing { window, seed } => {
                random_ring_split(self.agents, *window, *seed)?
            }
            NetworkSpec::File { path, window } => {
                let s = load_schedule_file(path, *window)?;
                if s.agents() != self.agents {
                    return Err(Error::InvalidParameter(format!(
                        "schedule file has {} agents, preset has {}",
                        s.agents(),
                        self.agents
                    )));
                }
                s
            }
        };
        Ok(match self.zeta {
            Some(z) => schedule.with_zeta(z),
            None => schedule,
        })
    }

    pub fn data(&self) -> Result<ExperimentData> {
        let data = generate(self.agents, self.samples, self.dim, self.seed)?;
        match self.outliers {
            Some(o) => inject_outliers_with(&data, o.shift, o.pattern),
            None => Ok(data),
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let data = self.data()?;
        let space = RkhsSpace::new(
            MercerKernel::gaussian(self.bandwidth)?,
            CenterSet::new(data.all_inputs())?,
        )?;
        let scale = self.scale_value();
        let locals = data
            .agents
            .iter()
            .map(|a| LocalRisk::new(&space, a.clone(), self.loss, self.lambda, scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            global: GlobalRisk::new(locals)?,
            space,
            data,
        })
    }

    fn engine_name(&self) -> String {
        match self.engine {
            Engine::Dfgd => "dfgd".into(),
            Engine::Dfmd { domain } => format!("dfmd({})", domain.name()),
            Engine::MsDfmd => "ms-dfmd".into(),
        }
    }

    fn step_name(&self) -> String {
        match self.step {
            StepRule::Constant(eta) => format!("constant({eta})"),
            StepRule::InverseSqrtHorizon => "1/sqrt(T)".into(),
            StepRule::SmoothRate { smoothness } => format!("1/(2L sqrt(T+3)), L={smoothness}"),
        }
    }

    fn network_name(&self) -> String {
        let base = match &self.network {
            NetworkSpec::Ring => "ring".to_string(),
            NetworkSpec::RandomRing { window, seed } => {
                format!("random-ring(B={window}, seed={seed})")
            }
            NetworkSpec::File { path, window } => match window {
                Some(b) => format!("file({}, B={b})", path.display()),
                None => format!("file({})", path.display()),
            },
        };
        match self.zeta {
            Some(z) => format!("{base}, zeta={z}"),
            None => base,
        }
    }

    /// Resolved parameters as `key = value` lines.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.name.name());
        let _ = writeln!(s, "engine = {}", self.engine_name());
        match &self.sweep {
            Sweep::Single => {}
            Sweep::Agents(v) => {
                let _ = writeln!(s, "sweep = m in {v:?}");
            }
            Sweep::Dims(v) => {
                let _ = writeln!(s, "sweep = d in {v:?}");
            }
        }
        let _ = writeln!(s, "agents = {}", self.agents);
        if self.engine == Engine::MsDfmd {
            let _ = writeln!(s, "grid = {}", self.dim);
        } else {
            let _ = writeln!(s, "samples = {}", self.samples);
            let _ = writeln!(s, "dim = {}", self.dim);
            let _ = writeln!(s, "bandwidth = {}", self.bandwidth);
            let _ = writeln!(s, "loss = {}", self.loss.kind().name());
            if self.loss.kind().needs_scale() {
                let _ = writeln!(s, "sigma = {}", self.loss.sigma());
            }
            let _ = writeln!(s, "lambda = {}", self.lambda);
            let _ = writeln!(s, "scale = {}", self.scale.describe());
            match self.outliers {
                Some(o) => {
                    let _ = writeln!(s, "outliers = shift {} on {}", o.shift, o.pattern.name());
                }
                None => {
                    let _ = writeln!(s, "outliers = none");
                }
            }
        }
        let _ = writeln!(s, "network = {}", self.network_name());
        let _ = writeln!(s, "step = {}", self.step_name());
        let _ = writeln!(s, "tgrid = {:?}", self.tgrid);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Lines for the CSV comment header.
    pub fn metadata(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.describe().lines().map(String::from).collect();
        match self.engine {
            Engine::MsDfmd => {
                lines.push("mirror-map = negative entropy, sum p log p".into());
                lines.push("error = J(ergodic average) - J(lattice minimizer, r=200)".into());
            }
            _ => {
                if let Engine::Dfmd { .. } = self.engine {
                    lines.push("mirror-map = quadratic, 0.5 ||f||^2".into());
                }
                lines.push(format!(
                    "loss-convention = {}",
                    loss_convention(self.loss.kind())
                ));
                lines.push(format!("normal-transform = {NORMAL_TRANSFORM}"));
                lines.push("initial-state = zero function".into());
                lines.push("error = J(ergodic average) - J(f*) per agent".into());
            }
        }
        lines.push("mean_consensus = mean over agents of the distance between the agent's ergodic average and the network mean".into());
        lines.push(
            "max_gradnorm = largest global gradient norm at an agent's ergodic average".into(),
        );
        lines.push("empirical_G = largest local gradient norm seen during the run".into());
        lines
    }
}

fn loss_convention(kind: LossKind) -> &'static str {
    match kind {
        LossKind::HalfSquared => "L(u) = u^2/2",
        LossKind::Squared => "L(u) = u^2",
        LossKind::Welsch => "L(u) = s^2 (1 - exp(-u^2 / 2s^2))",
        LossKind::Cauchy => "L(u) = s^2 log(1 + u^2 / 2s^2)",
        LossKind::Fair => "L(u) = s^2 (|u|/s - log(1 + |u|/s))",
    }
}

/// Local functionals of the simplex demo. Each agent pulls toward its own
/// point with a linear tilt; the tilts cancel and the points average to
/// `(0.5, 0.3, 0.2)`, which is therefore the minimizer of the sum and lies on
/// every lattice with resolution divisible by 10.
pub fn msdfmd_functionals() -> Vec<SimplexFunctional> {
    let centers = [
        [0.9, 0.05, 0.05],
        [0.2, 0.6, 0.2],
        [0.6, 0.1, 0.3],
        [0.3, 0.45, 0.25],
    ];
    let tilts = [
        [0.3, -0.2, 0.0],
        [-0.3, 0.1, 0.1],
        [0.1, 0.1, -0.2],
        [-0.1, 0.0, 0.1],
    ];
    centers
        .iter()
        .zip(&tilts)
        .map(|(c, l)| {
            SimplexFunctional::quadratic(1.0, c.to_vec())
                .and_then(|f| f.with_linear(l.to_vec()))
                .expect("fixed demo data")
        })
        .collect()
}
