//! TOML experiment configuration and pre-run validation.
//!
//! Every section is optional except `[experiment]`, which names the preset the
//! remaining keys override:
//!
//! ```toml
//! [experiment]
//! preset = "fig1-ls"        # fig1-ls | fig2-agents | fig4-cauchy | fig6-dims | msdfmd-demo | custom
//! seed = 7
//! tgrid = [250, 1000, 4000]
//! engine = "dfgd"           # dfgd | dfmd | ms-dfmd
//! agents_sweep = [30, 40]   # replaces the preset's sweep
//! dims_sweep = [5, 10]
//!
//! [data]
//! agents = 30
//! samples = 10
//! dim = 10
//! outlier_shift = 5.0       # 0 keeps the mask but moves nothing
//! outlier_pattern = "all-agents"   # all-agents | every-other-agent
//! outliers = false          # drop outlier injection entirely
//!
//! [kernel]
//! bandwidth = 0.33
//!
//! [loss]
//! kind = "cauchy"           # half-squared | squared | welsch | cauchy | fair
//! sigma = 1.0
//! lambda = 0.0
//! scale = "inverse-agents"  # or a positive number
//!
//! [network]
//! kind = "ring"             # ring | random-ring | file
//! zeta = 0.3333
//! window = 2                # B
//! seed = 1                  # random-ring only
//! path = "schedule.txt"     # file only, relative to the config file
//!
//! [step]
//! rule = "inverse-sqrt"     # inverse-sqrt | constant | smooth
//! eta = 0.1                 # constant only
//! smoothness = 0.02         # smooth only; defaults to the estimated L
//!
//! [domain]
//! kind = "whole-space"      # whole-space | ball (dfmd engine only)
//! radius = 10.0
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::preset::{Engine, ExperimentPreset, NetworkSpec, OutlierSpec, ScaleRule, Sweep};
use crate::datagen::OutlierPattern;
use crate::dfgd::{check_constant_step, StepRule};
use crate::dfmd::DecisionDomain;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::network::{validate_assumption1, ValidationReport};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: ExperimentSection,
    data: Option<DataSection>,
    kernel: Option<KernelSection>,
    loss: Option<LossSection>,
    network: Option<NetworkSection>,
    step: Option<StepSection>,
    domain: Option<DomainSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    preset: String,
    seed: Option<u64>,
    tgrid: Option<Vec<usize>>,
    engine: Option<String>,
    agents_sweep: Option<Vec<usize>>,
    dims_sweep: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    agents: Option<usize>,
    samples: Option<usize>,
    dim: Option<usize>,
    outlier_shift: Option<f64>,
    outlier_pattern: Option<OutlierPattern>,
    outliers: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSection {
    bandwidth: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScaleValue {
    Number(f64),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    kind: Option<LossKind>,
    sigma: Option<f64>,
    lambda: Option<f64>,
    scale: Option<ScaleValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    kind: Option<String>,
    zeta: Option<f64>,
    window: Option<usize>,
    seed: Option<u64>,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepSection {
    rule: Option<String>,
    eta: Option<f64>,
    smoothness: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    kind: Option<String>,
    radius: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn field_error(section: &str, key: &str, message: String) -> Error {
    Error::InvalidParameter(format!("[{section}] {key}: {message}"))
}

/// Parses a configuration. Relative schedule paths resolve against `base`.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<ExperimentPreset> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let ex = &file.experiment;
    let mut p = ExperimentPreset::from_name(&ex.preset).map_err(|_| {
        field_error(
            "experiment",
            "preset",
            format!("unknown preset '{}'", ex.preset),
        )
    })?;
    if let Some(seed) = ex.seed {
        p.seed = seed;
    }
    if let Some(grid) = &ex.tgrid {
        p.tgrid = grid.clone();
    }
    if let Some(v) = &ex.agents_sweep {
        p.sweep = Sweep::Agents(v.clone());
    }
    if let Some(v) = &ex.dims_sweep {
        if ex.agents_sweep.is_some() {
            return Err(field_error(
                "experiment",
                "dims_sweep",
                "only one sweep at a time".into(),
            ));
        }
        p.sweep = Sweep::Dims(v.clone());
    }

    if let Some(d) = &file.data {
        if let Some(m) = d.agents {
            p.agents = m;
        }
        if let Some(n) = d.samples {
            p.samples = n;
        }
        if let Some(dim) = d.dim {
            p.dim = dim;
        }
        if d.outliers == Some(false) {
            p.outliers = None;
        } else if d.outliers == Some(true)
            || d.outlier_shift.is_some()
            || d.outlier_pattern.is_some()
        {
            let base = p.outliers.unwrap_or(OutlierSpec {
                shift: 5.0,
                pattern: OutlierPattern::AllAgents,
            });
            p.outliers = Some(OutlierSpec {
                shift: d.outlier_shift.unwrap_or(base.shift),
                pattern: d.outlier_pattern.unwrap_or(base.pattern),
            });
        }
    }

    if let Some(k) = &file.kernel {
        if let Some(b) = k.bandwidth {
            p.bandwidth = b;
        }
    }

    if let Some(l) = &file.loss {
        let kind = l.kind.unwrap_or(p.loss.kind());
        let sigma = l.sigma.unwrap_or(p.loss.sigma());
        p.loss =
            LossSpec::new(kind, sigma).map_err(|e| field_error("loss", "sigma", e.to_string()))?;
        if let Some(lambda) = l.lambda {
            p.lambda = lambda;
        }
        match &l.scale {
            None => {}
            Some(ScaleValue::Number(s)) => p.scale = ScaleRule::Fixed(*s),
            Some(ScaleValue::Name(s)) if s == "inverse-agents" => {
                p.scale = ScaleRule::InverseAgents
            }
            Some(ScaleValue::Name(s)) => {
                return Err(field_error(
                    "loss",
                    "scale",
                    format!("expected a number or 'inverse-agents', got '{s}'"),
                ))
            }
        }
    }

    if let Some(n) = &file.network {
        let kind = n.kind.as_deref().unwrap_or(match p.network {
            NetworkSpec::Ring => "ring",
            NetworkSpec::RandomRing { .. } => "random-ring",
            NetworkSpec::File { .. } => "file",
        });
        p.network = match kind {
            "ring" => {
                if n.window.is_some() || n.path.is_some() || n.seed.is_some() {
                    return Err(field_error(
                        "network",
                        "kind",
                        "ring takes only zeta".into(),
                    ));
                }
                NetworkSpec::Ring
            }
            "random-ring" => NetworkSpec::RandomRing {
                window: n.window.unwrap_or(2),
                seed: n.seed.unwrap_or(p.seed),
            },
            "file" => {
                let path = n.path.clone().ok_or_else(|| {
                    field_error("network", "path", "required for kind = \"file\"".into())
                })?;
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path,
                };
                NetworkSpec::File {
                    path,
                    window: n.window,
                }
            }
            other => {
                return Err(field_error(
                    "network",
                    "kind",
                    format!("unknown network '{other}'"),
                ))
            }
        };
        if let Some(z) = n.zeta {
            p.zeta = Some(z);
        }
    }

    if let Some(s) = &file.step {
        let rule = s.rule.as_deref().unwrap_or(match p.step {
            StepRule::Constant(_) => "constant",
            StepRule::InverseSqrtHorizon => "inverse-sqrt",
            StepRule::SmoothRate { .. } => "smooth",
        });
        p.step = match rule {
            "inverse-sqrt" => StepRule::InverseSqrtHorizon,
            "constant" => {
                let eta = s.eta.ok_or_else(|| {
                    field_error("step", "eta", "required for rule = \"constant\"".into())
                })?;
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(field_error(
                        "step",
                        "eta",
                        format!("must be positive, got {eta}"),
                    ));
                }
                StepRule::Constant(eta)
            }
            // Zero marks "estimate from the data"; resolved by `resolve_smoothness`.
            "smooth" => StepRule::SmoothRate {
                smoothness: s.smoothness.unwrap_or(0.0),
            },
            other => {
                return Err(field_error(
                    "step",
                    "rule",
                    format!("unknown rule '{other}'"),
                ))
            }
        };
    }

    let domain = match &file.domain {
        None => DecisionDomain::WholeSpace,
        Some(d) => match d.kind.as_deref().unwrap_or("whole-space") {
            "whole-space" => DecisionDomain::WholeSpace,
            "ball" => DecisionDomain::rkhs_ball(d.radius.ok_or_else(|| {
                field_error("domain", "radius", "required for kind = \"ball\"".into())
            })?)
            .map_err(|e| field_error("domain", "radius", e.to_string()))?,
            other => {
                return Err(field_error(
                    "domain",
                    "kind",
                    format!("unknown domain '{other}'"),
                ))
            }
        },
    };
    if let Some(engine) = &ex.engine {
        p.engine = match engine.as_str() {
            "dfgd" => Engine::Dfgd,
            "dfmd" => Engine::Dfmd { domain },
            "ms-dfmd" => Engine::MsDfmd,
            other => {
                return Err(field_error(
                    "experiment",
                    "engine",
                    format!("unknown engine '{other}'"),
                ))
            }
        };
    } else if file.domain.is_some() {
        return Err(field_error(
            "domain",
            "kind",
            "a domain needs engine = \"dfmd\"".into(),
        ));
    }
    resolve_smoothness(&mut p)?;
    p.check()?;
    Ok(p)
}

/// Fills in an unspecified smoothness for the `smooth` step rule with the
/// largest local estimate `L̂_i`.
pub fn resolve_smoothness(p: &mut ExperimentPreset) -> Result<()> {
    if let StepRule::SmoothRate { smoothness } = p.step {
        if smoothness <= 0.0 {
            let problem = p.problem()?;
            let l = problem
                .global
                .locals()
                .iter()
                .map(|r| r.smoothness())
                .fold(0.0, f64::max);
            p.step = StepRule::SmoothRate { smoothness: l };
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentPreset> {
    let text = fs::read_to_string(path)?;
    parse_config(&text, path.parent())
}

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub preset: ExperimentPreset,
    /// Network check per variant label.
    pub network: Vec<(String, ValidationReport)>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

impl ValidationOutcome {
    pub fn passes(&self) -> bool {
        self.failures.is_empty() && self.network.iter().all(|(_, r)| r.passes())
    }

    pub fn render(&self) -> String {
        let mut s = self.preset.describe();
        for (label, report) in &self.network {
            let name = if label.is_empty() { "network" } else { label };
            let _ = writeln!(s, "{name}: {report}");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        for f in &self.failures {
            let _ = writeln!(s, "fail: {f}");
        }
        let _ = writeln!(s, "{}", if self.passes() { "PASS" } else { "FAIL" });
        s
    }
}

/// Checks the network assumption over the longest horizon of the grid and
/// the constant-step range against the estimated constants.
pub fn validate_preset(preset: &ExperimentPreset) -> ValidationOutcome {
    let mut outcome = ValidationOutcome {
        preset: preset.clone(),
        network: Vec::new(),
        warnings: Vec::new(),
        failures: Vec::new(),
    };
    if let Err(e) = preset.check() {
        outcome.failures.push(e.to_string());
        return outcome;
    }
    let horizon = preset.tgrid.iter().copied().max().unwrap_or(1);
    for (label, variant) in preset.variants() {
        match variant.schedule() {
            Ok(schedule) => outcome
                .network
                .push((label.clone(), validate_assumption1(&schedule, horizon))),
            Err(e) => outcome
                .failures
                .push(format!("{label} {e}").trim().to_string()),
        }
        if let (StepRule::Constant(eta), true) = (variant.step, variant.engine != Engine::MsDfmd) {
            match variant.problem() {
                Ok(problem) => {
                    let l = problem
                        .global
                        .locals()
                        .iter()
                        .map(|r| r.smoothness())
                        .fold(0.0, f64::max);
                    let mu = variant.lambda * variant.scale_value();
                    for w in check_constant_step(eta, variant.agents, Some(mu), Some(l)) {
                        outcome
                            .warnings
                            .push(format!("{label} {w}").trim().to_string());
                    }
                }
                Err(e) => outcome.failures.push(e.to_string()),
            }
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset::PresetName;
    use crate::network::ViolationKind;

    #[test]
    fn default_config_passes() {
        let p = parse_config("[experiment]\npreset = \"fig1-ls\"\n", None).unwrap();
        assert_eq!(p, ExperimentPreset::fig1_ls());
        assert!(validate_preset(&p).passes());
    }

    #[test]
    fn zero_floor_fails() {
        let p = parse_config(
            "[experiment]\npreset = \"fig1-ls\"\n[network]\nzeta = 0.0\n",
            None,
        )
        .unwrap();
        let v = validate_preset(&p);
        assert!(!v.passes());
        assert!(v.network[0].1.has(ViolationKind::EntryFloor));
        assert!(v.render().contains("entry-floor"));
    }

    #[test]
    fn large_constant_step_warns() {
        let text = r#"
[experiment]
preset = "custom"
tgrid = [3000]
[data]
agents = 10
samples = 5
dim = 5
[loss]
lambda = 0.1
[step]
rule = "constant"
eta = 100.0
"#;
        let p = parse_config(text, None).unwrap();
        let v = validate_preset(&p);
        assert!(v.passes());
        assert!(
            v.warnings.iter().any(|w| w.contains("1/(4L)")),
            "{:?}",
            v.warnings
        );
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_config(
            "[experiment]\npreset = \"fig1-ls\"\n[loss]\nkind = \"hinge\"\n",
            None,
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let err =
            parse_config("[experiment]\npreset = \"fig1-ls\"\nbogus = 1\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_config("[experiment]\npreset = \"nope\"\n", None).unwrap_err();
        assert!(err.to_string().contains("[experiment] preset"));
        let err = parse_config(
            "[experiment]\npreset = \"fig1-ls\"\n[step]\nrule = \"constant\"\n",
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("[step] eta"));
    }

    #[test]
    fn overrides() {
        let text = r#"
[experiment]
preset = "fig4-cauchy"
seed = 3
tgrid = [10, 20]
engine = "dfgd"
dims_sweep = [2, 3]
[data]
agents = 5
samples = 2
outlier_pattern = "every-other-agent"
[loss]
sigma = 2.0
scale = 1.0
[network]
kind = "random-ring"
window = 3
[step]
rule = "smooth"
"#;
        let p = parse_config(text, None).unwrap();
        assert_eq!(p.name, PresetName::Fig4Cauchy);
        assert_eq!(p.seed, 3);
        assert_eq!(p.sweep, Sweep::Dims(vec![2, 3]));
        assert_eq!(p.loss.sigma(), 2.0);
        assert_eq!(p.scale, ScaleRule::Fixed(1.0));
        assert_eq!(p.outliers.unwrap().pattern, OutlierPattern::EveryOtherAgent);
        assert_eq!(p.network, NetworkSpec::RandomRing { window: 3, seed: 3 });
        assert!(matches!(p.step, StepRule::SmoothRate { smoothness } if smoothness > 0.0));
        assert!(validate_preset(&p).passes());
    }

    #[test]
    fn dfmd_config() {
        let text = "[experiment]\npreset = \"fig4-cauchy\"\nengine = \"dfmd\"\n";
        assert_eq!(
            parse_config(text, None).unwrap_err().code(),
            "nonconvex-loss"
        );
        let text = "[experiment]\npreset = \"fig1-ls\"\nengine = \"dfmd\"\n[domain]\nkind = \"ball\"\nradius = 3.0\n";
        let p = parse_config(text, None).unwrap();
        assert_eq!(
            p.engine,
            Engine::Dfmd {
                domain: DecisionDomain::RkhsBall { radius: 3.0 }
            }
        );
    }
}
