//! Synthetic regression data: `x ~ U[-1, 1]^d`, `y = ⟨a, x⟩ + ε`, with
//! `a_k = 1` for `k < ⌊d/2⌋` and 0 otherwise, `ε ~ N(0, 1)`.
//!
//! Draw order is fixed: agent-major, then sample, then the `d` input
//! coordinates followed by the noise term. Uniforms come from ChaCha20 seeded
//! with the run seed; the normal deviate is Box-Muller (cosine branch) on two
//! fresh uniforms.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the normal transform, recorded in run metadata.
pub const NORMAL_TRANSFORM: &str = "box-muller-cosine";

/// One agent's private sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub agent: usize,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl LocalData {
    pub fn new(agent: usize, inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "agent {agent} has no data"
            )));
        }
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidParameter(format!(
                "agent {agent}: {} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let d = inputs[0].len();
        if let Some(x) = inputs.iter().find(|x| x.len() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok(LocalData {
            agent,
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }
}

/// Which agents receive outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierPattern {
    /// Every agent `i ∈ {1, …, m}`.
    #[default]
    AllAgents,
    /// Agents 1, 3, 5, … only.
    EveryOtherAgent,
}

impl OutlierPattern {
    pub fn name(self) -> &'static str {
        match self {
            OutlierPattern::AllAgents => "all-agents",
            OutlierPattern::EveryOtherAgent => "every-other-agent",
        }
    }

    fn selects(self, agent: usize) -> bool {
        match self {
            OutlierPattern::AllAgents => true,
            OutlierPattern::EveryOtherAgent => agent.is_multiple_of(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub agents: Vec<LocalData>,
    /// Labels before corruption, per agent.
    pub clean_outputs: Vec<Vec<f64>>,
    /// Label shift applied to each `(agent, sample)`; `None` when untouched.
    pub outlier_mask: Vec<Vec<Option<f64>>>,
}

/// Coefficient vector `a` of the linear target.
pub fn target_coefficients(d: usize) -> Vec<f64> {
    (0..d).map(|k| if k < d / 2 { 1.0 } else { 0.0 }).collect()
}

fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn generate(m: usize, n: usize, d: usize, seed: u64) -> Result<ExperimentData> {
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "m, n, d must be positive (got {m}, {n}, {d})"
        )));
    }
    let a = target_coefficients(d);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(m);
    for i in 0..m {
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let mean: f64 = x.iter().zip(&a).map(|(xi, ai)| xi * ai).sum();
            outputs.push(mean + standard_normal(&mut rng));
            inputs.push(x);
        }
        agents.push(LocalData::new(i, inputs, outputs)?);
    }
    let clean_outputs = agents.iter().map(|a| a.outputs.clone()).collect();
    Ok(ExperimentData {
        m,
        n,
        d,
        seed,
        agents,
        clean_outputs,
        outlier_mask: vec![vec![None; n]; m],
    })
}

/// First label of each selected agent shifted by `+shift`, second by `-shift`.
pub fn inject_outliers(data: &ExperimentData, shift: f64) -> Result<ExperimentData> {
    inject_outliers_with(data, shift, OutlierPattern::AllAgents)
}

pub fn inject_outliers_with(
    data: &ExperimentData,
    shift: f64,
    pattern: OutlierPattern,
) -> Result<ExperimentData> {
    if data.n < 2 {
        return Err(Error::TooFewSamplesForOutliers(data.n));
    }
    let mut out = data.clone();
    for (i, agent) in out.agents.iter_mut().enumerate() {
        if !pattern.selects(i) {
            continue;
        }
        agent.outputs[0] += shift;
        agent.outputs[1] -= shift;
        out.outlier_mask[i][0] = Some(shift);
        out.outlier_mask[i][1] = Some(-shift);
    }
    Ok(out)
}

impl ExperimentData {
    /// All inputs in agent-major order: the global center set of a run.
    pub fn all_inputs(&self) -> Vec<Vec<f64>> {
        self.agents
            .iter()
            .flat_map(|a| a.inputs.iter().cloned())
            .collect()
    }

    pub fn all_outputs(&self) -> Vec<f64> {
        self.agents
            .iter()
            .flat_map(|a| a.outputs.iter().copied())
            .collect()
    }

    pub fn outlier_count(&self, agent: usize) -> usize {
        self.outlier_mask[agent]
            .iter()
            .filter(|s| s.is_some())
            .count()
    }

    /// Header `m n d seed`, then `i s x_1 … x_d y y_clean is_outlier` with
    /// 1-based `i`, `s`. Reals use Rust's shortest round-trip formatting.
    pub fn to_table(&self) -> String {
        let mut out = format!("{} {} {} {}\n", self.m, self.n, self.d, self.seed);
        for (i, agent) in self.agents.iter().enumerate() {
            for s in 0..agent.len() {
                write!(out, "{} {}", i + 1, s + 1).unwrap();
                for x in &agent.inputs[s] {
                    write!(out, " {x:?}").unwrap();
                }
                let flag = u8::from(self.outlier_mask[i][s].is_some());
                writeln!(
                    out,
                    " {:?} {:?} {flag}",
                    agent.outputs[s], self.clean_outputs[i][s]
                )
                .unwrap();
            }
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header 'm n d seed'".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(Error::Parse {
                line: hl,
                message: format!("header must be 'm n d seed', got '{header}'"),
            });
        }
        let num = |s: &str, line: usize| {
            s.parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("'{s}' is not a nonnegative integer"),
            })
        };
        let (m, n, d, seed) = (
            num(h[0], hl)? as usize,
            num(h[1], hl)? as usize,
            num(h[2], hl)? as usize,
            num(h[3], hl)?,
        );
        let mut inputs = vec![Vec::with_capacity(n); m];
        let mut outputs = vec![Vec::with_capacity(n); m];
        let mut clean = vec![Vec::with_capacity(n); m];
        let mut mask = vec![Vec::with_capacity(n); m];
        for i in 0..m {
            for s in 0..n {
                let (ln, line) = lines.next().ok_or(Error::Parse {
                    line: hl,
                    message: format!("missing row for agent {} sample {}", i + 1, s + 1),
                })?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != d + 5 {
                    return Err(Error::Parse {
                        line: ln,
                        message: format!("expected {} fields, found {}", d + 5, f.len()),
                    });
                }
                if num(f[0], ln)? as usize != i + 1 || num(f[1], ln)? as usize != s + 1 {
                    return Err(Error::Parse {
                        line: ln,
                        message: format!("expected row 'i={} s={}'", i + 1, s + 1),
                    });
                }
                let real = |k: usize| {
                    f[k].parse::<f64>().map_err(|_| Error::Parse {
                        line: ln,
                        message: format!("'{}' is not a real number", f[k]),
                    })
                };
                inputs[i].push((0..d).map(|k| real(2 + k)).collect::<Result<Vec<_>>>()?);
                let y = real(d + 2)?;
                let yc = real(d + 3)?;
                outputs[i].push(y);
                clean[i].push(yc);
                mask[i].push(match f[d + 4] {
                    "0" => None,
                    "1" => Some(y - yc),
                    other => {
                        return Err(Error::Parse {
                            line: ln,
                            message: format!("is_outlier must be 0 or 1, got '{other}'"),
                        })
                    }
                });
            }
        }
        let agents = inputs
            .into_iter()
            .zip(outputs)
            .enumerate()
            .map(|(i, (x, y))| LocalData::new(i, x, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentData {
            m,
            n,
            d,
            seed,
            agents,
            clean_outputs: clean,
            outlier_mask: mask,
        })
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table())?;
        Ok(())
    }
}
