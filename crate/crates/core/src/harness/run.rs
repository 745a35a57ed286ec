//! Independent runs over a grid of horizons.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::preset::{msdfmd_functionals, Engine, ExperimentPreset, Problem};
use super::report::{emit_csv_with_metadata, format_sig, labelled_path, MetricsRow};
use crate::dfgd::{consensus_errors, run_dfgd, RecordOptions, RunConfig, RunTrajectory};
use crate::dfmd::{
    ms_dfmd_errors, run_dfmd_rkhs, run_ms_dfmd, ProbabilityVector, SimplexFunctional,
};
use crate::error::{Error, Result};
use crate::kernel::RkhsFunction;
use crate::network::MixingSchedule;
use crate::oracle::{brute_force_simplex, reference_solution, OracleReport};

/// Errors below this are treated as rounding for convex problems.
pub const NEGATIVE_ERROR_TOL: f64 = -1e-9;
/// Lattice resolution of the simplex reference.
pub const SIMPLEX_RESOLUTION: usize = 200;

#[derive(Debug, Clone)]
pub struct HorizonRun<P> {
    pub row: MetricsRow,
    /// `J(f̃_{ℓ,T}) − J*` per agent.
    pub errors: Vec<f64>,
    pub trajectory: RunTrajectory<P>,
}

fn screen_errors(errors: &[f64], convex: bool, horizon: usize) -> Result<()> {
    if let Some(e) = errors.iter().copied().find(|e| *e < NEGATIVE_ERROR_TOL) {
        if convex {
            return Err(Error::Oracle(format!(
                "optimization error {e:.3e} at T={horizon} is below the reference value"
            )));
        }
        warn!("T={horizon}: error {e:.3e} below the best-found reference (nonconvex)");
    }
    Ok(())
}

fn summarize(
    t: usize,
    errors: &[f64],
    consensus: &[f64],
    gradnorms: &[f64],
    empirical_g: f64,
) -> MetricsRow {
    MetricsRow {
        t,
        max_err: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_err: errors.iter().copied().fold(f64::INFINITY, f64::min),
        mean_consensus: consensus.iter().sum::<f64>() / consensus.len() as f64,
        max_gradnorm: gradnorms.iter().copied().fold(0.0, f64::max),
        empirical_g,
    }
}

/// One run of the RKHS engine selected by the preset, from the zero function.
pub fn run_rkhs_horizon(
    preset: &ExperimentPreset,
    problem: &Problem,
    schedule: &MixingSchedule,
    reference: &OracleReport,
    horizon: usize,
    record: RecordOptions,
) -> Result<HorizonRun<RkhsFunction>> {
    let config = RunConfig::new(horizon, preset.step).with_record(record);
    let initial = vec![RkhsFunction::zero(&problem.space); preset.agents];
    let trajectory = match preset.engine {
        Engine::Dfgd => run_dfgd(&config, schedule, &problem.global, initial)?,
        Engine::Dfmd { domain } => {
            run_dfmd_rkhs(&config, &domain, schedule, &problem.global, initial)?
        }
        Engine::MsDfmd => {
            return Err(Error::IncompatibleDomain(
                "the simplex engine has no RKHS states".into(),
            ));
        }
    };
    let global = &problem.global;
    let errors: Vec<f64> = trajectory
        .ergodic
        .par_iter()
        .map(|f| global.value_coefficients(f.coefficients()) - reference.value)
        .collect();
    screen_errors(&errors, global.is_convex(), horizon)?;
    let gradnorms: Vec<f64> = trajectory
        .ergodic
        .par_iter()
        .map(|f| global.gradient_norm_coefficients(f.coefficients()))
        .collect();
    let consensus = consensus_errors(&trajectory.ergodic)?;
    let row = summarize(
        horizon,
        &errors,
        &consensus,
        &gradnorms,
        trajectory.empirical_g,
    );
    Ok(HorizonRun {
        row,
        errors,
        trajectory,
    })
}

/// One run of entropic mirror descent on the simplex from the uniform point.
pub fn run_simplex_horizon(
    preset: &ExperimentPreset,
    schedule: &MixingSchedule,
    functionals: &[SimplexFunctional],
    optimal_value: f64,
    horizon: usize,
    record: RecordOptions,
) -> Result<HorizonRun<ProbabilityVector>> {
    let config = RunConfig::new(horizon, preset.step).with_record(record);
    let n = functionals[0].len();
    let initial = vec![ProbabilityVector::uniform(n)?; functionals.len()];
    let trajectory = run_ms_dfmd(&config, schedule, functionals, initial)?;
    let errors = ms_dfmd_errors(&trajectory, functionals, optimal_value)?;
    screen_errors(&errors, true, horizon)?;
    let total = SimplexFunctional::sum(functionals)?;
    let weights: Vec<_> = trajectory.ergodic.iter().map(|p| p.weights()).collect();
    let mean = weights
        .iter()
        .fold(nalgebra::DVector::zeros(n), |a, w| a + w)
        / weights.len() as f64;
    let consensus: Vec<f64> = weights.iter().map(|w| (w - &mean).lp_norm(1)).collect();
    let gradnorms: Vec<f64> = weights
        .iter()
        .map(|w| total.gradient_weights(w).amax())
        .collect();
    let row = summarize(
        horizon,
        &errors,
        &consensus,
        &gradnorms,
        trajectory.empirical_g,
    );
    Ok(HorizonRun {
        row,
        errors,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    /// Empty for presets without a sweep.
    pub label: String,
    pub preset: ExperimentPreset,
    pub reference_value: f64,
    pub reference_method: &'static str,
    pub rows: Vec<MetricsRow>,
}

/// Reference solution for one variant.
pub fn variant_reference(
    preset: &ExperimentPreset,
    problem: Option<&Problem>,
) -> Result<OracleReport> {
    match (preset.engine, problem) {
        (Engine::MsDfmd, _) => brute_force_simplex(
            &SimplexFunctional::sum(&msdfmd_functionals())?,
            SIMPLEX_RESOLUTION,
        ),
        (_, Some(p)) => reference_solution(&p.global, preset.seed),
        (_, None) => Err(Error::InvalidParameter(
            "RKHS reference needs a problem".into(),
        )),
    }
}

fn run_variant(label: String, preset: ExperimentPreset) -> Result<VariantResult> {
    preset.check()?;
    let schedule = preset.schedule()?;
    let record = RecordOptions::nothing();
    let (reference, rows) = if preset.engine == Engine::MsDfmd {
        let functionals = msdfmd_functionals();
        let reference = variant_reference(&preset, None)?;
        let rows = preset
            .tgrid
            .par_iter()
            .map(|&t| {
                run_simplex_horizon(&preset, &schedule, &functionals, reference.value, t, record)
                    .map(|r| r.row)
            })
            .collect::<Result<Vec<_>>>()?;
        (reference, rows)
    } else {
        let problem = preset.problem()?;
        let reference = variant_reference(&preset, Some(&problem))?;
        for note in &reference.notes {
            info!("{} {label}: oracle note: {note}", preset.name.name());
        }
        let rows = preset
            .tgrid
            .par_iter()
            .map(|&t| {
                run_rkhs_horizon(&preset, &problem, &schedule, &reference, t, record).map(|r| r.row)
            })
            .collect::<Result<Vec<_>>>()?;
        (reference, rows)
    };
    Ok(VariantResult {
        label,
        preset,
        reference_value: reference.value,
        reference_method: reference.method,
        rows,
    })
}

/// Runs every variant of the preset at every `T` of its grid. Each `T` is an
/// independent run from scratch since the step size depends on `T`. Rows come
/// back in grid order.
pub fn run_preset(preset: &ExperimentPreset) -> Result<Vec<VariantResult>> {
    preset.check()?;
    preset
        .variants()
        .into_par_iter()
        .map(|(label, p)| run_variant(label, p))
        .collect()
}

/// Writes one CSV per variant, with metadata comments. Sweeps get the
/// variant label appended to the file stem.
pub fn write_results(results: &[VariantResult], out: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(results.len());
    for r in results {
        let path = labelled_path(out, &r.label);
        let mut metadata = r.preset.metadata();
        metadata.push(format!(
            "reference = {} via {}",
            format_sig(r.reference_value),
            r.reference_method
        ));
        emit_csv_with_metadata(&r.rows, &metadata, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset::OutlierSpec;
    use crate::harness::report::csv_string;
    use crate::losses::LossSpec;

    fn small(p: ExperimentPreset) -> ExperimentPreset {
        ExperimentPreset {
            agents: 4,
            samples: 3,
            dim: 3,
            tgrid: vec![20, 80],
            ..p
        }
    }

    #[test]
    fn rows_follow_grid_and_repeat_exactly() {
        let p = small(ExperimentPreset::fig1_ls());
        let a = run_preset(&p).unwrap();
        let b = run_preset(&p).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(
            a[0].rows.iter().map(|r| r.t).collect::<Vec<_>>(),
            vec![20, 80]
        );
        assert_eq!(csv_string(&a[0].rows, &[]), csv_string(&b[0].rows, &[]));
        for r in &a[0].rows {
            assert!(r.max_err >= r.min_err && r.min_err >= NEGATIVE_ERROR_TOL);
        }
    }

    #[test]
    fn cauchy_preset_reduces_to_least_squares() {
        let ls = small(ExperimentPreset::fig1_ls());
        let mut c = small(ExperimentPreset::fig4_cauchy());
        c.loss = LossSpec::half_squared();
        c.outliers = Some(OutlierSpec {
            shift: 0.0,
            ..c.outliers.unwrap()
        });
        let a = run_preset(&ls).unwrap();
        let b = run_preset(&c).unwrap();
        assert_eq!(a[0].rows, b[0].rows);
    }

    #[test]
    fn sweeps_write_labelled_files() {
        let p = ExperimentPreset {
            sweep: crate::harness::preset::Sweep::Agents(vec![3, 4]),
            ..small(ExperimentPreset::fig2_agents())
        };
        let res = run_preset(&p).unwrap();
        assert_eq!(
            res.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(),
            vec!["m3", "m4"]
        );
        let dir = tempfile::tempdir().unwrap();
        let paths = write_results(&res, &dir.path().join("fig2.csv")).unwrap();
        assert!(paths[0].ends_with("fig2_m3.csv") && paths[1].ends_with("fig2_m4.csv"));
        assert!(paths.iter().all(|p| p.exists()));
    }

    #[test]
    fn simplex_demo_runs() {
        let p = ExperimentPreset {
            tgrid: vec![50, 400],
            ..ExperimentPreset::msdfmd_demo()
        };
        let res = run_preset(&p).unwrap();
        assert!(res[0].rows[1].max_err < res[0].rows[0].max_err);
    }
}
