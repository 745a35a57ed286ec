//! Shared fixtures for the engine benchmarks.

use dfo_core::dfgd::dfgd_step;
use dfo_core::harness::{ExperimentPreset, Problem};
use dfo_core::{MixingSchedule, RkhsFunction};

/// fig1 at the given size with its ring schedule.
pub fn fig1_problem(agents: usize, samples: usize) -> (ExperimentPreset, Problem, MixingSchedule) {
    let preset = ExperimentPreset {
        agents,
        samples,
        ..ExperimentPreset::fig1_ls()
    };
    let problem = preset.problem().expect("fig1 problem");
    let schedule = preset.schedule().expect("ring schedule");
    (preset, problem, schedule)
}

/// Agent states after a few iterations from zero, so coefficients are dense.
pub fn warm_states(
    problem: &Problem,
    schedule: &MixingSchedule,
    steps: usize,
) -> Vec<RkhsFunction> {
    let mut states = vec![RkhsFunction::zero(&problem.space); problem.global.agents()];
    for t in 1..=steps {
        states = dfgd_step(&states, &schedule.matrix(t), problem.global.locals(), 1.0)
            .expect("dfgd step");
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shape() {
        let (_, problem, schedule) = fig1_problem(5, 4);
        assert_eq!(problem.space.len(), 20);
        let states = warm_states(&problem, &schedule, 3);
        assert_eq!(states.len(), 5);
        assert!(states.iter().all(|s| s.norm() > 0.0));
    }
}
