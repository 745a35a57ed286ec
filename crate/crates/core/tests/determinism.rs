use dfo_core::harness::report::csv_string;
use dfo_core::harness::{run_preset, ExperimentPreset, VariantResult};

fn in_pool(threads: usize, preset: &ExperimentPreset) -> Vec<VariantResult> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_preset(preset).unwrap())
}

fn render(results: &[VariantResult]) -> Vec<String> {
    results
        .iter()
        .map(|r| csv_string(&r.rows, &r.preset.metadata()))
        .collect()
}

#[test]
fn thread_count_does_not_change_results() {
    let presets = [
        ExperimentPreset {
            agents: 6,
            samples: 4,
            tgrid: vec![50, 200],
            ..ExperimentPreset::fig4_cauchy()
        },
        ExperimentPreset {
            samples: 3,
            tgrid: vec![50, 200],
            sweep: dfo_core::harness::preset::Sweep::Agents(vec![3, 5]),
            ..ExperimentPreset::fig2_agents()
        },
        ExperimentPreset {
            tgrid: vec![50, 200],
            ..ExperimentPreset::msdfmd_demo()
        },
    ];
    for p in &presets {
        assert_eq!(
            render(&in_pool(1, p)),
            render(&in_pool(4, p)),
            "{}",
            p.name.name()
        );
    }
}

#[test]
fn seed_changes_results() {
    let base = ExperimentPreset {
        agents: 4,
        samples: 3,
        tgrid: vec![50],
        ..ExperimentPreset::fig1_ls()
    };
    let other = ExperimentPreset {
        seed: 8,
        ..base.clone()
    };
    assert_ne!(
        render(&run_preset(&base).unwrap()),
        render(&run_preset(&other).unwrap())
    );
}
