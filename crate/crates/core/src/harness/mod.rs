//! Presets, configuration, metrics and CSV output for the experiments.

pub mod config;
pub mod preset;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, validate_preset, ValidationOutcome};
pub use preset::{
    msdfmd_functionals, ExperimentPreset, PresetName, Problem, DEFAULT_SEED, DEFAULT_TGRID,
};
pub use report::{emit_csv, emit_csv_with_metadata, format_sig, MetricsRow, CSV_HEADER};
pub use run::{
    run_preset, run_rkhs_horizon, run_simplex_horizon, write_results, HorizonRun, VariantResult,
};
