//! `dfo`: run experiment presets, validate configurations, query oracles and
//! check network mixing.
//!
//! Exit status is 0 on success, 1 when validation fails (bad arguments,
//! configuration or network) and 2 when a run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfo_core::harness::preset::Engine;
use dfo_core::harness::run::variant_reference;
use dfo_core::harness::{
    load_config, run_preset, validate_preset, write_results, ExperimentPreset, PresetName,
};
use dfo_core::network::{check_mixing_bound, ring_schedule, validate_assumption1};
use dfo_core::oracle::OracleReport;
use dfo_core::Error;
use log::info;

#[derive(Parser, Debug)]
#[command(
    name = "dfo",
    version,
    about = "Distributed functional optimization experiments"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a preset over its horizon grid and write one CSV per variant.
    Run(RunArgs),
    /// Check a configuration file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the reference optimum of every variant of a preset.
    Oracle {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check ring schedules against the mixing bound.
    NetworkCheck {
        /// Largest ring size; every size from 2 up is checked.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// TOML configuration instead of a named preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV. Sweeps append the variant label to the file stem.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated horizons, e.g. 250,1000,4000.
    #[arg(long, value_delimiter = ',')]
    tgrid: Option<Vec<usize>>,
}

enum Failure {
    Validation(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. }
            | Error::InvalidParameter(_)
            | Error::BadMixingMatrix(_)
            | Error::BadWindow { .. } => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

/// Any problem reading a configuration is a validation failure.
fn config_failure(e: Error) -> Failure {
    Failure::Validation(e.to_string())
}

fn named_preset(name: &str) -> Result<ExperimentPreset, Failure> {
    PresetName::parse(name)
        .map(ExperimentPreset::named)
        .ok_or_else(|| {
            let known: Vec<&str> = PresetName::ALL.iter().map(|p| p.name()).collect();
            Failure::Validation(format!(
                "unknown preset '{name}' (known: {})",
                known.join(", ")
            ))
        })
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut preset = match (&args.preset, &args.config) {
        (_, Some(path)) => load_config(path).map_err(config_failure)?,
        (Some(name), None) => named_preset(name)?,
        (None, None) => unreachable!("clap requires one of --preset and --config"),
    };
    if let Some(seed) = args.seed {
        preset.seed = seed;
    }
    if let Some(tgrid) = args.tgrid {
        preset.tgrid = tgrid;
    }
    let outcome = validate_preset(&preset);
    if !outcome.passes() {
        return Err(Failure::Validation(outcome.render()));
    }
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let out = args
        .out
        .unwrap_or_else(|| Path::new("results").join(format!("{}.csv", preset.name.name())));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.into()))?;
    }
    info!(
        "running {} with T grid {:?}",
        preset.name.name(),
        preset.tgrid
    );
    let results = run_preset(&preset).map_err(Failure::Runtime)?;
    for path in write_results(&results, &out).map_err(Failure::Runtime)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_validate(config: &Path) -> Result<(), Failure> {
    let preset = load_config(config).map_err(config_failure)?;
    let outcome = validate_preset(&preset);
    print!("{}", outcome.render());
    if outcome.passes() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "{} failed validation",
            config.display()
        )))
    }
}

fn print_report(label: &str, r: &OracleReport) {
    let name = if label.is_empty() { "-" } else { label };
    println!("variant {name}");
    println!("  J* = {:.12e}", r.value);
    println!("  method = {}", r.method);
    println!("  gradient norm = {:.3e}", r.gradient_norm);
    if let Some(mu) = r.mu {
        println!("  mu = {mu:.6e}");
    }
    if r.restart_values.len() > 1 {
        let v: Vec<String> = r
            .restart_values
            .iter()
            .map(|x| format!("{x:.6e}"))
            .collect();
        println!("  restarts = {}", v.join(", "));
    }
    for note in &r.notes {
        println!("  note: {note}");
    }
}

fn cmd_oracle(name: &str, seed: Option<u64>) -> Result<(), Failure> {
    let mut preset = named_preset(name)?;
    if let Some(seed) = seed {
        preset.seed = seed;
    }
    preset.check()?;
    println!("preset {}", preset.name.name());
    for (label, p) in preset.variants() {
        let report = if p.engine == Engine::MsDfmd {
            variant_reference(&p, None)
        } else {
            let problem = p.problem().map_err(Failure::Runtime)?;
            variant_reference(&p, Some(&problem))
        }
        .map_err(Failure::Runtime)?;
        print_report(&label, &report);
    }
    Ok(())
}

fn cmd_network_check(m: usize, horizon: usize) -> Result<(), Failure> {
    if m < 2 || horizon < 1 {
        return Err(Failure::Validation(format!(
            "need m >= 2 and horizon >= 1, got m={m}, horizon={horizon}"
        )));
    }
    let mut failed = 0;
    println!("m  pairs  violations  worst_ratio  max_sum_dev  assumption");
    for size in 2..=m {
        let schedule = ring_schedule(size)?;
        let check = check_mixing_bound(&schedule, horizon);
        let report = validate_assumption1(&schedule, horizon);
        let ok = check.violations == 0 && report.passes();
        failed += usize::from(!ok);
        println!(
            "{size:<2} {:>6} {:>11} {:>12.4} {:>12.2e}  {}",
            check.pairs,
            check.violations,
            check.worst_ratio,
            check.max_stochastic_deviation,
            if report.passes() { "ok" } else { "violated" }
        );
    }
    if failed == 0 {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Validation(format!("{failed} ring sizes failed")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::Oracle { preset, seed } => cmd_oracle(&preset, seed),
        Command::NetworkCheck { m, horizon } => cmd_network_check(m, horizon),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
