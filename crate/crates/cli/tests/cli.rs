use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dfo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfo"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_csv_with_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested").join("simplex.csv");
    let o = dfo(&[
        "run",
        "--preset",
        "msdfmd-demo",
        "--tgrid",
        "20,80",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("# seed = 3"), "{text}");
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        data[0],
        "T,max_err,min_err,mean_consensus,max_gradnorm,empirical_G"
    );
    assert!(data[1].starts_with("20,") && data[2].starts_with("80,"));
    assert_eq!(stdout(&o).trim(), out.to_str().unwrap());
}

#[test]
fn run_from_config_labels_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep.toml",
        "[experiment]\npreset = \"fig2-agents\"\ntgrid = [10, 30]\nagents_sweep = [3, 4]\n[data]\nsamples = 3\ndim = 2\n",
    );
    let out = dir.path().join("fig2.csv");
    let o = dfo(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("fig2_m3.csv").exists());
    assert!(dir.path().join("fig2_m4.csv").exists());
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "small.toml",
        "[experiment]\npreset = \"fig4-cauchy\"\ntgrid = [25, 100]\n[data]\nagents = 4\nsamples = 3\n",
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = dfo(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn validate_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "fig1.toml",
        "[experiment]\npreset = \"fig1-ls\"\n",
    );
    let o = dfo(&["validate", "--config", &config]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("preset = fig1-ls") && text.trim_end().ends_with("PASS"),
        "{text}"
    );
}

#[test]
fn validate_zero_floor_fails_with_entry_floor() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.toml",
        "[experiment]\npreset = \"fig1-ls\"\n[network]\nzeta = 0.0\n",
    );
    let o = dfo(&["validate", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("entry-floor"), "{}", stdout(&o));
}

#[test]
fn validate_large_constant_step_warns_but_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "step.toml",
        "[experiment]\npreset = \"fig1-ls\"\n[data]\nagents = 10\nsamples = 5\ndim = 5\n[loss]\nlambda = 0.1\n[step]\nrule = \"constant\"\neta = 1000.0\n",
    );
    let o = dfo(&["validate", "--config", &config]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("warning:"), "{}", stdout(&o));
}

#[test]
fn validate_reports_parse_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "typo.toml",
        "[experiment]\npreset = \"fig1-ls\"\n\n[loss]\nlamda = 0.1\n",
    );
    let o = dfo(&["validate", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_validation_failure() {
    let o = dfo(&["validate", "--config", "/nonexistent/dfo.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_prints_reference_values() {
    let o = dfo(&["oracle", "--preset", "msdfmd-demo"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("J* = 2.750000000000e-1"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn network_check_passes_on_rings() {
    let o = dfo(&["network-check", "--m", "6", "--horizon", "60"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(text.trim_end().ends_with("PASS"));
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(dfo(&["run", "--preset", "fig9"]).status.code(), Some(1));
    assert_eq!(dfo(&["network-check", "--m", "1"]).status.code(), Some(1));
    assert_eq!(dfo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        dfo(&["run", "--preset", "fig1-ls", "--tgrid", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dfo(&["--help"]).status.code(), Some(0));
}

#[test]
fn nonconvex_dfmd_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "dfmd.toml",
        "[experiment]\npreset = \"fig4-cauchy\"\nengine = \"dfmd\"\ntgrid = [10]\n[data]\nagents = 3\nsamples = 3\n",
    );
    let out = dir.path().join("x.csv");
    let o = dfo(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("nonconvex"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("x.csv");
    let o = dfo(&[
        "run",
        "--preset",
        "msdfmd-demo",
        "--tgrid",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
