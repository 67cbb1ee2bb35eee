use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrac(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrac"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MRAC_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mrac(&["run", "--scenario", "case1", "--out", "r"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "trajectory.csv",
        "summary.txt",
        "config.toml",
        "reference_output.svg",
        "error.svg",
        "states.svg",
        "control.svg",
        "gains.svg",
    ] {
        assert!(tmp.path().join("r").join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(tmp.path().join("r/trajectory.csv")).unwrap();
    // comment, header, 180 steps
    assert_eq!(csv.lines().count(), 182);
}

#[test]
fn no_plots_skips_svgs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mrac(&["run", "--scenario", "case1", "--out", "r", "--no-plots"], tmp.path());
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("r/trajectory.csv").is_file());
    assert!(!tmp.path().join("r/error.svg").exists());
}

#[test]
fn default_output_goes_under_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mrac"))
        .args(["run", "--scenario", "case2", "--no-plots"])
        .current_dir(tmp.path())
        .env("MRAC_OUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("elsewhere/case2/summary.txt")).unwrap();
    assert!(summary.contains("start_step = 60"));
    assert!(summary.contains("start_step = 120"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let out = mrac(&["run", "--scenario", "case2", "--out", dir, "--no-plots"], tmp.path());
        assert_eq!(code(&out), 0);
    }
    for f in ["trajectory.csv", "summary.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mrac(&["run", "--config", "absent/exp.toml"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent/exp.toml"));
}

#[test]
fn validate_reports_the_violated_field() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mrac(&["validate", "--scenario", "case1"], tmp.path())), 0);
    let out = mrac(
        &["validate", "--scenario", "case1", "--set", "experiment.critic_rate=1.5"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("zeta_c"));
    let out = mrac(&["validate", "--scenario", "case1", "--set", "experiment.dt=0"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dt"));
    assert_eq!(code(&mrac(&["validate", "--scenario", "case9"], tmp.path())), 2);
}

#[test]
fn config_file_round_trips_through_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mrac(&["run", "--scenario", "case1", "--out", "a", "--no-plots"], tmp.path())), 0);
    let out = mrac(
        &["run", "--config", "a/config.toml", "--out", "b", "--no-plots"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(tmp.path().join("a/trajectory.csv")).unwrap(),
        fs::read(tmp.path().join("b/trajectory.csv")).unwrap()
    );
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mrac(&["run", "--scenario", "case1", "--out", "r", "--no-plots"], tmp.path())), 0);
    let out = mrac(
        &["sweep", "--scenario", "case1", "--grid", "critic_rate=0.5", "--out", "s", "--no-plots"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(tmp.path().join("r/trajectory.csv")).unwrap(),
        fs::read(tmp.path().join("s/cell-000/trajectory.csv")).unwrap()
    );
}

#[test]
fn two_by_two_sweep_aggregates_four_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mrac(
        &[
            "sweep", "--scenario", "case2", "--grid", "critic_rate=0.25,0.5", "--grid",
            "actor_rate=0.25,0.5", "--out", "s", "--no-plots", "--jobs", "2",
        ],
        tmp.path(),
    );
    assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
    let agg = fs::read_to_string(tmp.path().join("s/aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("cell,critic_rate,actor_rate,status"));
    assert!(lines[2].starts_with("cell-001,0.25,0.5,"));
    for i in 0..4 {
        assert!(tmp.path().join(format!("s/cell-{i:03}/trajectory.csv")).is_file());
    }
}

#[test]
fn mode_sweep_finishes_even_when_a_cell_diverges() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mrac(
        &["sweep", "--scenario", "case1", "--grid", "mode=residual,as_printed", "--out", "s", "--no-plots"],
        tmp.path(),
    );
    let agg = fs::read_to_string(tmp.path().join("s/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    let diverged = agg.lines().skip(1).filter(|l| l.contains("diverged")).count();
    assert_eq!(code(&out), if diverged > 0 { 3 } else { 0 });
}

#[test]
fn malformed_grid_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    for grid in ["critic_rate", "gamma=1", "dt=0.1,", "dt=0.1,0"] {
        let out = mrac(&["sweep", "--scenario", "case1", "--grid", grid, "--out", "s"], tmp.path());
        assert_eq!(code(&out), 2, "{grid}");
    }
    assert!(!tmp.path().join("s").exists());
}
