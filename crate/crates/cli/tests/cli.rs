//! Black-box checks of the `sim` binary: exit codes, output files, and the
//! printed formats other tooling parses.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sim"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("write config");
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_outputs_and_honors_seed_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "short.cfg", "sim.duration = 0.4\n");
    let out_dir = tmp.path().join("run");
    let out = sim()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--scenario", "constant", "--out"])
        .arg(&out_dir)
        .args(["--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("net_energy_J = "));

    let csv = fs::read_to_string(out_dir.join("timeseries.csv")).unwrap();
    assert!(csv.starts_with("t,z,z_dot,h,V_p,V_rect,V_storage,i_L,V_out,P_load,D,f_drive,C_effective,event_flags"));
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("seed = 7"));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = sim()
        .args(["run", "--config", "/dev/null", "--scenario", "warble", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("control"));
}

#[test]
fn adaptive_without_a_table_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = sim()
        .args(["run", "--config", "/dev/null", "--scenario", "adaptive", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "bogus.key = 1\n");
    let out = sim()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--scenario", "constant", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));
}

#[test]
fn build_lut_writes_table_and_feeds_adaptive_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "narrow.cfg",
        "lut.f_min_hz = 99\nlut.f_max_hz = 101\nlut.step_hz = 1\nlut.cell_duration = 0.2\n",
    );
    let table = tmp.path().join("table.csv");
    let out = sim()
        .args(["build-lut", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("gain_vs_bypass"));
    assert!(text.matches('%').count() >= 3);

    let csv = fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("freq_hz,c_effective_f\n"));
    assert_eq!(csv.lines().count(), 4);

    let run_cfg = write_cfg(
        tmp.path(),
        "use_lut.cfg",
        &format!("sim.duration = 0.4\nsim.lut_path = {}\n", table.display()),
    );
    let out = sim()
        .args(["run", "--config"])
        .arg(&run_cfg)
        .args(["--scenario", "constant-adaptive", "--out"])
        .arg(tmp.path().join("adaptive"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_prints_gain_of_b_over_a_last() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "short.cfg", "sim.duration = 0.4\n");
    for name in ["a", "b"] {
        let out = sim()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--scenario", "constant", "--out"])
            .arg(tmp.path().join(name))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let out = sim()
        .arg("compare")
        .arg(tmp.path().join("a"))
        .arg(tmp.path().join("b"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let last = text.trim_end().lines().last().unwrap();
    assert_eq!(last, "net energy gain of b over a: 0.00%");
}

#[test]
fn oracle_prints_the_frozen_sweep_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "oracle.cfg", "oracle.window = 0.1\n");
    let out = sim()
        .args(["oracle", "--config"])
        .arg(&cfg)
        .args(["--freeze-at", "0.3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for key in ["t_freeze_s = 0.3", "window_s = 0.1", "d_star = ", "p_star_W = "] {
        assert!(text.contains(key), "missing `{key}` in:\n{text}");
    }
    let p_star: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("p_star_W = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(p_star > 0.0);
}
