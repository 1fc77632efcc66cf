use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpcc_core::scenarios::{build_circular_v2o_study, study_csv};
use serde_json::Value;
use tempfile::TempDir;

const LOG_HEADER: &str = "time,x,y,psi,vx,vy,r,theta,delta,fx,delta_cmd,fx_cmd,delta_dot,fx_dot,lambda_b,\
e_con,e_lag,beta_deg,ax,ay,d_v2e_left,d_v2e_right,d_v2o_1,d_v2o_2,\
status,iterations,objective,kkt,violation,fallback,clipped";

fn mpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpcc"))
        .args(args)
        .env_remove("MPCC_LOG_LEVEL")
        .output()
        .unwrap()
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

/// The default config on a shorter road, to keep the tests quick.
fn short_config(dir: &Path) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(default_config()).unwrap()).unwrap();
    let sc = &mut cfg["scenario"];
    sc["road_length"] = 90.0.into();
    sc["run_out"] = 50.0.into();
    sc["obstacle_s"] = serde_json::json!([45.0, 65.0]);
    sc["transition_length"] = 25.0.into();
    let path = dir.join("short.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artefacts_with_the_documented_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("run");
    let o = mpcc(&["run", s(&cfg), "--mode", "mpcc-ca", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["log.csv", "metrics.json", "trajectory.svg", "states.svg", "gg.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), LOG_HEADER);
    let width = LOG_HEADER.split(',').count();
    assert!(log.lines().skip(1).all(|l| l.split(',').count() == width));

    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["mode"], "mpcc-ca");
    assert_eq!(m["outcome"], "completed");
    assert_eq!(m["metrics"]["collision"], false);
    assert!(m["timing"]["median_solve_ms"].as_f64().unwrap() > 0.0);
    for svg in ["trajectory.svg", "states.svg", "gg.svg"] {
        let text = fs::read_to_string(out.join(svg)).unwrap();
        assert!(text.starts_with("<svg") && text.contains(r#"width="1200" height="400""#));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    std::thread::scope(|sc| {
        for d in &dirs {
            let cfg = &cfg;
            sc.spawn(move || {
                let o = mpcc(&["run", s(cfg), "--mode", "frenet-baseline", "--out", s(d), "--no-timing"]);
                assert!(o.status.success(), "{}", stderr(&o));
            });
        }
    });
    for f in ["log.csv", "metrics.json", "trajectory.svg", "states.svg", "gg.svg"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f} differs");
    }
    let m = fs::read_to_string(dirs[0].join("metrics.json")).unwrap();
    assert!(!m.contains("timing"));
}

#[test]
fn missing_config_fails_without_output() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("never");
    let o = mpcc(&["run", "/nonexistent/config.json", "--mode", "mpcc-ca", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: config: "), "{err}");
}

#[test]
fn invalid_config_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(default_config()).unwrap()).unwrap();
    cfg["scenario"]["lane_width"] = 2.5.into();
    fs::write(&path, cfg.to_string()).unwrap();
    let out = tmp.path().join("o");
    let o = mpcc(&["run", s(&path), "--mode", "mpcc-ca", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_one_with_one_line() {
    for args in [
        vec!["run", "x.json", "--mode", "fast", "--out", "o"],
        vec![],
        vec!["study-frenet", "--radii", "abc", "--out", "o"],
    ] {
        let o = mpcc(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: usage: "), "{err}");
    }
}

#[test]
fn bad_log_level_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mpcc"))
        .args(["study-frenet", "--radii", "20", "--out", s(&tmp.path().join("o"))])
        .env("MPCC_LOG_LEVEL", "loud")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn study_single_radius_matches_the_library() {
    let tmp = TempDir::new().unwrap();
    let o = mpcc(&["study-frenet", "--radii", "20", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("study_r20.csv")).unwrap();
    assert_eq!(csv, study_csv(&build_circular_v2o_study(20.0, 0.0).unwrap()));
    assert!(tmp.path().join("overestimation.svg").is_file());
}

#[test]
fn study_writes_one_table_per_radius() {
    let tmp = TempDir::new().unwrap();
    let o = mpcc(&["study-frenet", "--radii", "10,20,40", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csvs = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 3);
}

#[test]
fn study_rejects_non_positive_radii() {
    for radii in ["0", "20,-5"] {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("o");
        let o = mpcc(&["study-frenet", "--radii", radii, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(1), "{radii}");
        assert!(!out.exists());
    }
}

#[test]
fn compare_reports_every_mode() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("cmp");
    let o = mpcc(&["compare", s(&cfg), "--modes", "mpcc-ca,frenet-baseline,mpcc-ca", "--out", s(&out), "--no-timing"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j: Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    let runs = j["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    let labels: Vec<&str> = runs.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["mpcc-ca", "frenet-baseline", "mpcc-ca_2"]);
    assert!(runs.iter().all(|r| r["metrics"].is_object()));
    assert_eq!(runs[0]["metrics"], runs[2]["metrics"]);
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,mpcc-ca_x,"));
    assert!(header.contains("frenet-baseline_beta_deg") && header.contains("mpcc-ca_2_d_v2o_2"));
    for f in ["trajectory.svg", "states.svg", "gg.svg"] {
        assert!(out.join(f).is_file());
    }
}

#[test]
fn compare_needs_two_modes() {
    let tmp = TempDir::new().unwrap();
    let o = mpcc(&["compare", s(&default_config()), "--modes", "mpcc-ca", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}
