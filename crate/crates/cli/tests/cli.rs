//! End-to-end runs of the `akit` binary: exit codes and output files.

use std::path::Path;
use std::process::{Command, Output};

fn akit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn simulate(dir: &Path, seconds: &str) {
    let o = akit(
        &[
            "simulate",
            "--scenario",
            "lawnmower",
            "--duration",
            seconds,
            "--seed",
            "4",
            "--out",
            "sim",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&akit(&["--help"], dir.path())), 0);
    assert_eq!(code(&akit(&["run", "--help"], dir.path())), 0);
    let o = akit(&["run", "--method", "kalman", "--data", "x"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
    assert_eq!(code(&akit(&["fly"], dir.path())), 1);
    assert_eq!(code(&akit(&["run", "--method", "ekf"], dir.path())), 1);
}

#[test]
fn simulated_mission_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "30");
    for f in ["imu.csv", "dvl.csv", "gt.csv", "scenario.json"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    let o = akit(
        &["run", "--method", "aekf1", "--data", "sim", "--out", "r"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/run.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "aekf1");
    assert_eq!(summary["epochs"], 3001);
    assert_eq!(summary["updates"], 30);
    let v = summary["vrmse"].as_f64().unwrap();
    assert!(v.is_finite() && v > 0.0 && v < 1.0, "{v}");
    let states = std::fs::read_to_string(dir.path().join("r/states.csv")).unwrap();
    let gt = std::fs::read_to_string(dir.path().join("sim/gt.csv")).unwrap();
    assert_eq!(states.lines().count(), gt.lines().count());
    assert_eq!(states.lines().next(), gt.lines().next());

    // an akit run without a network is a configuration error
    assert_eq!(
        code(&akit(
            &["run", "--method", "akit", "--data", "sim"],
            dir.path()
        )),
        2
    );
}

#[test]
fn default_forgetting_weight_matches_explicit_configuration() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "20");
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"adaptive": {"variant": "forgetting", "window": 5, "gamma": 0.15, "floor": 1e-15}, "perturb": true}"#,
    )
    .unwrap();
    let a = akit(
        &["run", "--method", "aekf3", "--data", "sim", "--out", "a"],
        dir.path(),
    );
    let b = akit(
        &[
            "run", "--method", "aekf3", "--data", "sim", "--out", "b", "--config", "run.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0, "{}", String::from_utf8_lossy(&b.stderr));
    let read = |d: &str| std::fs::read(dir.path().join(d).join("states.csv")).unwrap();
    assert_eq!(read("a"), read("b"));

    std::fs::write(
        dir.path().join("slow.json"),
        r#"{"adaptive": {"gamma": 0.5}}"#,
    )
    .unwrap();
    let c = akit(
        &[
            "run",
            "--method",
            "aekf3",
            "--data",
            "sim",
            "--out",
            "c",
            "--config",
            "slow.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&c), 0);
    assert_ne!(read("a"), read("c"));
}

#[test]
fn bad_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "10");
    let imu = dir.path().join("sim/imu.csv");
    let text = std::fs::read_to_string(&imu).unwrap();
    let broken: Vec<&str> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 5 { "0.04,abc" } else { l })
        .collect();
    std::fs::write(&imu, broken.join("\n")).unwrap();
    let o = akit(&["run", "--method", "ekf", "--data", "sim"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("imu.csv"));

    assert_eq!(
        code(&akit(
            &["run", "--method", "ekf", "--data", "missing"],
            dir.path()
        )),
        2
    );
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        code(&akit(&["train", "--config", "bad.json"], dir.path())),
        2
    );
    assert_eq!(code(&akit(&["mc", "--segment", "test-99"], dir.path())), 2);
    assert_eq!(code(&akit(&["report", "nowhere"], dir.path())), 2);
}

#[test]
fn monte_carlo_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"name": "short", "duration": 20.0, "legs": [{"duration": 20.0, "yaw_rate_deg_s": 0.0, "accel": 0.0, "pitch_deg": 0.0}]}"#;
    std::fs::write(dir.path().join("short.json"), spec).unwrap();
    let o = akit(
        &[
            "mc",
            "--scenario",
            "short.json",
            "--runs",
            "3",
            "--methods",
            "ekf,aekf2",
            "--seed",
            "2",
            "--out",
            "mc",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "traces.csv", "cumulative.csv"] {
        assert!(dir.path().join("mc").join(f).exists(), "{f}");
    }
    let o = akit(&["report", "mc", "--out", "rep"], dir.path());
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(dir.path().join("rep/report.md")).unwrap();
    assert_eq!(table, String::from_utf8_lossy(&o.stdout));
    assert_eq!(table.lines().count(), 4);
    assert!(table
        .lines()
        .nth(3)
        .unwrap()
        .starts_with("| short | aekf2 | 3 |"));
}

#[test]
fn polar_start_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "5");
    let gt = dir.path().join("sim/gt.csv");
    let text = std::fs::read_to_string(&gt).unwrap();
    let moved: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[1] = "90";
            f.join(",")
        })
        .collect();
    std::fs::write(&gt, moved.join("\n")).unwrap();
    std::fs::write(dir.path().join("exact.json"), r#"{"perturb": false}"#).unwrap();
    let o = akit(
        &[
            "run",
            "--method",
            "ekf",
            "--data",
            "sim",
            "--config",
            "exact.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
