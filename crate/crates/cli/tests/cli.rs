use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mwld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwld")).args(args).env_remove("MWLD_THREADS").output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn ratefn_reports_value_and_timescale() {
    let v = json(&mwld(&["ratefn", "--b", "3,1", "--t", "10", "--lambda", "0.2"]));
    assert_eq!(v["command"], "ratefn");
    assert_eq!(v["result"]["t_star"], 2);
    assert!(v["result"]["value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn mean_target_costs_nothing() {
    let v = json(&mwld(&["ratefn", "--b", "mean"]));
    assert_eq!(v["result"]["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[source]\nlamda = 0.2\n").unwrap();
    let out_path = dir.path().join("out.json");
    let out = mwld(&["ratefn", "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());

    let out = mwld(&["ratefn", "--t", "ten"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn exhausted_grid_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.json");
    let out = mwld(&[
        "ratefn",
        "--method",
        "grid-dp",
        "--max-states",
        "10",
        "--b",
        "3,1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_path.exists());
}

#[test]
fn zero_level_always_overflows() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("mc.csv");
    let v = json(&mwld(&[
        "mc",
        "--L",
        "10",
        "--B",
        "0,0",
        "--replicates",
        "500",
        "--csv",
        csv_path.to_str().unwrap(),
    ]));
    let e = &v["result"]["estimates"][0];
    assert_eq!(e["p_hat"].as_f64().unwrap(), 1.0);
    assert_eq!(e["successes"], 500);
    assert_eq!(v["result"]["reference"].as_f64().unwrap(), 0.0);
    assert!(v["result"]["trend"].is_null());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "L,T,B_1,B_2,replicates,p_hat,ci_lo,ci_hi,decay");
    assert!(lines.next().unwrap().starts_with("10,4,"));
}

#[test]
fn mc_is_reproducible_across_thread_counts() {
    let args = ["mc", "--L", "10,20", "--B", "1,1", "--replicates", "2000", "--seed", "7"];
    let one = mwld(&[&args[..], &["--threads", "1"]].concat());
    let two = mwld(&[&args[..], &["--threads", "2"]].concat());
    assert_eq!(json(&one)["result"], json(&two)["result"]);
}

#[test]
fn bounds_nearly_coincide_at_light_load() {
    let v = json(&mwld(&["bounds", "--b", "3,1", "--t", "10", "--lambda", "0.1"]));
    let r = &v["result"];
    let (lo, hi) = (r["lower"].as_f64().unwrap(), r["upper"].as_f64().unwrap());
    assert!(lo <= hi * (1.0 + 1e-9));
    assert!((hi - lo) / lo < 0.01, "gap {}", (hi - lo) / lo);
}

#[test]
fn echoed_config_reproduces_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&mwld(&["i2", "--b", "2,1", "--set", "source.mu=0.02"]));
    let cfg = dir.path().join("echo.json");
    std::fs::write(&cfg, serde_json::to_string(&v["config"]).unwrap()).unwrap();
    let again = json(&mwld(&["i2", "--config", cfg.to_str().unwrap()]));
    assert_eq!(again["config_digest"], v["config_digest"]);
    assert_eq!(again["result"], v["result"]);
}

#[test]
fn trajectory_csv_follows_the_recursion() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("traj.csv");
    let v = json(&mwld(&["trajectory", "--arrivals", "1,2;0.5,0.5;2,0", "--csv", csv_path.to_str().unwrap()]));
    let w = &v["result"]["workloads"];
    assert_eq!(w[3][0].as_f64().unwrap(), 2.5);
    assert_eq!(w[3][1].as_f64().unwrap(), 1.5);
    assert!(Path::new(&csv_path).exists());
}

#[test]
fn oracle_agrees_with_exact_value() {
    let v = json(&mwld(&["oracle", "--b", "2,1", "--t", "2", "--oracle-delta", "0.05"]));
    assert_eq!(v["result"]["within_slack"], true);
}

#[test]
fn compare_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("cmp.csv");
    let v = json(&mwld(&["compare", "--grid", "0:1:1", "--t", "3", "--csv", csv_path.to_str().unwrap()]));
    assert_eq!(v["result"]["cells"], 4);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("b1,b2,max_weight,gps,priority\n"));
}
