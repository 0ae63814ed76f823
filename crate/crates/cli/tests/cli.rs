use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navier-bubble")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

#[test]
fn constants_report_has_cross_check() {
    let out = run(&["constants", "--dim", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["schema"], "navier-bubble.report/1");
    let deltas = &report["payload"]["cross_check"]["relative_deltas"];
    for key in ["sn", "c1", "c2", "c3"] {
        assert!(deltas[key].as_f64().unwrap() < 1e-8, "{key}");
    }
    assert_eq!(report["payload"]["constants"]["method"], "closed_form");
}

#[test]
fn no_root_is_a_domain_diagnostic() {
    let out = run(&["reduce", "--dim", "7", "--k", "quad:1,1", "--x", "0", "--eps", "1e-3"]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    assert_eq!(report["payload"]["result"]["outcome"], "no_root");
    assert!(report["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().starts_with("no-root")));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["expand", "--formula", "energy", "--dim", "4"]).status.code(), Some(2));
    assert_eq!(run(&["criteria", "--dim", "5", "--k", "quad:1,-1.1"]).status.code(), Some(2));
    assert_eq!(run(&["constants", "--dim", "5", "--unknown"]).status.code(), Some(2));
    assert_eq!(run(&["green", "--dim", "5", "--x", "0,0", "--y", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["criteria", "--dim", "5", "--k", "quad:1,-0.6"]).status.code(), Some(0));
}

#[test]
fn payload_is_deterministic() {
    let args = ["expand", "--dim", "5", "--formula", "energy", "--lambda-sweep", "10,20", "--seed", "3"];
    let a = json(&run(&args));
    let b = json(&run(&args));
    assert_eq!(serde_json::to_string(&a["payload"]).unwrap(), serde_json::to_string(&b["payload"]).unwrap());
    assert_eq!(a["config"], b["config"]);
    let c = json(&run(&["constants", "--dim", "6", "--seed", "9"]));
    let d = json(&run(&["constants", "--dim", "6", "--seed", "9"]));
    assert_eq!(c["payload"], d["payload"]);
}

#[test]
fn config_echo_reparses_to_itself() {
    let report = json(&run(&["criteria", "--dim", "6", "--k", "quad:1,0.25", "--x0", "0"]));
    let config = report["config"].as_str().unwrap().to_string();
    let args: Vec<&str> = config.split_whitespace().collect();
    let again = json(&run(&args));
    assert_eq!(again["config"].as_str().unwrap(), config);
    assert_eq!(again["payload"], report["payload"]);
}

#[test]
fn csv_tables_are_lossless() {
    let args = ["green", "--dim", "5", "--x", "0.1", "--y", "0,0.3,0,0,0"];
    let out = run(&[&args[..], &["--format", "csv"]].concat());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("g,h,grad_h1"));
    let h: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let report = json(&run(&args));
    assert_eq!(h, report["payload"]["h"].as_f64().unwrap());
}

#[test]
fn landscape_honours_thread_cap() {
    let args = ["landscape", "--dim", "5", "--radii", "0,0.2", "--lambda-count", "3", "--format", "json"];
    let capped = Command::new(env!("CARGO_BIN_EXE_navier-bubble"))
        .args(args)
        .env("NAVIER_BUBBLE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(capped.status.code(), Some(0));
    let one = json(&capped);
    assert!(one["config"].as_str().unwrap().contains("--threads=1"));
    let free = json(&run(&args));
    assert_eq!(one["payload"], free["payload"]);
}

#[test]
fn radial_branch_emits_points_and_profile() {
    let out = run(&["solve-radial", "--dim", "5", "--eps-start", "0.5", "--eps-end", "0.1", "--steps", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert!(blocks[0].starts_with("eps,peak,alpha_hat,lambda_hat,fit_error"));
    assert!(blocks[0].lines().count() >= 6);
    assert!(blocks[1].starts_with("r,u,w"));
    let last_eps: f64 = blocks[0].lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(last_eps, 0.1);
}
