use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coherent-usd")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn design_ppm_class1() {
    let v = json_of(&run(&["design", "--code", "ppm", "--m", "3", "--alpha2", "1", "--class", "1"]));
    assert!((v["p0"].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-9);
    assert_eq!(v["class"], 1);
    assert!(v["receiver"].is_object());
}

#[test]
fn closed_form_bound_at_branch_point() {
    let a2 = 4.0f64.ln().to_string();
    let v = json_of(&run(&["bound", "--code", "dd", "--alpha2", &a2, "--method", "closed-form"]));
    assert!((v["p0"].as_f64().unwrap() - 0.625).abs() < 1e-12);
    let numeric = json_of(&run(&["bound", "--code", "dd", "--alpha2", &a2]));
    assert!((numeric["p0"].as_f64().unwrap() - 0.625).abs() < 1e-6);
}

#[test]
fn classify_dual_ppm() {
    let v = json_of(&run(&["classify", "--code", "dual-ppm", "--m", "3", "--alpha2", "1"]));
    assert_eq!(v["rank"], 3);
    let gamma = v["ppm_reduction"]["gamma"].as_array().unwrap();
    for g in gamma {
        assert!((g[0].as_f64().unwrap() + 1.0 / 3.0).abs() < 1e-9);
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    // Class 1 cannot handle a degenerate code.
    let out = run(&["design", "--code", "guha", "--class", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(run(&["design", "--code", "ppm", "--class", "7"]).status.code(), Some(2));
    assert_eq!(run(&["design", "--code", "missing-code.json", "--class", "1"]).status.code(), Some(2));
    assert_eq!(run(&["gram", "--code", "ppm", "--format", "csv"]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--class", "1", "--min", "2", "--max", "1"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn csv_tables_carry_a_header() {
    let out = run(&["finite-rate", "--code", "ppm", "--class", "1", "--length", "10,1000"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# coherent-usd "));
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "length,rate");
    assert_eq!(body.len(), 3);
    assert!(text.contains("# epsilon: 0.001"));
}

#[test]
fn tables_render_as_json_and_go_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig7.json");
    let out = run(&["reproduce", "fig7", "--format", "json", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 60);
    for r in rows {
        let class3 = r["p0_class3"].as_f64().unwrap();
        assert!((class3 - r["p0_class3_closed_form"].as_f64().unwrap()).abs() < 1e-6);
        assert!(r["p0_global"].as_f64().unwrap() <= class3 + 1e-12);
    }
}

#[test]
fn seeded_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run_to = |name: &str| {
        let p = dir.path().join(name);
        let args =
            ["simulate", "--code", "dd", "--alpha2", "1", "--shots", "20000", "--workers", "3", "--out", p.to_str().unwrap()];
        assert!(run(&args).status.success());
        std::fs::read(p).unwrap()
    };
    assert_eq!(run_to("a.json"), run_to("b.json"));
}

#[test]
fn simulation_of_the_dd_receiver_is_unambiguous() {
    let v = json_of(&run(&["simulate", "--code", "dd", "--alpha2", "1", "--shots", "20000"]));
    assert_eq!(v["simulation"]["wrong_decodes"], 0);
    assert!(v["max_z_score"].as_f64().unwrap() < 6.0);
}

#[test]
fn capacity_optimal_weights_close_the_gap() {
    let args = |class: &str| {
        json_of(&run(&["capacity", "--code", "guha", "--alpha2", "1", "--class", class, "--optimize-weights"]))
    };
    let linear = args("2");
    let global = args("bound");
    let gap = global["capacity"].as_f64().unwrap() - linear["capacity"].as_f64().unwrap();
    assert!(gap.abs() < 1e-6, "gap {gap}");
    assert!(linear["design_weights"].is_array());
}

#[test]
fn diagnostics_path_follows_out() {
    let p = usd_runner::diagnostics_path(Some(Path::new("/tmp/x.csv")));
    assert_eq!(p, Path::new("/tmp/x.csv.diagnostics.json"));
    assert_eq!(usd_runner::diagnostics_path(None), Path::new("coherent-usd-diagnostics.json"));
}
