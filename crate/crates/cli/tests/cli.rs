use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use covsteer::model::{double_integrator, save_problem};
use serde_json::Value;
use tempfile::TempDir;

fn covsteer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covsteer"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COVSTEER_TOL_FEAS")
        .env_remove("COVSTEER_TOL_GAP_REL")
        .env_remove("COVSTEER_TOL_GAP_ABS")
        .env_remove("COVSTEER_MAX_ITER")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_manifest_header(csv: &str, command: &str) {
    let first = csv.lines().next().unwrap();
    let json = first.strip_prefix("# manifest: ").expect("manifest comment first");
    let m: Value = serde_json::from_str(json).unwrap();
    assert_eq!(m["command"], command);
    assert!(m.get("timestamp_unix").is_none() && m.get("jobs").is_none());
}

#[test]
fn solve_writes_documents_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = covsteer(&["solve", "--builtin", "di29-cc", "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for name in ["solution.json", "trajectory.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs between runs");
    }
    let doc: Value = serde_json::from_str(&read(&a, "solution.json")).unwrap();
    assert_eq!(doc["status"], "Optimal");
    assert_eq!(doc["lossless"]["pass"], true);
    assert_eq!(doc["stages"].as_array().unwrap().len(), 29);
    let traj = read(&a, "trajectory.csv");
    assert_manifest_header(&traj, "solve");
    assert_eq!(traj.lines().nth(1).unwrap(), "k,Sigma_00,Sigma_01,Sigma_11,y_lambda_max,k_fro");
    assert_eq!(traj.lines().count(), 2 + 30);
    let manifest: Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert!(manifest["timestamp_unix"].is_u64());
}

#[test]
fn infeasible_problem_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = covsteer(&["solve", "--builtin", "di8-cc"], tmp.path());
    assert_eq!(code(&o), 2);
    let doc: Value = serde_json::from_str(&read(&tmp.path().join("out"), "solution.json")).unwrap();
    assert_eq!(doc["status"], "Infeasible");
}

#[test]
fn brute_force_is_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    for (jobs, out) in [("1", "j1"), ("8", "j8")] {
        let o = covsteer(&["bruteforce", "--builtin", "di8", "--jobs", jobs, "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let one = read(&tmp.path().join("j1"), "pareto.csv");
    assert_eq!(one, read(&tmp.path().join("j8"), "pareto.csv"));
    assert_manifest_header(&one, "bruteforce");
    assert_eq!(one.lines().nth(1).unwrap(), "J_tau,J_sigma,provenance,mask,feasible");
}

#[test]
fn brute_force_refuses_long_horizons() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("n17.json");
    save_problem(&double_integrator(17, false), &path).unwrap();
    let o = covsteer(&["bruteforce", path.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 4);
    assert!(!tmp.path().join("out").join("pareto.csv").exists());
}

#[test]
fn iteration_limit_exits_3() {
    let tmp = TempDir::new().unwrap();
    let o = covsteer(&["irl1p", "--builtin", "di8", "--lambda", "100", "--lmax", "1"], tmp.path());
    assert_eq!(code(&o), 3);
    let trace = read(&tmp.path().join("out"), "trace.csv");
    assert_manifest_header(&trace, "irl1p");
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn irl1p_and_sweep_outputs() {
    let tmp = TempDir::new().unwrap();
    let o = covsteer(&["irl1p", "--builtin", "di8", "--lambda", "150", "--out", "i"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("termination=Converged"), "{stdout}");
    let header = read(&tmp.path().join("i"), "trace.csv").lines().nth(1).unwrap().to_string();
    assert!(header.starts_with("iter,J_Sigma,J_tau,max_residual,status,w_0,"));

    let o = covsteer(&["sweep", "--builtin", "di8", "--lambdas", "log:10:100:3", "--jobs", "2", "--out", "s"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = read(&tmp.path().join("s"), "sweep.csv");
    assert_eq!(sweep.lines().count(), 2 + 3);
    assert!(sweep.lines().skip(2).all(|l| l.ends_with(",true")));
}

#[test]
fn simulate_is_deterministic_and_checks_dimensions() {
    let tmp = TempDir::new().unwrap();
    let o = covsteer(&["solve", "--builtin", "di29-cc", "--out", "sol"], tmp.path());
    assert_eq!(code(&o), 0);
    let solution = tmp.path().join("sol").join("solution.json");
    let solution = solution.to_str().unwrap();
    for (jobs, out) in [("1", "m1"), ("4", "m4"), ("4", "m4b")] {
        let args = ["simulate", "--builtin", "di29-cc", "--solution", solution, "--samples", "5000", "--seed", "7", "--jobs", jobs, "--out", out];
        let o = covsteer(&args, tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = read(&tmp.path().join("m1"), "mc_report.json");
    assert_eq!(first, read(&tmp.path().join("m4"), "mc_report.json"));
    assert_eq!(first, read(&tmp.path().join("m4b"), "mc_report.json"));
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["samples"], 5000);
    assert_eq!(report["violation_rates"].as_array().unwrap().len(), 29);
    assert!(report["terminal_relative_error"].as_f64().unwrap() < 0.1);

    let o = covsteer(&["simulate", "--builtin", "di8", "--solution", solution], tmp.path());
    assert_eq!(code(&o), 5);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let no_chance = tmp.path().join("p.json");
    save_problem(&double_integrator(3, false), &no_chance).unwrap();
    let cases: [&[&str]; 4] = [
        &["solve", "--builtin", "nonexistent"],
        &["solve", no_chance.to_str().unwrap(), "--chance", "on"],
        &["sweep", "--builtin", "di8", "--lambdas", "log:0:1:3"],
        &["solve", "--unknown-flag"],
    ];
    for args in cases {
        assert_eq!(code(&covsteer(args, tmp.path())), 1, "{args:?}");
    }
    assert_eq!(code(&covsteer(&["solve", tmp.path().join("missing.json").to_str().unwrap()], tmp.path())), 1);
}
