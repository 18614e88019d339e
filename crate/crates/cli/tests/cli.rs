use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use pooltest::formats::{load_patients, read_plan_csv};

fn pooltest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pooltest")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn write_patients(dir: &Path, name: &str, rows: impl Iterator<Item = (String, f64)>) -> PathBuf {
    let mut text = String::from("patient_id,risk\n");
    for (id, r) in rows {
        text.push_str(&format!("{id},{r}\n"));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn analyze_dorfman_appendix_value() {
    let out = pooltest(&["analyze", "--strategy", "dorfman", "-p", "0.1", "-n", "12", "-m", "32", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let tests: f64 = row[4].parse().unwrap();
    assert!((tests - 25.62).abs() <= 0.01, "{tests}");
}

#[test]
fn analyze_zero_prevalence() {
    let out = pooltest(&["analyze", "--strategy", "dorfman", "-p", "0", "-n", "8", "-m", "32", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"][0]["expected_tests"], 4.0);
}

#[test]
fn analyze_grid_warns_but_succeeds() {
    let out = pooltest(&["analyze", "--strategy", "grid2d", "-p", "0.2", "-n", "20", "-m", "400"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("validity bound"), "{}", stderr(&out));
    assert!(stderr(&out).contains("0.0474"));
    let out = pooltest(&["analyze", "--strategy", "grid2d", "-p", "0.01", "-n", "20", "-m", "100"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("needs 400 samples"));
}

#[test]
fn optimize_examples() {
    let out = pooltest(&["optimize", "--strategy", "dorfman", "-p", "0.01,0.4", "--format", "csv"]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].starts_with("dorfman,0.01,11,"));
    assert!(lines[2].starts_with("dorfman,0.4,1,") && lines[2].ends_with("do not pool"));
    let out = pooltest(&["optimize", "--strategy", "grid2d", "-p", "0.01", "-m", "400", "--format", "csv"]);
    assert!(stdout(&out).lines().nth(1).unwrap().starts_with("grid2d,0.01,20,"));
}

#[test]
fn optimize_p_range() {
    let out = pooltest(&["optimize", "--strategy", "double", "--p-range", "0.01:0.05:0.01", "--format", "csv"]);
    let sizes: Vec<String> =
        stdout(&out).lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect();
    assert_eq!(sizes, ["25", "16", "13", "11", "9"]);
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--strategy", "tree", "-p", "0.05", "-n", "16", "-m", "32", "--trials", "3000", "--seed", "7"];
    let a = pooltest(&args);
    let b = pooltest(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = pooltest(&["simulate", "--strategy", "tree", "-p", "0.05", "-n", "16", "-m", "32", "--trials", "3000", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_zero_prevalence() {
    let out = pooltest(&["simulate", "--strategy", "tree", "-p", "0", "-n", "32", "--trials", "50", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"][0]["mean_tests"], 1.0);
    assert_eq!(v["rows"][0]["stderr"], 0.0);
}

#[test]
fn tables_closed_form_rows() {
    let out = pooltest(&["tables", "double", "--format", "csv"]);
    let reported: Vec<String> =
        stdout(&out).lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect();
    assert_eq!(reported, ["0.13", "0.21", "0.27", "0.32", "0.37"]);
    let out = pooltest(&["tables", "table2", "--trials", "200", "--format", "csv"]);
    let single: Vec<String> = stdout(&out)
        .lines()
        .filter(|l| l.starts_with("single,"))
        .map(|l| l.split(',').nth(5).unwrap().to_string())
        .collect();
    assert_eq!(single, ["0.2", "0.27", "0.33", "0.38", "0.43"]);
}

#[test]
fn table1_zero_column() {
    let out = pooltest(&["tables", "table1", "--trials", "100", "--format", "csv"]);
    let zero: Vec<String> = stdout(&out)
        .lines()
        .filter(|l| l.starts_with("0,"))
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    assert_eq!(zero, ["32", "16", "8", "4", "2", "1"]);
}

#[test]
fn sweep_csv_columns() {
    let out = pooltest(&["sweep", "--strategy", "dorfman", "-p", "0.01", "--format", "csv"]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,p,n,m,trials,mean_tests,stderr,mean_tpp,mean_rounds");
    let best = lines
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
        .min_by(|a, b| a[7].parse::<f64>().unwrap().total_cmp(&b[7].parse().unwrap()))
        .unwrap();
    assert_eq!(best[2], "11");
    let out = pooltest(&["sweep", "--strategy", "grid2d", "--worst-case", "-p", "0.01", "-m", "400", "--format", "csv"]);
    let best = stdout(&out)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
        .min_by(|a, b| a[7].parse::<f64>().unwrap().total_cmp(&b[7].parse().unwrap()))
        .unwrap();
    assert_eq!(best[2], "20");
}

#[test]
fn exit_codes() {
    assert_eq!(pooltest(&["--help"]).status.code(), Some(0));
    assert_eq!(pooltest(&["--version"]).status.code(), Some(0));
    assert_eq!(pooltest(&["analyze", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(pooltest(&["analyze", "-p", "1.5", "-n", "4"]).status.code(), Some(1));
    assert_eq!(pooltest(&["analyze", "-p", "0.1", "-n", "40"]).status.code(), Some(1));
    assert_eq!(pooltest(&["simulate", "--strategy", "grid2d", "-p", "0.1", "-n", "5", "-m", "10"]).status.code(), Some(1));
    assert_eq!(pooltest(&["plan", "--patients", "/nonexistent/patients.csv"]).status.code(), Some(2));
}

#[test]
fn plan_rejects_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "patient_id,risk\na,0.1\nb,1.5\n").unwrap();
    let out = pooltest(&["plan", "--patients", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn plan_homogeneous_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_patients(dir.path(), "p.csv", (0..1100).map(|i| (format!("id{i}"), 0.01)));
    let out = pooltest(&["plan", "--patients", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let row = &v["rows"][0];
    assert!((row["expected_tpp"].as_f64().unwrap() - 0.1956).abs() < 5e-5);
    assert!((row["reduction"].as_f64().unwrap() - 0.804).abs() < 5e-4);
    assert_eq!(row["groups"], 100);
    assert_eq!(row["duplicated_samples"], 1100);
}

#[test]
fn plan_high_risk_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_patients(dir.path(), "p.csv", (0..50).map(|i| (format!("id{i}"), 0.5 + i as f64 / 100.0)));
    let out = pooltest(&["plan", "--patients", path.to_str().unwrap(), "--strategy", "grid2d", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"][0]["reduction"], 0.0);
    assert_eq!(v["rows"][0]["duplicated_samples"], 0);
}

#[test]
fn plan_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cdf = data("synthetic_risk_cdf.csv");
    let plan_path = dir.path().join("plan.csv");
    let out = pooltest(&[
        "plan",
        "--cdf",
        cdf.to_str().unwrap(),
        "-m",
        "5000",
        "--strategy",
        "double",
        "--seed",
        "3",
        "--out",
        plan_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let groups = read_plan_csv(fs::File::open(&plan_path).unwrap()).unwrap();
    let json_path = dir.path().join("plan.json");
    pooltest(&["plan", "--cdf", cdf.to_str().unwrap(), "-m", "5000", "--strategy", "double", "--seed", "3", "--out", json_path.to_str().unwrap()]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&json_path).unwrap()).unwrap();
    let json_groups = doc["groups"].as_array().unwrap();
    assert_eq!(groups.len(), json_groups.len());
    for (g, j) in groups.iter().zip(json_groups) {
        assert_eq!(g.strategy, j["strategy"].as_str().unwrap());
        assert_eq!(g.pool_size as u64, j["pool_size"].as_u64().unwrap());
        let members: Vec<&str> = j["members"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
        assert_eq!(g.members, members);
    }
    let total: usize = groups.iter().map(|g| g.members.len()).sum();
    assert_eq!(total, 5000);
    assert_eq!(doc["duplicated"].as_array().unwrap().len(), doc["duplication_count"].as_u64().unwrap() as usize);

    // the plan's patient columns load back as a cohort
    let text = fs::read_to_string(&plan_path).unwrap();
    let mut patients = String::from("patient_id,risk\n");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        patients.push_str(&format!("{},{}\n", f[5], f[6]));
    }
    assert_eq!(load_patients(patients.as_bytes()).unwrap().len(), 5000);
}

#[test]
fn plan_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cdf = data("synthetic_risk_cdf.csv");
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = pooltest(&[
            "plan",
            "--cdf",
            cdf.to_str().unwrap(),
            "-m",
            "3000",
            "--strategy",
            "grid2d",
            "--seed",
            "11",
            "--evaluate",
            "50",
            "--out",
            path.to_str().unwrap(),
        ]);
        (out.stdout, fs::read(path).unwrap())
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn large_patient_file_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_patients(
        dir.path(),
        "big.csv",
        (0..120_000).map(|i| (format!("IL{i:07}"), ((i * 7919) % 1000) as f64 / 10_000.0)),
    );
    let start = Instant::now();
    let out = pooltest(&["plan", "--patients", path.to_str().unwrap(), "--out", dir.path().join("plan.csv").to_str().unwrap()]);
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(elapsed.as_secs_f64() < 10.0, "{elapsed:?}");
}
