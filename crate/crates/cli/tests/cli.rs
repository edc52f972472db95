use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_openset-al"));
    c.env_remove("OPENSET_AL_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn minimal_config(dir: &Path, out: &str) -> String {
    let cfg = format!(
        r#"{{
  "train": {{"num_cycles": 2, "epochs": 12, "lr_milestones": [6, 9], "discrepancy_epochs": 2, "hidden_widths": [16], "query_size": 20}},
  "data": {{"blobs": {{"num_known": 3, "num_unknown": 2, "dim": 6, "per_class": 40, "test_per_class": 10}}}},
  "strategies": ["dcfs"],
  "openness_ratios": [0.3],
  "seeds": [4],
  "output_dir": "{}"
}}"#,
        dir.join(out).display()
    );
    let path = dir.join(format!("{out}.json"));
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn missing_required_field_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"strategies": ["random"], "seeds": [0], "output_dir": "x"}"#).unwrap();
    let out = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("openness_ratios"));
}

#[test]
fn invalid_field_value_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        r#"{"strategies": ["random"], "openness_ratios": [0.2], "seeds": [0], "output_dir": "x", "train": {"lambda": 1.5}}"#,
    )
    .unwrap();
    let out = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lambda"));

    fs::write(&path, r#"{"strategies": ["best"], "openness_ratios": [0.2], "seeds": [0], "output_dir": "x"}"#).unwrap();
    let out = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("best"));
}

#[test]
fn minimal_config_writes_one_csv_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), "out");
    let out = run(&["run", "--config", &cfg, "--jobs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    assert_eq!(csv_files(&out_dir), vec!["run_dcfs_r0.3_s4.csv"]);
    let first = fs::read(out_dir.join("run_dcfs_r0.3_s4.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(text.starts_with("cycle,strategy,seed,r,query_precision,test_accuracy"));

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["tau1"], 7.0);
    assert_eq!(manifest["runs"][0]["csv"], "run_dcfs_r0.3_s4.csv");

    let out = run(&["run", "--config", &cfg]);
    assert!(out.status.success());
    assert_eq!(fs::read(out_dir.join("run_dcfs_r0.3_s4.csv")).unwrap(), first);
}

#[test]
fn environment_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), "env");
    let out = bin().args(["run", "--config", &cfg]).env("OPENSET_AL_SEED", "9").output().unwrap();
    assert!(out.status.success());
    assert_eq!(csv_files(&dir.path().join("env")), vec!["run_dcfs_r0.3_s9.csv"]);
}

const HEADER: &str = "cycle,strategy,seed,r,query_precision,test_accuracy,labeled_size,unlabeled_size,discarded_unknown,wall_time";

fn write_run(dir: &Path, seed: u64, final_acc: f64, extra: &str) {
    let body = format!(
        "{HEADER}\n0,random,{seed},0.2,,0.5,10,90,0,0.0\n{extra}1,random,{seed},0.2,0.75,{final_acc},13,80,1,0.0\n"
    );
    fs::write(dir.join(format!("run_random_r0.2_s{seed}.csv")), body).unwrap();
}

#[test]
fn report_aggregates_mean_and_population_std() {
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), 0, 0.8, "");
    write_run(dir.path(), 1, 0.9, "");
    write_run(dir.path(), 2, 1.0, "this,row,is,broken\n");
    let out = run(&["report", "--dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], &["random", "0.2", "3"]);
    let mean: f64 = row[3].parse().unwrap();
    let std: f64 = row[4].parse().unwrap();
    assert!((mean - 0.9).abs() < 1e-12);
    assert!((std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);

    let series = fs::read_to_string(dir.path().join("query_precision.csv")).unwrap();
    assert_eq!(series.lines().nth(1).unwrap(), "random,0.2,1,3,0.75,0");
}

#[test]
fn report_on_single_run_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), 0, 0.8, "");
    assert!(run(&["report", "--dir", dir.path().to_str().unwrap()]).status.success());
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",1,0.8,0"), "{summary}");
}

#[test]
fn report_without_runs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap()]).status.code(), Some(1));
    fs::write(dir.path().join("run_x.csv"), "not,a,metrics,file\n").unwrap();
    assert_eq!(run(&["report", "--dir", dir.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn check_passes_on_pristine_build() {
    let out = run(&["check"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS decomposition identity"));
    assert!(!stdout.contains("FAIL"));
}
