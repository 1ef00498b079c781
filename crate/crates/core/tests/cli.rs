use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &["--set", "data.d=6", "--set", "data.n=150", "--set", "data.n_test=50", "--set", "optim.epochs=3"];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perturb-learn"))
        .args(SMALL)
        .args(args)
        .arg("--workers")
        .arg("1")
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

#[test]
fn gen_data_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = json_lines(&run(a.path(), &["gen-data"]));
    let rb = json_lines(&run(b.path(), &["gen-data"]));
    assert_eq!(ra[0]["train_hash"], rb[0]["train_hash"]);
    assert_eq!(ra[0]["test_hash"], rb[0]["test_hash"]);
    assert_eq!(ra[0]["config_hash"], rb[0]["config_hash"]);
    assert_eq!(std::fs::read(a.path().join("train.plrn")).unwrap(), std::fs::read(b.path().join("train.plrn")).unwrap());
}

#[test]
fn staged_pipeline_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["gen-data"]).status.success());
    let train = json_lines(&run(dir.path(), &["train"]));
    let train_data = dir.path().join("train.plrn");
    let eval = json_lines(&run(dir.path(), &["eval", "--data", train_data.to_str().unwrap()]));
    assert_eq!(train[0]["train_acc"], eval[0]["acc"]);

    let p = run(dir.path(), &["perturb"]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stdout));
    let r = json_lines(&run(dir.path(), &["relearn"]));
    assert_eq!(r[0]["cmd"], "relearn");
    assert!(dir.path().join("relearned.plrn").exists());
}

#[test]
fn sweep_output_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["sweep", "--set", "sweep.axis=\"eps\"", "--set", "sweep.grid=[0.2, 0.6]", "--set", "perturb.steps=5"];
    let oa = run(a.path(), &args);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stdout));
    assert!(run(b.path(), &args).status.success());
    let ca = std::fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert_eq!(ca, std::fs::read_to_string(b.path().join("results.csv")).unwrap());
    assert!(ca.starts_with("eps,adv_acc_for_natural,noise_acc_for_natural,rep,seed\n"));
    assert_eq!(ca.lines().count(), 3);
}

#[test]
fn errors_report_category_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    let e = &json_lines(&o)[0];
    assert_eq!(e["category"], "missing_artifact");
    assert!(e["path"].as_str().unwrap().ends_with("train.plrn"));

    let o = run(dir.path(), &["gen-data", "--set", "data.n=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_lines(&o)[0]["category"], "config");

    let o = run(dir.path(), &["gen-data", "--set", "nosuch.key=1"]);
    assert_eq!(json_lines(&o)[0]["category"], "config");
}
