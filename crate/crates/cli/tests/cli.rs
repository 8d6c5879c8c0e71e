use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_priorshift"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, n_seeds: usize) -> PathBuf {
    let config = serde_json::json!({
        "data": {"synthetic": {"n_train": 80, "n_dev": 40, "n_test": 60, "seed": 3}},
        "model": {"lstm_layers": 1, "lstm_hidden_per_direction": 4, "context_hidden": 4, "mlp_hidden": 8,
                  "char_cnn_filter_widths": [1, 3]},
        "train": {"max_epochs": 2, "patience": 0, "learning_rate": 0.003, "seed": 5},
        "n_seeds": n_seeds,
        "ensemble_size": 2,
        "output_dir": dir.join("unused"),
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    path
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn synth_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["synth", "--seed", "7", "--n-train", "600", "--out", s(&a)]);
    ok(&["synth", "--seed", "7", "--n-train", "600", "--out", s(&b)]);
    for f in ["train.tsv", "dev.tsv", "test.tsv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(data_rows(&a.join("train.tsv")).len(), 600);
    let details: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(
        details["counts"]["train"],
        serde_json::json!([100, 100, 100, 300])
    );
    assert_eq!(
        details["counts"]["dev"],
        serde_json::json!([30, 30, 30, 510])
    );
    assert_eq!(
        details["counts"]["test"],
        serde_json::json!([100, 100, 100, 1700])
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["generator_seed"], 7);
}

#[test]
fn synth_into_unwritable_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["synth", "--n-train", "20", "--out", s(&blocker.join("sub"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("I/O error"));
}

#[test]
fn train_then_eval_and_compare_baseline_agree() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 1);
    let ck = dir.path().join("ck");
    let trained: serde_json::Value = serde_json::from_str(&ok(&[
        "train",
        "--config",
        s(&config),
        "--method",
        "none",
        "--out",
        s(&ck),
    ]))
    .unwrap();
    assert_eq!(trained["seed"], 5);
    for f in [
        "model.json",
        "correction.json",
        "history.csv",
        "manifest.json",
        "config.json",
    ] {
        assert!(ck.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(ck.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,train_acc,val_acc,val_micro_f1\n"));
    assert_eq!(history.lines().count(), 3);

    let report: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--config",
        s(&config),
    ]))
    .unwrap();
    for field in [
        "method",
        "seed",
        "n_examples",
        "accuracy",
        "micro_f1_emotional",
        "micro_f1_all",
        "per_class",
        "predicted",
        "gold",
        "tv_distance",
    ] {
        assert!(!report[field].is_null(), "{field}");
    }
    assert_eq!(report["n_examples"], 60);

    let cmp = dir.path().join("cmp");
    ok(&[
        "compare",
        "--config",
        s(&config),
        "--method",
        "none",
        "--members",
        "1",
        "--out",
        s(&cmp),
    ]);
    let eval_row = data_rows(&ck.join("report.csv"));
    let compare_rows = data_rows(&cmp.join("single_runs.csv"));
    assert_eq!(eval_row.len(), 1);
    assert_eq!(compare_rows, eval_row);
}

#[test]
fn eval_threshold_override_only_changes_inference() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 1);
    let ck = dir.path().join("ck");
    ok(&["train", "--config", s(&config), "--out", s(&ck)]);
    let out = dir.path().join("thr");
    let report: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--config",
        s(&config),
        "--method",
        "threshold",
        "--out",
        s(&out),
    ]))
    .unwrap();
    assert_eq!(report["method"], "threshold");
    assert!(out.join("report.json").exists());
    // The checkpoint itself is untouched.
    assert!(!ck.join("report.json").exists());
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 1);
    let missing = run(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("nope")),
        "--config",
        s(&config),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("I/O error"));

    let ck = dir.path().join("ck");
    ok(&["train", "--config", s(&config), "--out", s(&ck)]);
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--n-train",
        "20",
        "--n-dev",
        "20",
        "--n-test",
        "20",
        "--out",
        s(&data),
    ]);
    let unlabelled: String = fs::read_to_string(data.join("test.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string() + "\n")
        .collect();
    let path = dir.path().join("unlabelled.tsv");
    fs::write(&path, unlabelled).unwrap();
    let out = run(&["eval", "--checkpoint", s(&ck), "--data", s(&path)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("contract violated") && err.contains("label"),
        "{err}"
    );
}

#[test]
fn compare_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["compare", "--config", s(&config), "--out", s(&a)]);
    ok(&["compare", "--config", s(&config), "--out", s(&b)]);
    for f in [
        "single_summary.csv",
        "ensemble_summary.csv",
        "distributions.csv",
        "single_runs.csv",
        "ensemble_runs.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let single_ordering = data_rows(&a.join("single_summary.csv"));
    assert_eq!(single_ordering.len(), 5);
    for row in &single_ordering {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "1");
        for std in [cols[3], cols[5], cols[7]] {
            assert_eq!(std, "0.000000");
        }
    }
    let ensemble_gain = data_rows(&a.join("ensemble_summary.csv"));
    assert_eq!(ensemble_gain.len(), 6);
    assert!(ensemble_gain[5].starts_with("mixed,2,"));
    let header = fs::read_to_string(a.join("distributions.csv")).unwrap();
    assert!(header.starts_with("class,actual,baseline,oversample,undersample,threshold,cost\n"));
}

#[test]
fn ensemble_command_and_flag_validation() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 1);
    let out = dir.path().join("ens");
    let text = ok(&[
        "ensemble",
        "--config",
        s(&config),
        "--method",
        "none,cost",
        "--members",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(text.lines().count(), 2);
    assert_eq!(data_rows(&out.join("ensembles.csv")).len(), 2);

    let bad = run(&[
        "compare",
        "--config",
        s(&config),
        "--seeds",
        "0",
        "--out",
        s(&out),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("n_seeds"));
    assert!(!run(&["train", "--method", "bogus"]).status.success());
}
