use std::path::Path;
use std::process::{Command, Output};

use claustrum_seg::model::ModelConfig;
use claustrum_seg::pipeline::{SliceSampling, TrainSpec};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claustrum-seg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let spec = TrainSpec {
        batch_size: 4,
        learning_rate: 1e-3,
        max_epochs: 1,
        slice_sampling: SliceSampling::Foreground { background_ratio: 0.25 },
        model: ModelConfig {
            input_size: (32, 32),
            channel_widths: vec![4, 8, 16],
            ..ModelConfig::default()
        },
        ..TrainSpec::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = bin(&["phantom", "--out", "x", "--no-such-flag"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "stderr: {err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn existing_output_requires_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cohort");
    let args = ["phantom", "--out", s(&out), "--per-style", "1", "--size", "24"];
    assert!(bin(&args).status.success());
    let again = bin(&args);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(bin(&forced).status.success());
}

#[test]
fn phantom_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = tiny_config(root);
    let data = root.join("data");
    assert!(bin(&["phantom", "--out", s(&data), "--per-style", "2", "--size", "32", "--seed", "3"]).status.success());
    let manifest = data.join("manifest.csv");

    let pre = root.join("pre");
    assert!(bin(&["preprocess", "--manifest", s(&manifest), "--out", s(&pre), "--jobs", "2"]).status.success());
    assert!(pre.join("manifest.csv").exists());

    let models = root.join("models");
    let train = bin(&[
        "train", "--manifest", s(&manifest), "--config", s(&config), "--out", s(&models), "--views", "A,C", "--seed", "1",
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    for f in ["model-axial.ckpt", "model-coronal.ckpt", "curve-axial.csv", "curve-coronal.csv", "config.json"] {
        assert!(models.join(f).exists(), "missing {f}");
    }

    let preds = root.join("preds");
    let predict = bin(&[
        "predict", "--manifest", s(&manifest), "--config", s(&config), "--models", s(&models), "--out", s(&preds),
        "--lambda", "0.5", "--threshold", "0.5", "--jobs", "2",
    ]);
    assert!(predict.status.success(), "{}", String::from_utf8_lossy(&predict.stderr));
    assert!(preds.join("phantom-A-000_mask.nii.gz").exists());
    assert!(preds.join("phantom-A-000_prob.nii.gz").exists());

    let eval = root.join("eval");
    let evaluate = bin(&["evaluate", "--manifest", s(&manifest), "--predictions", s(&preds), "--out", s(&eval)]);
    let csv = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["overall"]["subjects"], 8);
    let errors = summary["overall"]["errors"].as_u64().unwrap();
    assert_eq!(evaluate.status.success(), errors == 0);
}

#[test]
fn evaluate_flags_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(bin(&["phantom", "--out", s(&data), "--per-style", "1", "--size", "24"]).status.success());
    let empty = dir.path().join("nothing");
    std::fs::create_dir(&empty).unwrap();
    let out = bin(&[
        "evaluate", "--manifest", s(&data.join("manifest.csv")), "--predictions", s(&empty), "--out", s(&dir.path().join("eval")),
    ]);
    assert!(!out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().skip(1).filter(|l| l.contains("error")).count(), 4);
}

#[test]
fn loso_experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert!(bin(&["phantom", "--out", s(&data), "--per-style", "2", "--size", "32"]).status.success());
    let out = dir.path().join("loso");
    let run = bin(&[
        "experiment", "loso", "--manifest", s(&data.join("manifest.csv")), "--config", s(&config), "--out", s(&out),
        "--views", "A",
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 4);
    assert_eq!(report["experiment"], "loso");
    let errors = report["combinations"][0]["overall"]["errors"].as_u64().unwrap();
    assert_eq!(run.status.success(), errors == 0);
    for scanner in ["style_A", "style_B", "style_C", "style_D"] {
        assert!(out.join(format!("test-{scanner}/model-axial.ckpt")).exists());
    }
}
