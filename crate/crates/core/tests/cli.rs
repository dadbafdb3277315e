use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use zeroshot::io::{read_labels, read_matrix};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeroshot")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small synthetic dataset with five classes; class 5 is kept unseen.
fn synth(root: &Path) -> PathBuf {
    let dir = root.join("synth");
    ok(&[
        "synth", "--seed", "7", "--classes", "5", "--text-dim", "4", "--visual-dim", "6", "--images-per-class", "8",
        "--out", &s(&dir),
    ]);
    dir
}

fn data_flags(dir: &Path) -> Vec<String> {
    ["features", "labels", "text"]
        .iter()
        .zip(["features.cfmx", "labels.txt", "text.cfmx"])
        .flat_map(|(flag, file)| [format!("--{flag}"), s(&dir.join(file))])
        .collect()
}

fn train(root: &Path, data: &Path, formulation: &str, extra: &[&str]) -> (PathBuf, Output) {
    let model = root.join(format!("model-{formulation}"));
    let flags = data_flags(data);
    let mut args = vec!["train", "--formulation", formulation, "--seen", "1,2,3,4", "--out"];
    let model_s = s(&model);
    args.push(&model_s);
    args.extend(flags.iter().map(String::as_str));
    args.extend_from_slice(extra);
    let out = ok(&args);
    (model, out)
}

#[test]
fn featurize_writes_matrix_and_vocabulary() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus.json");
    std::fs::write(
        &corpus,
        r#"{"cardinal": "red bird with a crest", "iris": "purple flower with three petals",
            "jay": "blue bird that calls loudly", "tulip": "red flower with cup petals"}"#,
    )
    .unwrap();
    let out = root.path().join("text");
    ok(&["featurize", "--corpus", &s(&corpus), "--out", &s(&out)]);
    let m = read_matrix(&out.join("text.cfmx")).unwrap();
    let vocab = json(&out.join("vocabulary.json"));
    let terms = vocab["terms"].as_array().unwrap();
    assert_eq!(m.nrows(), 4);
    assert_eq!(m.ncols(), terms.len());
    assert!(terms.iter().any(|t| t == "petals"));
    assert_eq!(vocab["class_ids"], serde_json::json!([1, 2, 3, 4]));

    let again = root.path().join("text2");
    ok(&["featurize", "--corpus", &s(&corpus), "--out", &s(&again)]);
    for f in ["text.cfmx", "vocabulary.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn featurize_missing_corpus_is_an_input_error() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&["featurize", "--corpus", &s(&root.path().join("nope.json")), "--out", &s(root.path())]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_c_logs_a_decreasing_trace() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let (model, _) = train(root.path(), &data, "C", &[]);
    assert!(model.join("transfer.cfmx").is_file());
    let log = json(&model.join("train_log.json"));
    let trace: Vec<f64> = log["models"]["transfer"]["trace"]
        .as_array()
        .expect("transfer trace")
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(trace.len() >= 2);
    assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
    assert!(trace.last().unwrap() < trace.first().unwrap());
}

#[test]
fn train_e_writes_regression_and_transfer() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let (model, _) = train(root.path(), &data, "E", &[]);
    for f in ["regression.json", "transfer.cfmx", "transfer.json", "seen_classifiers.cfmx"] {
        assert!(model.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn invalid_selector_is_a_usage_error() {
    let out = run(&["train", "--formulation", "F"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn predict_e_keeps_seen_images_negative() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let (model, _) = train(root.path(), &data, "E", &[]);
    let out = root.path().join("predict");
    ok(&[
        "predict", "--model", &s(&model), "--formulation", "E", "--text", &s(&data.join("text.cfmx")), "--class", "5",
        "--C", "1e6", "--test-features", &s(&data.join("features.cfmx")), "--out", &s(&out),
    ]);
    assert!(out.join("classifier.cfmx").is_file());
    let labels = read_labels(&data.join("labels.txt")).unwrap();
    let csv = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("image,score"));
    let scores: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), labels.len());
    let worst = scores.iter().zip(&labels).filter(|(_, &c)| c != 5).map(|(s, _)| *s).fold(f64::MIN, f64::max);
    assert!(worst <= 1e-6, "highest seen score {worst}");
}

#[test]
fn predict_without_model_is_an_input_error() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let out = run(&[
        "predict", "--model", &s(&root.path().join("missing")), "--formulation", "E", "--text", &s(&data.join("text.cfmx")),
        "--class", "5", "--out", &s(&root.path().join("p")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_reports_every_fold() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let out = root.path().join("eval");
    let flags = data_flags(&data);
    let mut args = vec!["eval", "--formulation", "C", "--folds", "5", "--out"];
    let out_s = s(&out);
    args.push(&out_s);
    args.extend(flags.iter().map(String::as_str));
    ok(&args);
    let report = json(&out.join("report.json"));
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);
    assert!(report["summary"]["C"]["auc"]["mean"].is_f64());
    assert!(out.join("report.txt").is_file() && out.join("roc.csv").is_file());
}

#[test]
fn eval_with_mismatched_split_is_an_input_error() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let split = root.path().join("split.json");
    // Class 9 does not exist in the five-class dataset.
    std::fs::write(&split, r#"{"seen": [1, 2, 3], "unseen": [9]}"#).unwrap();
    let flags = data_flags(&data);
    let split_s = s(&split);
    let out_s = s(&root.path().join("eval"));
    let mut args = vec!["eval", "--formulation", "C", "--splits", &split_s, "--out", &out_s];
    args.extend(flags.iter().map(String::as_str));
    assert_eq!(code(&run(&args)), 2);
}

#[test]
fn synth_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let a = synth(root.path());
    let b = root.path().join("synth-again");
    ok(&[
        "synth", "--seed", "7", "--classes", "5", "--text-dim", "4", "--visual-dim", "6", "--images-per-class", "8",
        "--out", &s(&b),
    ]);
    for f in ["features.cfmx", "labels.txt", "text.cfmx", "corpus.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [None, Some("featurize"), Some("train"), Some("predict"), Some("eval"), Some("synth")] {
        let args: Vec<&str> = sub.into_iter().chain(["--help"]).collect();
        let out = run(&args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--seed"), "{args:?}");
    }
}

#[test]
fn noiseless_identity_task_is_easy_for_c() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("config.json");
    // Class means sit exactly on the scaled prototypes. The image clouds are
    // kept tighter than the unit default, which alone caps every formulation
    // near 0.93 AUC at this scale.
    std::fs::write(
        &config,
        r#"{"synth": {"n_classes": 10, "text_dim": 8, "visual_dim": 8, "noise": 0.0, "spread": 0.5, "identity_map": true}}"#,
    )
    .unwrap();
    let out = root.path().join("eval");
    ok(&["eval", "--config", &s(&config), "--synthetic", "--formulation", "C", "--seed", "1", "--out", &s(&out)]);
    let report = json(&out.join("report.json"));
    let auc = report["summary"]["C"]["auc"]["mean"].as_f64().unwrap();
    assert!(auc >= 0.95, "C mean AUC {auc}");
}
