//! The `fetalcns` binary end to end on small inputs.

use std::path::Path;
use std::process::{Command, Output};

use fetalcns::corpus::SplitPlan;
use fetalcns::metrics::EvaluationReport;

fn fetalcns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fetalcns"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run fetalcns")
}

fn ok(args: &[&str]) -> Output {
    let out = fetalcns(args);
    assert!(
        out.status.success(),
        "fetalcns {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_and_split_covers_every_patient() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--patients",
            "5",
            "--images-per-patient",
            "2",
            "--size",
            "32",
            "--seed",
            "11",
            "--out",
            path(out),
        ]);
    }
    let manifest_a = std::fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest_a, std::fs::read_to_string(b.join("manifest.jsonl")).unwrap());
    assert_eq!(manifest_a.lines().count(), 10);
    assert_eq!(
        std::fs::read(a.join("images/P003_001.png")).unwrap(),
        std::fs::read(b.join("images/P003_001.png")).unwrap()
    );

    let split = dir.path().join("split.json");
    ok(&[
        "split",
        "--manifest",
        path(&a.join("manifest.jsonl")),
        "--scheme",
        "loocv",
        "--out",
        path(&split),
    ]);
    let plan = SplitPlan::read(&split).unwrap();
    assert_eq!(plan.folds.len(), 5);
    let mut tested: Vec<String> = plan.folds.iter().flat_map(|f| f.test_patient_ids.clone()).collect();
    tested.sort();
    assert_eq!(tested, ["P000", "P001", "P002", "P003", "P004"]);
    assert!(dir.path().join("run_manifest.json").exists());

    ok(&[
        "split",
        "--manifest",
        path(&a.join("manifest.jsonl")),
        "--scheme",
        "kfold",
        "--k",
        "2",
        "--out",
        path(&split),
    ]);
    assert_eq!(SplitPlan::read(&split).unwrap().folds.len(), 2);
}

#[test]
fn evaluate_reproduces_the_fixture_matrix_and_collapses_to_binary() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/four_class_patients.jsonl");
    let report_dir = dir.path().join("four");
    ok(&[
        "evaluate",
        "--predictions",
        path(&fixture),
        "--task",
        "4class",
        "--report",
        path(&report_dir),
    ]);
    let report: EvaluationReport =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report.patient_level.confusion.counts,
        vec![vec![3, 1, 0, 0], vec![0, 8, 0, 0], vec![0, 0, 15, 0], vec![0, 0, 1, 8]]
    );
    assert!((report.patient_level.macro_average.accuracy - 34.0 / 36.0).abs() < 1e-12);
    assert!(report.subgroup.is_some(), "fixture carries gestational ages");

    assert!(
        fetalcns(&[
            "evaluate",
            "--predictions",
            path(&fixture),
            "--task",
            "binary",
            "--report",
            path(dir.path())
        ])
        .status
        .code()
            == Some(1),
        "four-class scores carry no Normal probability to collapse"
    );
}

#[test]
fn binary_task_collapses_five_class_predictions() {
    let dir = tempfile::tempdir().unwrap();
    // P1 and P2 anomalous, P3 normal; P2 is mistaken for normal
    let rows = [
        ("a", "P1", "Anencephaly", [0.7, 0.1, 0.1, 0.05, 0.05]),
        ("b", "P1", "Anencephaly", [0.5, 0.2, 0.1, 0.1, 0.1]),
        ("c", "P2", "Rachischisis", [0.05, 0.1, 0.05, 0.1, 0.7]),
        ("d", "P3", "Normal", [0.05, 0.05, 0.05, 0.05, 0.8]),
    ];
    let lines: Vec<String> = rows
        .iter()
        .map(|(id, p, label, probs)| {
            serde_json::json!({"sample_id": id, "patient_id": p, "fold_id": 0, "true_label": label, "probabilities": probs})
                .to_string()
        })
        .collect();
    let preds = dir.path().join("five.jsonl");
    std::fs::write(&preds, lines.join("\n")).unwrap();
    let report_dir = dir.path().join("binary");
    ok(&[
        "evaluate",
        "--predictions",
        path(&preds),
        "--task",
        "binary",
        "--subgroup-cutoff-days",
        "0",
        "--report",
        path(&report_dir),
    ]);
    let report: EvaluationReport =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.patient_level.confusion.classes, ["Abnormal", "Normal"]);
    assert_eq!(report.patient_level.confusion.counts, vec![vec![1, 1], vec![0, 1]]);
    assert_eq!(report.image_level.confusion.counts, vec![vec![2, 1], vec![0, 1]]);
    assert!(report.subgroup.is_none());
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let out = fetalcns(&["split", "--scheme", "loocv"]);
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = fetalcns(&[
        "evaluate",
        "--predictions",
        path(&missing),
        "--task",
        "4class",
        "--report",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = fetalcns(&["evaluate", "--predictions", "x", "--task", "7class", "--report", "y"]);
    assert!(!out.status.success());
}
