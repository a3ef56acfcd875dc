use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fan_core::checkpoint::read_checkpoint;
use fan_core::datastore::load_feature_file;
use fan_core::{Dataset64, FanParams64, Mode};
use serde_json::Value;
use tempfile::TempDir;

fn fan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = fan(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    let mut args = vec![
        "synth",
        "--out",
        p(&path),
        "--videos-per-class",
        "6",
        "--subjects",
        "10",
    ];
    args.extend_from_slice(extra);
    ok_json(&args);
    path
}

#[test]
fn synth_output_loads_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.fanf", &["--seed", "3"]);
    let b = synth(&dir, "b.fanf", &["--seed", "3"]);
    let c = synth(&dir, "c.fanf", &["--seed", "4"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let ds: Dataset64 = load_feature_file(&a).unwrap();
    assert_eq!((ds.len(), ds.dim, ds.classes()), (24, 16, 4));
    assert_eq!(ds.subjects().len(), 10);

    let default = dir.path().join("default.fanf");
    let summary = ok_json(&["synth", "--out", p(&default)]);
    assert_eq!(summary["videos"], 800);
    assert!(load_feature_file::<f64>(&default).is_ok());
}

#[test]
fn train_presets_set_epoch_counts() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "d.fanf",
        &["--videos-per-class", "2", "--frames-max", "9"],
    );
    for (preset, epochs) in [("ck+", 60), ("afew", 180), ("synth-default", 30)] {
        let out = dir.path().join(format!("{epochs}.fanp"));
        let s = ok_json(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&out),
            "--preset",
            preset,
        ]);
        assert_eq!(s["epochs"], epochs);
        let history: Value = serde_json::from_str(
            &std::fs::read_to_string(format!("{}.history.json", p(&out))).unwrap(),
        )
        .unwrap();
        assert_eq!(history["epochs"].as_array().unwrap().len(), epochs);
        let log = std::fs::read_to_string(format!("{}.log", p(&out))).unwrap();
        assert_eq!(log.lines().count(), epochs);
    }
}

#[test]
fn train_with_missing_data_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.fanp");
    let r = fan(&[
        "train",
        "--data",
        p(&dir.path().join("missing.fanf")),
        "--out",
        p(&out),
    ]);
    assert!(!r.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fan(&["train"]).status.code(), Some(1));
    assert_eq!(fan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fan(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.fanf", &[]);
    let r = fan(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("x")),
        "--batch-size",
        "0",
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn eval_round_trip_and_dimension_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.fanf", &[]);
    let ckpt = dir.path().join("m.fanp");
    ok_json(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--epochs",
        "5",
    ]);
    let params: FanParams64 = read_checkpoint(&ckpt).unwrap();
    assert_eq!(params.mode, Mode::Full);

    let dump = dir.path().join("preds.json");
    let report = ok_json(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--dump",
        p(&dump),
    ]);
    assert_eq!(report["count"], 24);
    let preds: Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    let hits = preds
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v["label"] == v["prediction"])
        .count();
    assert!((report["accuracy"].as_f64().unwrap() - hits as f64 / 24.0).abs() < 1e-12);

    let sampled = ok_json(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--frames",
        "sampled",
        "--seed",
        "2",
    ]);
    assert_eq!(
        sampled,
        ok_json(&[
            "eval",
            "--data",
            p(&data),
            "--checkpoint",
            p(&ckpt),
            "--frames",
            "sampled",
            "--seed",
            "2"
        ])
    );

    let other = synth(&dir, "d8.fanf", &["--dim", "8"]);
    let r = fan(&["eval", "--data", p(&other), "--checkpoint", p(&ckpt)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("schema"));
}

#[test]
fn self_only_validation_accuracy_matches_eval() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "train.fanf", &["--seed", "1"]);
    let val = synth(&dir, "val.fanf", &["--seed", "2"]);
    let ckpt = dir.path().join("s.fanp");
    let s = ok_json(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--mode",
        "self-only",
        "--epochs",
        "6",
        "--validation-data",
        p(&val),
    ]);
    let val_acc = s["last"]["val_accuracy"].as_f64().unwrap();
    let report = ok_json(&["eval", "--data", p(&val), "--checkpoint", p(&ckpt)]);
    assert!((report["accuracy"].as_f64().unwrap() - val_acc).abs() < 1e-12);
    assert_eq!(read_checkpoint::<f64>(&ckpt).unwrap().mode, Mode::SelfOnly);
}

#[test]
fn cross_validation_is_person_disjoint_and_pools_confusions() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.fanf", &["--subjects", "12"]);
    let cv = ok_json(&["cv", "--data", p(&data), "--epochs", "2"]);
    let folds = cv["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 10);
    let mut pooled = vec![vec![0u64; 4]; 4];
    let mut tested = 0;
    for f in folds {
        assert_eq!(f["disjoint"], true);
        let train: Vec<&str> = f["train_subjects"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        assert!(f["test_subjects"]
            .as_array()
            .unwrap()
            .iter()
            .all(|s| !train.contains(&s.as_str().unwrap())));
        tested += f["test_count"].as_u64().unwrap();
        for (r, row) in f["report"]["confusion"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
        {
            for (c, x) in row.as_array().unwrap().iter().enumerate() {
                pooled[r][c] += x.as_u64().unwrap();
            }
        }
    }
    assert_eq!(tested, 24);
    let correct: u64 = (0..4).map(|c| pooled[c][c]).sum();
    assert!((cv["pooled"]["accuracy"].as_f64().unwrap() - correct as f64 / 24.0).abs() < 1e-12);
}

#[test]
fn gradcheck_default_passes_and_corruption_fails() {
    let a = fan(&["gradcheck"]);
    assert!(a.status.success());
    let cases: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(cases.as_array().unwrap().len(), 24);
    assert_eq!(a.stdout, fan(&["gradcheck"]).stdout);
    assert_eq!(
        fan(&["gradcheck", "--configs", "3", "--corrupt-gradient"])
            .status
            .code(),
        Some(3)
    );
    assert!(fan(&[
        "gradcheck",
        "--d",
        "5",
        "--n",
        "2",
        "--c",
        "2",
        "--configs",
        "2"
    ])
    .status
    .success());
}

#[test]
fn visualize_writes_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.fanf", &[]);
    let ckpt = dir.path().join("m.fanp");
    ok_json(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--epochs",
        "3",
    ]);
    let (csv, json) = (dir.path().join("att.csv"), dir.path().join("att.json"));
    let r = fan(&[
        "visualize",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--csv",
        p(&csv),
        "--json",
        p(&json),
    ]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("video_id,frame_index,alpha,final_weight,label,prediction")
    );
    let ds: Dataset64 = load_feature_file(&data).unwrap();
    let frames: usize = ds.instances.iter().map(|i| i.frame_count()).sum();
    assert_eq!(lines.count(), frames);
    let export: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    for v in export["videos"].as_array().unwrap() {
        let s: f64 = v["final_weights"]
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w.as_f64().unwrap())
            .sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_and_csv_import() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.fanf", &[]);
    let report = ok_json(&[
        "baseline",
        "--data",
        p(&data),
        "--folds",
        "5",
        "--epochs",
        "2",
    ]);
    assert!(report["count"].as_u64().unwrap() > 0);
    assert_eq!(
        fan(&[
            "baseline",
            "--data",
            p(&data),
            "--folds",
            "5",
            "--test-fold",
            "5"
        ])
        .status
        .code(),
        Some(1)
    );

    let csv = dir.path().join("t.csv");
    std::fs::write(
        &csv,
        "# toy\nv1,S1,0,1,0.5,1\nv1,S1,0,0,1,0\nv2,S2,1,0,0,1\n",
    )
    .unwrap();
    let out = dir.path().join("t.fanf");
    assert!(fan(&[
        "import-csv",
        "--csv",
        p(&csv),
        "--out",
        p(&out),
        "--class-names",
        "a,b"
    ])
    .status
    .success());
    let ds: Dataset64 = load_feature_file(&out).unwrap();
    assert_eq!(ds.class_names, vec!["a", "b"]);
    assert_eq!(ds.instances[0].features.row(0), &[1.0, 0.0]);

    std::fs::write(&csv, "v1,S1,0,0,1,0\nv1,S1,0,1,1\n").unwrap();
    assert_eq!(
        fan(&["import-csv", "--csv", p(&csv), "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
}
