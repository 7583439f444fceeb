use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fsn_core::normalize::CenteringScope;
use fsn_core::{load_dataset, mean_center, save_checkpoint, Format, LinearClassifier};
use ndarray::Array2;
use tempfile::TempDir;

fn fsn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn fsn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"{
  "pretrain": {
    "learning_rate": 0.1, "momentum": 0.9, "weight_decay": 5e-4, "iterations": 300,
    "batch_size": 60, "lr_milestones": [200], "lr_decay": 0.1
  },
  "synthetic": { "dim": 12, "n_base_classes": 8, "n_novel_classes": 6, "samples_per_class": 40 },
  "data": { "n_novel_classes": 6, "base_test_per_class": 10 }
}"#;

const SMALL_SYNTH: &str = r#"{ "dim": 12, "n_base_classes": 8, "n_novel_classes": 6, "samples_per_class": 40 }"#;

#[test]
fn help_lists_subcommands_and_flags() {
    let dir = TempDir::new().unwrap();
    let out = fsn(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "pretrain", "run", "analyze"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = fsn(&["run", "--help"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--episodes", "--shots", "--ways", "--seed", "--ablation", "--workers", "--mode", "--checkpoint"] {
        assert!(text.contains(flag), "{flag} missing from run help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&fsn(&["run", "--nope"], dir.path())), 1);
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("s.json"), SMALL_SYNTH).unwrap();
    for name in ["d.bin", "d.csv"] {
        let out = fsn(&["synth", "--config", "s.json", "--out", name, "--seed", "3"], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bin = load_dataset(dir.path().join("d.bin"), Format::Binary).unwrap();
    let text = load_dataset(dir.path().join("d.csv"), Format::Text).unwrap();
    assert_eq!(bin.dim(), 12);
    assert_eq!(bin.class_count(), 14);
    assert_eq!(bin.len(), 14 * 40);
    assert_eq!(bin.samples(), text.samples());
}

#[test]
fn malformed_or_invalid_config_exits_with_one() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("broken.json"), "{ \"episode\": ").unwrap();
    assert_eq!(code(&fsn(&["run", "--config", "broken.json", "--out", "o"], dir.path())), 1);
    fs::write(dir.path().join("zero.json"), r#"{ "episode": { "n_way": 0 } }"#).unwrap();
    assert_eq!(code(&fsn(&["run", "--config", "zero.json", "--out", "o"], dir.path())), 1);
    fs::write(dir.path().join("typo.json"), r#"{ "episode": { "n_wya": 5 } }"#).unwrap();
    assert_eq!(code(&fsn(&["run", "--config", "typo.json", "--out", "o"], dir.path())), 1);
    assert_eq!(code(&fsn(&["run", "--out", "o", "--ablation", "bogus"], dir.path())), 1);
}

#[test]
fn pretrain_is_deterministic_and_checks_dimensionality() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("s.json"), SMALL_SYNTH).unwrap();
    fs::write(p.join("c.json"), SMALL).unwrap();
    assert_eq!(code(&fsn(&["synth", "--config", "s.json", "--out", "d.bin"], p)), 0);
    for name in ["a.fsc", "b.fsc"] {
        let out = fsn(&["pretrain", "--data", "d.bin", "--config", "c.json", "--out", name], p);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(summary["train_accuracy"].as_f64().unwrap() > 50.0);
    }
    assert_eq!(fs::read(p.join("a.fsc")).unwrap(), fs::read(p.join("b.fsc")).unwrap());

    fs::write(p.join("dim.json"), r#"{ "data": { "n_novel_classes": 6, "dim": 64 } }"#).unwrap();
    let out = fsn(&["pretrain", "--data", "d.bin", "--config", "dim.json", "--out", "c.fsc"], p);
    assert_eq!(code(&out), 2);
    assert!(!p.join("c.fsc").exists());
}

#[test]
fn run_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("c.json"), SMALL).unwrap();
    let args = |out: &'static str, workers: &'static str| {
        [
            "run", "--config", "c.json", "--out", out, "--episodes", "6", "--shots", "1,5", "--ablation",
            "none,mc+vb+lo", "--workers", workers,
        ]
    };
    assert_eq!(code(&fsn(&args("r1", "1"), p)), 0);
    assert_eq!(code(&fsn(&args("r2", "3"), p)), 0);
    let files = ["aggregate.csv", "aggregate.json", "episodes_none_1shot.json", "confusion_mc+vb+lo_5shot.csv"];
    for f in files {
        let a = fs::read(p.join("r1").join(f)).unwrap();
        let b = fs::read(p.join("r2").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
    let csv = fs::read_to_string(p.join("r1/aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn run_accepts_a_pretrained_checkpoint() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("s.json"), SMALL_SYNTH).unwrap();
    fs::write(p.join("c.json"), SMALL).unwrap();
    assert_eq!(code(&fsn(&["synth", "--config", "s.json", "--out", "d.bin"], p)), 0);
    assert_eq!(code(&fsn(&["pretrain", "--data", "d.bin", "--config", "c.json", "--out", "k.fsc"], p)), 0);
    let with_ck = ["run", "--data", "d.bin", "--config", "c.json", "--checkpoint", "k.fsc", "--out", "a", "--episodes", "3"];
    let out = fsn(&with_ck, p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fresh = ["run", "--data", "d.bin", "--config", "c.json", "--out", "b", "--episodes", "3"];
    assert_eq!(code(&fsn(&fresh, p)), 0);
    assert_eq!(
        fs::read(p.join("a/aggregate.csv")).unwrap(),
        fs::read(p.join("b/aggregate.csv")).unwrap()
    );
}

#[test]
fn analyze_rejects_a_bad_magic() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("x.fsc"), b"NOPE\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    let out = fsn(&["analyze", "--checkpoint", "x.fsc", "--out", "a"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn analyze_reports_non_finite_weights_as_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let clf = LinearClassifier::from_weights(Array2::from_elem((4, 3), 0.5), vec![0, 1, 2]).unwrap();
    let path = dir.path().join("nan.fsc");
    save_checkpoint(&clf, None, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    // header is magic + three u32 sizes
    bytes[16 + 8 * 5..16 + 8 * 6].copy_from_slice(&f64::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let out = fsn(&["analyze", "--checkpoint", "nan.fsc", "--out", "a"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn analyze_summarizes_a_centered_checkpoint() {
    let dir = TempDir::new().unwrap();
    let w = Array2::from_shape_fn((6, 5), |(i, j)| 0.1 * (i as f64 + 1.0) * (j as f64 + 1.0));
    let mut clf = LinearClassifier::with_partition(w, 3, vec![10, 11, 12, 20, 21]).unwrap();
    mean_center(&mut clf, CenteringScope::NovelOnly);
    save_checkpoint(&clf, None, dir.path().join("c.fsc")).unwrap();
    let out = fsn(&["analyze", "--checkpoint", "c.fsc", "--out", "a"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["novel_classes"], 2);
    assert!(summary["mu_bar_novel"].as_f64().unwrap().abs() < 1e-12);
    assert!(summary["mu_bar_base"].as_f64().unwrap() > 0.0);
    let stats = fs::read_to_string(dir.path().join("a/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 6);
    assert!(stats.lines().last().unwrap().contains(",novel,"));
}
