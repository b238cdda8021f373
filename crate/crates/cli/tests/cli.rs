use std::path::Path;
use std::process::{Command, Output};

fn mtsn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtsn"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MTSN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_tiny(dir: &Path, out: &str) {
    let cfg = dir.join("tiny.json");
    std::fs::write(
        &cfg,
        r#"{"classes": 4, "train_utterances": 8, "test_utterances": 4, "speakers": 2,
            "acoustic_dim": 6, "teacher_dim": 5, "min_frames": 2, "max_frames": 4}"#,
    )
    .unwrap();
    let o = mtsn(&["gen", "--config", "tiny.json", "--seed", "3", "--out", out], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_writes_manifests_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path(), "a");
    gen_tiny(dir.path(), "b");
    for name in ["train.manifest.json", "train.jsonl", "test.manifest.json", "test.jsonl", "effective_config.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["num_records"], 2 * 8 * 2);
}

#[test]
fn invalid_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mtsn(&["gen", "--train-fraction", "1.5", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fraction 1.5"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn unknown_framework_and_missing_file_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path(), "data");
    let o = mtsn(&["train", "--train", "data/train.manifest.json", "--model", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
    let o = mtsn(&["eval", "--checkpoint", "missing.bin", "--test", "data/test.manifest.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).matches("No such file").count(), 1, "{}", stderr(&o));
}

#[test]
fn train_eval_analyze_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_tiny(d, "data");
    let o = mtsn(
        &["train", "--train", "data/train.manifest.json", "--epochs", "3", "--hidden", "4", "--out", "run"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.bin", "checkpoint_initial.bin", "loss_history.csv", "effective_config.json"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(d.join("run/loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);

    let o = mtsn(
        &["eval", "--checkpoint", "run/checkpoint.bin", "--test", "data/test.manifest.json", "--out", "ev"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy "));
    let csv = std::fs::read_to_string(d.join("ev/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let o = mtsn(
        &[
            "analyze",
            "--checkpoint",
            "run/checkpoint.bin",
            "--initial",
            "run/checkpoint_initial.bin",
            "--test",
            "data/test.manifest.json",
            "--out",
            "an",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cos: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("an/cosine.json")).unwrap()).unwrap();
    assert!(cos["initial"]["combined"].is_number() && cos["final"]["combined"].is_number());
    assert!(d.join("an/projection.csv").exists());

    // Resuming to a later epoch continues the same run.
    let o = mtsn(
        &[
            "train",
            "--train",
            "data/train.manifest.json",
            "--epochs",
            "5",
            "--hidden",
            "4",
            "--resume",
            "run/checkpoint.bin",
            "--out",
            "run2",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("to epoch 5"));
}

#[test]
fn grid_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_tiny(d, "data");
    let o = mtsn(
        &[
            "grid",
            "--train",
            "data/train.manifest.json",
            "--test",
            "data/test.manifest.json",
            "--fractions",
            "0.5",
            "--epochs",
            "1",
            "--hidden",
            "3",
            "--out",
            "g",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for t in ["table3_cosine", "table4_accuracy", "table5_fractions", "table6_combined"] {
        assert!(d.join("g").join(format!("{t}.csv")).exists());
        assert!(d.join("g").join(format!("{t}.txt")).exists());
    }
    let cells = std::fs::read_to_string(d.join("g/cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2 * 3 * 2);
}

#[test]
fn out_dir_defaults_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mtsn"))
        .args(["gen", "--preset", "table1-mini"])
        .current_dir(dir.path())
        .env("MTSN_OUT_DIR", dir.path().join("envout"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("envout/gen/train.manifest.json").exists());

    let o = mtsn(&["gen", "--preset", "table1-mini"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("mtsn-out/gen/test.manifest.json").exists());
}

#[test]
fn gradcheck_reports_and_fails_on_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = mtsn(&["gradcheck"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let n: usize = out.split_whitespace().next().unwrap().parse().unwrap();
    assert!(n >= 20);
    assert!(out.trim_end().ends_with("ops checked, 0 failures"));

    let o = mtsn(&["gradcheck", "--points", "2", "--inject-fault", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL injected_fault"));
    assert!(stdout(&o).contains("1 failures"));

    // A 3e-4 fault slips under a looser tolerance.
    let o = mtsn(&["gradcheck", "--points", "2", "--inject-fault", "3e-4", "--tol", "1e-3"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
}
