//! The `tall` binary: exit codes, outputs and reproducibility on a tiny world.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn tall(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tall"))
        .arg("--config")
        .arg(config)
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn tall")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn pretrain(dir: &Path, config: &Path) {
    for c in ["translator-lr2hr", "llm", "translator-hr2lr"] {
        ok(&tall(dir, config, &["pretrain", c]));
    }
}

/// Pretrain, TALL, the three trained baselines, then a full evaluation.
fn full_flow(dir: &Path, config: &Path) -> String {
    pretrain(dir, config);
    ok(&tall(dir, config, &["train-tall"]));
    for b in ["soft-prompt", "finetune", "scratch"] {
        ok(&tall(dir, config, &["train-baseline", b]));
    }
    ok(&tall(dir, config, &["eval", "--all"]))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn param_report_checks_pass_quickly() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["bloomz", "qwen"] {
        let start = Instant::now();
        let out = tall(dir.path(), &fixture(), &["param-report", "--preset", preset, "--check"]);
        let text = ok(&out);
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert!(text.contains("Autoencoder 1") && text.contains("LM Head"), "{text}");
        assert!(stderr(&out).contains("check passed"));
    }
    let json = ok(&tall(dir.path(), &fixture(), &["param-report", "--preset", "toy", "--json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["preset"], "toy");

    let out = tall(dir.path(), &fixture(), &["param-report", "--preset", "llama"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train.tall]\nlearnin_rate = 1e-3\n").unwrap();
    let out = tall(dir.path(), &bad, &["train-tall", "--dry-run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learnin_rate"), "{}", stderr(&out));

    std::fs::write(&bad, "[models.tall]\nadapter1_hidden = 0\n").unwrap();
    assert_eq!(code(&tall(dir.path(), &bad, &["train-tall", "--dry-run"])), 2);

    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&tall(dir.path(), &missing, &["train-tall"])), 2);
    assert_eq!(code(&tall(dir.path(), &fixture(), &["eval"])), 2);
}

#[test]
fn checkpoint_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = tall(dir.path(), &fixture(), &["train-tall"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("stage 1"), "{}", stderr(&out));

    pretrain(dir.path(), &fixture());
    // a translator checkpoint where the LLM is expected
    let lr2hr = dir.path().join("translator-lr2hr.tlcp");
    let out = tall(dir.path(), &fixture(), &["train-tall", "--llm", lr2hr.to_str().unwrap()]);
    assert_eq!(code(&out), 3);

    let junk = dir.path().join("junk.tlcp");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let out = tall(dir.path(), &fixture(), &["train-tall", "--hr2lr", junk.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));

    // evaluating TALL before training it
    assert_eq!(code(&tall(dir.path(), &fixture(), &["eval", "--approach", "tall"])), 3);
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("nan.toml");
    let text = std::fs::read_to_string(fixture())
        .unwrap()
        .replace("[train.translator]\n", "[train.translator]\nlearning_rate = 1e200\n");
    std::fs::write(&cfg, text).unwrap();
    let out = tall(dir.path(), &cfg, &["pretrain", "translator-lr2hr"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
}

#[test]
fn dry_run_prints_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &fixture());
    let text = ok(&tall(dir.path(), &fixture(), &["train-tall", "--dry-run"]));
    for s in 1..=7 {
        assert!(text.contains(&format!("stage {s}: ")), "{text}");
    }
    assert!(!dir.path().join("tall.tlcp").exists());
}

#[test]
fn full_flow_is_reproducible_and_reports_all_approaches() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = full_flow(a.path(), &fixture());
    full_flow(b.path(), &fixture());
    assert_eq!(files(a.path()), files(b.path()));

    let json = std::fs::read_to_string(a.path().join("results-seed1.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let rows = v["rows"].as_array().unwrap();
    for d in ["heldout", "shifted"] {
        assert_eq!(rows.iter().filter(|r| r["dataset"] == d).count(), 6, "{d}");
    }
    for name in ["direct", "naive", "soft_prompt", "finetuned", "from_scratch", "tall"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }

    // a different sampler seed writes a separate table
    ok(&tall(a.path(), &fixture(), &["eval", "--all", "--seed", "9", "--dataset", "shifted"]));
    assert!(a.path().join("results-seed9.json").exists());
}

#[test]
fn stop_and_resume_matches_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &fixture());
    let whole = dir.path().join("whole.tlcp");
    ok(&tall(dir.path(), &fixture(), &["train-tall", "--out", whole.to_str().unwrap()]));

    let split = dir.path().join("split.tlcp");
    let split_s = split.to_str().unwrap();
    ok(&tall(dir.path(), &fixture(), &["train-tall", "--stop-at", "7", "--out", split_s]));
    let resumed = tall(dir.path(), &fixture(), &["train-tall", "--resume", "--out", split_s]);
    ok(&resumed);
    assert!(stderr(&resumed).contains("resumed at step 7"));
    assert_eq!(std::fs::read(&whole).unwrap(), std::fs::read(&split).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("whole.metrics.jsonl")).unwrap(),
        std::fs::read(dir.path().join("split.metrics.jsonl")).unwrap()
    );
}
