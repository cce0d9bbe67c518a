use std::path::Path;
use std::process::{Command, Output};

use sarcasm_tts::data::{CorpusManifest, Split};
use sarcasm_tts::eval::{EvalReport, InputType, SubjectiveSummary, REPORT_FILE};

fn sarc(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarc-tts"))
        .args(args)
        .arg("-q")
        .env("SARC_TTS_WORKSPACE", ws)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(ws: &Path, args: &[&str]) {
    let out = sarc(ws, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn entries(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().count()
}

#[test]
fn split_marks_exactly_the_requested_test_records() {
    let ws = tempfile::tempdir().unwrap();
    ok(ws.path(), &["toy-corpus", "--n", "120", "--stage", "pretrain", "--seed", "1"]);
    ok(ws.path(), &["split", "--manifest", "toy/manifest.jsonl", "--test-n", "100", "--seed", "7"]);
    let m = CorpusManifest::load(&ws.path().join("split.jsonl")).unwrap();
    assert_eq!(m.split(Split::Test).count(), 100);
    assert_eq!(m.split(Split::Val).count(), 2);

    ok(ws.path(), &["split", "--manifest", "toy/manifest.jsonl", "--test-n", "100", "--seed", "7", "--out", "again.jsonl"]);
    let again = CorpusManifest::load(&ws.path().join("again.jsonl")).unwrap();
    assert_eq!(m, again);
}

#[test]
fn config_file_then_flags_then_set() {
    let ws = tempfile::tempdir().unwrap();
    ok(ws.path(), &["toy-corpus", "--n", "20", "--stage", "pretrain"]);
    std::fs::write(ws.path().join("split.toml"), "manifest = \"toy/manifest.jsonl\"\ntest_n = 5\nval_fraction = 0.0\n").unwrap();
    let count = |name: &str| CorpusManifest::load(&ws.path().join(name)).unwrap().split(Split::Test).count();
    ok(ws.path(), &["split", "--config", "split.toml", "--out", "a.jsonl"]);
    assert_eq!(count("a.jsonl"), 5);
    ok(ws.path(), &["split", "--config", "split.toml", "--test-n", "6", "--out", "b.jsonl"]);
    assert_eq!(count("b.jsonl"), 6);
    ok(ws.path(), &["split", "--config", "split.toml", "--test-n", "6", "--set", "test_n=7", "--out", "c.jsonl"]);
    assert_eq!(count("c.jsonl"), 7);
}

#[test]
fn usage_errors_exit_2_without_side_effects() {
    let ws = tempfile::tempdir().unwrap();
    for args in [
        vec!["split", "--no-such-flag"],
        vec!["no-such-command"],
        vec!["split", "--set", "no_such_key=1"],
        vec!["split", "--set", "test_n=\"many\""],
        vec!["split", "--out", "../outside.jsonl"],
        vec!["synthesize", "--text", "hi", "--label", "sarcastic", "--ref", "a.wav"],
        vec!["split", "--config", "missing.toml"],
    ] {
        let out = sarc(ws.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(entries(ws.path()), 0, "{args:?} touched the workspace");
    }
    assert!(!ws.path().parent().unwrap().join("outside.jsonl").exists());
    // a domain error (missing input) is exit 1
    assert_eq!(sarc(ws.path(), &["split"]).status.code(), Some(1));
}

#[test]
fn dry_run_prints_plan_and_touches_nothing() {
    let ws = tempfile::tempdir().unwrap();
    for args in [
        vec!["toy-corpus", "--dry-run"],
        vec!["split", "--dry-run"],
        vec!["train-tts", "--preset", "desk", "--stage", "pretrain", "--pretrain-manifest", "m.jsonl", "--dry-run"],
        vec!["eval-objective", "--model", "a=ckpt", "--dry-run"],
        vec!["serve-ratings", "--dry-run"],
    ] {
        let out = sarc(ws.path(), &args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(stdout.contains("# plan"), "{args:?}: {stdout}");
        assert_eq!(entries(ws.path()), 0, "{args:?} touched the workspace");
    }
}

#[test]
fn desk_eval_objective_writes_four_row_report() {
    let ws = tempfile::tempdir().unwrap();
    let w = ws.path();
    ok(w, &["toy-corpus", "--n", "16", "--stage", "pretrain", "--seed", "2", "--set", "labeled=true"]);
    ok(w, &["split", "--manifest", "toy/manifest.jsonl", "--test-n", "4", "--val-fraction", "0.25", "--seed", "1"]);
    ok(w, &["train-detector", "--manifest", "split.jsonl", "--epochs", "1", "--set", "training.batch_size=8", "--set", "training.micro_batch=8"]);
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "train-tts", "--preset", "desk", "--stage", "pretrain", "--pretrain-manifest", "split.jsonl",
            "--conditioning-detector", "detector", "--iterations", "4", "--out", out,
        ];
        args.extend_from_slice(extra);
        ok(w, &args);
    };
    train("runs/cond", &[]);
    train("runs/plain", &["--set", "pretrain.model.sarcasm_conditioning=false"]);
    assert!(w.join("runs/cond/pretrain/final/label_bank.json").exists());
    assert!(!w.join("runs/plain/pretrain/final/label_bank.json").exists());

    ok(w, &[
        "eval-objective", "--manifest", "split.jsonl", "--detector", "detector",
        "--model", "proposed=runs/cond/pretrain/final", "--model", "baseline=runs/plain/pretrain/final",
    ]);
    let report = EvalReport::load(&w.join("eval").join(REPORT_FILE)).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.rows[0].method, "proposed");
    assert_eq!(report.rows[3].input_type, InputType::SpeechText);
    assert!(report.rows.iter().all(|r| r.n_evaluated + r.n_excluded == 4));

    ok(w, &["synthesize", "--text", "oh great another meeting", "--label", "sarcastic", "--ckpt", "runs/cond/pretrain/final", "--out", "syn.wav"]);
    let wave = sarcasm_tts::audio::Waveform::read_wav(w.join("syn.wav")).unwrap();
    assert_eq!(wave.sample_rate, 22_050);

    ok(w, &[
        "export-listening", "--manifest", "split.jsonl", "--n-items", "1",
        "--model", "proposed=runs/cond/pretrain/final", "--model", "baseline=runs/plain/pretrain/final",
    ]);
    std::fs::write(w.join("ratings.jsonl"), "").unwrap();
    ok(w, &["aggregate"]);
    let summary: SubjectiveSummary = serde_json::from_slice(&std::fs::read(w.join("subjective_summary.json")).unwrap()).unwrap();
    assert_eq!((summary.accepted, summary.rejected), (0, 0));
    assert!(summary.mos.contains_key("proposed"));
}
