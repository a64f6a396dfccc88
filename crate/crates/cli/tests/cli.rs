use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phonescore::data::{read_frame_matrix, write_frame_matrix};
use phonescore::FrameMatrix;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phonescore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    assert_eq!(text.trim_end().lines().count(), 1, "stderr: {text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a synth spec and generates the corpus; returns the corpus dir.
fn synth(root: &Path, spec: &str) -> PathBuf {
    let cfg = root.join("synth.json");
    fs::write(&cfg, spec).unwrap();
    let out = root.join("corpus");
    let o = run(&["synth", "--config", p(&cfg), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const SMALL: &str = r#"{"n_speakers": 6, "utterances_per_speaker": 4, "segments_per_utterance": 15,
    "n_phones": 4, "dim": 8, "dev_speakers": 3, "kind": "both"}"#;

#[test]
fn separable_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = synth(root, r#"{"separation": 6.0, "dev_speakers": 5, "seed": 3}"#);
    let manifest = corpus.join("manifest.json");
    let o = run(&["train", p(&manifest), "--epochs", "60", "--out-dir", p(&root.join("train"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = root.join("train/head.ckpt");
    for (subset, out) in [("dev", "score_dev"), ("eval", "score_eval")] {
        let o = run(&["score", p(&manifest), "--checkpoint", p(&ckpt), "--subset", subset, "--out-dir", p(&root.join(out))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&[
        "evaluate",
        "--eval",
        p(&root.join("score_eval/scores.csv")),
        "--dev",
        p(&root.join("score_dev/scores.csv")),
        "--out-dir",
        p(&root.join("eval")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(root.join("eval/report.json")).unwrap()).unwrap();
    let min_cost = report["report"]["average"]["min_cost"].as_f64().unwrap();
    assert!(min_cost < 0.05, "AVERAGE MinCost {min_cost}");
    let csv = fs::read_to_string(root.join("eval/report.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("AVERAGE,"));
}

#[test]
fn gop_scores_every_labeled_segment() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), SMALL);
    let out = dir.path().join("gop");
    let o = run(&["gop", p(&corpus.join("posteriors/manifest.json")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(out.join("gop_scores.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 6 * 4 * 15);

    // activations are not posteriors
    let o = run(&["gop", p(&corpus.join("activations/manifest.json")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_refuses_mismatched_phone_sets() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let mut ta = String::from("utt_id,segment_index,phone,score,label\n");
    let mut tb = ta.clone();
    for i in 0..20 {
        ta.push_str(&format!("u{i},0,AA,{},{}\n", i as f64 / 20.0, i % 2));
        tb.push_str(&format!("u{i},0,{},{},{}\n", if i < 10 { "AA" } else { "IY" }, i as f64 / 20.0, i % 2));
    }
    fs::write(&a, ta).unwrap();
    fs::write(&b, tb).unwrap();
    let out = dir.path().join("eval");
    let o = run(&["evaluate", "--eval", p(&a), "--dev", p(&b), "--min-minority", "1", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    let err = stderr_json(&o);
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("IY"));
    assert!(!out.join("report.csv").exists());
    let record: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["status"], "error");

    let o = run(&["evaluate", "--eval", p(&a), "--dev", p(&a), "--min-minority", "1", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validate_reports_broken_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), SMALL);
    let out = dir.path().join("v");
    let post = corpus.join("posteriors");
    let o = run(&["validate", p(&post.join("manifest.json")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0);

    // one posterior row scaled to sum 0.8
    let fmat = post.join("frames/spk001_utt002.fmat");
    let m = read_frame_matrix(&fmat).unwrap();
    let mut values = m.values().to_vec();
    for v in &mut values[3 * m.dim()..4 * m.dim()] {
        *v *= 0.8;
    }
    write_frame_matrix(&fmat, &FrameMatrix::new(m.kind(), m.n_frames(), m.dim(), values).unwrap()).unwrap();
    let o = run(&["validate", p(&post.join("manifest.json")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("spk001_utt002") && stdout.contains("frame 3"), "{stdout}");

    // label pointing at a segment that does not exist
    let act = corpus.join("activations");
    let labels = act.join("labels.txt");
    let mut text = fs::read_to_string(&labels).unwrap();
    let n_lines = text.lines().count();
    text.push_str("spk000_utt000 99 P00 1\n");
    fs::write(&labels, text).unwrap();
    let o = run(&["validate", p(&act.join("manifest.json")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&format!("labels.txt:{}", n_lines + 1)), "{stdout}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), SMALL);
    let manifest = corpus.join("activations/manifest.json");
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"min_minority": 5, "head": {"use_batchnorm": true, "dropout_rate": 0.3},
            "train": {"epochs": 6, "checkpoint_every": 3, "batch_size": 4}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run_dir in ["r1", "r2"] {
        let out = dir.path().join(run_dir);
        let o = run(&["train", p(&manifest), "--config", p(&cfg), "--seed", "5", "--out-dir", p(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let scored = out.join("score");
        let o = run(&["score", p(&manifest), "--checkpoint", p(&out.join("head.ckpt")), "--out-dir", p(&scored)]);
        assert_eq!(code(&o), 0);
        let files: Vec<(&str, Vec<u8>)> = ["head.ckpt", "checkpoints/epoch_0003.ckpt", "train_log.csv", "score/scores.csv", "score/run.json"]
            .iter()
            .map(|f| {
                let bytes = fs::read(out.join(f)).unwrap();
                // run.json records input paths, which name the run directory
                let bytes = String::from_utf8_lossy(&bytes).replace(run_dir, "RUN").into_bytes();
                (*f, bytes)
            })
            .collect();
        outputs.push(files);
    }
    for (a, b) in outputs[0].iter().zip(&outputs[1]) {
        assert!(a.1 == b.1, "{} differs between runs", a.0);
    }
    let record: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r1/run.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], 5);
    assert_eq!(record["config"]["train"]["seed"], 5);
}

#[test]
fn crossval_writes_curve_and_pooled_scores() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), SMALL);
    let manifest = corpus.join("activations/manifest.json");
    let cfg = dir.path().join("cv.json");
    fs::write(&cfg, r#"{"subset": "all", "n_folds": 3, "min_minority": 3, "train": {"epochs": 4, "checkpoint_every": 2}}"#)
        .unwrap();
    let out = dir.path().join("cv");
    let o = run(&["crossval", p(&manifest), "--config", p(&cfg), "--jobs", "2", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(out.join("crossval_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let scores = fs::read_to_string(out.join("crossval_scores.csv")).unwrap();
    assert_eq!(scores.lines().count() - 1, 6 * 4 * 15);
    let folds: Value = serde_json::from_str(&fs::read_to_string(out.join("folds.json")).unwrap()).unwrap();
    assert_eq!(folds["assignments"].as_object().unwrap().len(), 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"manifest": "x.json", "epochz": 3}"#).unwrap();
    let out = dir.path().join("o");
    let o = run(&["train", "--config", p(&bad), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("epochz"));
    assert!(out.join("run.json").exists());

    let o = run(&["validate", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    let o = run(&["train", "x.json", "--jobs", "0", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
    let o = run(&["nonsense"]);
    assert_eq!(code(&o), 1);
    assert_eq!(stderr_json(&o)["error"], "usage");

    // output directory that cannot be created: a runtime failure
    let file = dir.path().join("file");
    fs::write(&file, "x").unwrap();
    let o = run(&["synth", "--out-dir", p(&file.join("sub"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["error"], "runtime");

    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
}
