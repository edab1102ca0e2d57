use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    run_with_stdin(args, "")
}

fn run_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_intentsum"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

/// Stdout must be exactly one JSON document followed by a newline.
fn json(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::str::from_utf8(&out.stdout).unwrap();
    assert!(
        text.ends_with('\n') && text.trim_end().lines().count() == 1,
        "stdout: {text:?}"
    );
    serde_json::from_str(text).unwrap()
}

fn synth(dir: &Path) -> Value {
    let d = dir.to_str().unwrap();
    json(&run(&[
        "synth",
        "--data-dir",
        d,
        "--videos",
        "3",
        "--shots",
        "96",
        "--dim",
        "8",
        "--vocab",
        "8",
        "--pairs",
        "3",
    ]))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["eval"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("infer"));
}

#[test]
fn synth_writes_dataset_and_prints_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    assert_eq!(manifest["videos"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["pairs"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("dataset.json").is_file());
    assert!(dir.path().join("videos/video_000").is_dir());
}

#[test]
fn train_then_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path().to_str().unwrap();

    let record = json(&run(&[
        "train",
        "--data-dir",
        d,
        "--checkpoint",
        "toy",
        "--epochs",
        "1",
        "--seed",
        "5",
    ]));
    assert_eq!(record["mode"], "joint");
    assert_eq!(record["epochs"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("checkpoints/toy.ivzr").is_file());

    let text = json(&run(&[
        "infer",
        "--data-dir",
        d,
        "--checkpoint",
        "toy",
        "--video",
        "video_000",
        "--c1",
        "dog",
        "--c2",
        "water",
    ]));
    let probs: Vec<f64> = text["intent_probs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(probs.len(), 20);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    assert_eq!(text["intent_shot_scores"].as_array().unwrap().len(), 20);

    let path = dir.path().join("checkpoints/toy.ivzr");
    let by_path = run(&[
        "infer",
        "--data-dir",
        d,
        "--checkpoint",
        path.to_str().unwrap(),
        "--video",
        "video_000",
        "--c1",
        "dog",
        "--c2",
        "water",
    ]);
    assert_eq!(text, json(&by_path));

    let visual = json(&run(&[
        "infer",
        "--data-dir",
        d,
        "--checkpoint",
        "toy",
        "--video",
        "video_001",
        "--shots",
        "3,10,20",
    ]));
    assert_eq!(visual["intent_probs"].as_array().unwrap().len(), 20);

    let budget = json(&run(&[
        "infer",
        "--data-dir",
        d,
        "--checkpoint",
        "toy",
        "--video",
        "video_000",
        "--c1",
        "dog",
        "--c2",
        "water",
        "--budget",
        "4",
    ]));
    assert_eq!(budget["summary"].as_array().unwrap().len(), 4);
    assert_eq!(budget["scores"].as_array().unwrap().len(), 96);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path().to_str().unwrap();
    let a = run(&[
        "train",
        "--data-dir",
        d,
        "--checkpoint",
        "a",
        "--epochs",
        "1",
        "--seed",
        "9",
    ]);
    let b = run(&[
        "train",
        "--data-dir",
        d,
        "--checkpoint",
        "b",
        "--epochs",
        "1",
        "--seed",
        "9",
    ]);
    assert_eq!(json(&a), json(&b));
    let ckpt = |id: &str| std::fs::read(dir.path().join(format!("checkpoints/{id}.ivzr"))).unwrap();
    assert_eq!(ckpt("a"), ckpt("b"));
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path().to_str().unwrap();
    json(&run(&[
        "train",
        "--data-dir",
        d,
        "--checkpoint",
        "toy",
        "--epochs",
        "1",
    ]));
    let cases: [&[&str]; 4] = [
        &[
            "infer",
            "--data-dir",
            d,
            "--checkpoint",
            "toy",
            "--video",
            "video_000",
            "--c1",
            "nope",
            "--c2",
            "water",
        ],
        &[
            "infer",
            "--data-dir",
            d,
            "--checkpoint",
            "toy",
            "--video",
            "missing",
            "--c1",
            "dog",
            "--c2",
            "water",
        ],
        &[
            "infer",
            "--data-dir",
            d,
            "--checkpoint",
            "absent",
            "--video",
            "video_000",
            "--c1",
            "dog",
            "--c2",
            "water",
        ],
        &["eval", "--data-dir", d, "--video", "video_000", "--summary", "100000"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty());
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn eval_weights_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    std::fs::write(&path, "[[0.6,0.2],[0.3,0.9]]").unwrap();
    let out = json(&run(&["eval", "--weights", path.to_str().unwrap()]));
    for key in ["precision", "recall", "f1"] {
        assert!((out[key].as_f64().unwrap() - 0.75).abs() < 1e-9, "{key}: {out}");
    }
}

#[test]
fn eval_request_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path().to_str().unwrap();
    let flags = run(&[
        "eval",
        "--data-dir",
        d,
        "--video",
        "video_000",
        "--summary",
        "1",
        "2",
        "3",
    ]);
    let stdin = run_with_stdin(
        &["eval", "--data-dir", d, "--request", "-"],
        r#"{"video":"video_000","summary":[1,2,3]}"#,
    );
    assert_eq!(flags.stdout, stdin.stdout);
    let scores = json(&flags);
    for key in ["precision", "recall", "f1"] {
        let v = scores[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn querygen_returns_k_distinct_shots() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = json(&run(&["querygen", "--data-dir", d, "--video", "video_000", "--k", "2"]));
    let shots: Vec<u64> = out["shots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(shots.len(), 2);
    assert_ne!(shots[0], shots[1]);
    assert_eq!(out["video"], "video_000");
}

#[test]
fn gradcheck_passes() {
    let out = json(&run(&["gradcheck"]));
    assert_eq!(out["passed"], true);
    assert!(out["worst"].as_f64().unwrap() < out["tolerance"].as_f64().unwrap());
}
