//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use geognn_core::tu::{read_tu_dataset, CorpusLocation};

fn geognn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geognn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn strip_volatile(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn generate_writes_a_readable_corpus_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let status = geognn(&[
        "generate",
        "--task",
        "twothree",
        "--size",
        "6",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{status:?}");
    for suffix in ["A", "graph_indicator", "graph_labels"] {
        assert!(out.join(format!("twothree_{suffix}.txt")).is_file());
    }
    assert!(out.join("config.txt").is_file());
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("task = twothree"));
    assert!(config.contains("seed = 5"));
    let ds = read_tu_dataset(&CorpusLocation::new(&out, "twothree")).unwrap();
    assert_eq!(ds.len(), 6);
}

#[test]
fn unknown_flags_and_values_exit_2_with_usage() {
    let out = geognn(&["train", "--task", "nosuch", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nosuch"));

    let out = geognn(&["train", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");

    let out = geognn(&["train", "--task", "hlld", "--lambda", "1.5", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_corpus_exits_1_with_diagnostic() {
    let out = geognn(&[
        "train",
        "--dataset-dir",
        "/nonexistent/corpus",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");

    let out = geognn(&["inspect", "--dataset-dir", "/nonexistent/corpus"]);
    assert_eq!(out.status.code(), Some(1));
}

fn train_into(dir: &Path, seed: &str) -> Output {
    geognn(&[
        "train",
        "--task",
        "twothree",
        "--size",
        "8",
        "--folds",
        "2",
        "--epochs",
        "2",
        "--model",
        "gnn",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn train_reports_are_reproducible_and_fully_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_into(&a, "9").status.success());
    assert!(train_into(&b, "9").status.success());

    for run in [&a, &b] {
        assert!(run.join("report.txt").is_file());
        assert!(run.join("report.csv").is_file());
        assert!(run.join("config.txt").is_file());
    }
    let ra = std::fs::read_to_string(a.join("report.txt")).unwrap();
    let rb = std::fs::read_to_string(b.join("report.txt")).unwrap();
    assert_eq!(strip_volatile(&ra), strip_volatile(&rb));
    assert!(ra.lines().any(|l| l.starts_with("# generated_at")));

    let config = std::fs::read_to_string(a.join("config.txt")).unwrap();
    for key in ["epochs = 2", "folds = 2", "seed = 9", "model = gnn"] {
        assert!(config.contains(key), "missing {key} in {config}");
    }

    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let rc = train_into(&dir.path().join("c"), "10");
    assert!(rc.status.success());
    let rc = std::fs::read_to_string(dir.path().join("c").join("report.txt")).unwrap();
    assert_ne!(strip_volatile(&ra), strip_volatile(&rc));
}

#[test]
fn embed_then_inspect_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(geognn(&[
        "generate",
        "--task",
        "twothree",
        "--size",
        "4",
        "--seed",
        "2",
        "--out",
        data.to_str().unwrap(),
    ])
    .status
    .success());

    let emb = dir.path().join("emb");
    let out = geognn(&[
        "embed",
        "--dataset-dir",
        data.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        emb.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let caches: Vec<_> = std::fs::read_dir(&emb)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "emb"))
        .collect();
    assert_eq!(caches.len(), 4);
    assert!(emb.join("config.txt").is_file());

    let out = geognn(&["inspect", "--dataset-dir", data.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("graphs = 4"));
    assert!(stdout.contains("classes = 2"));
    assert!(stdout.contains("node_labels = none"));
}

#[test]
fn train_requires_exactly_one_source() {
    let out = geognn(&["train", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let both = geognn(&[
        "train",
        "--task",
        "hlld",
        "--dataset-dir",
        "/tmp/y",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(both.status.code(), Some(2), "{both:?}");
}
