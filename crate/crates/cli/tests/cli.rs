//! End-to-end smoke tests driving the compiled binary: each one runs real
//! subcommands against a small deterministic corpus in a temporary
//! directory and checks the printed contract and the on-disk artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FRUIT: [&str; 8] = [
    "apple", "banana", "cherry", "grape", "mango", "melon", "peach", "plum",
];
const TOOLS: [&str; 8] = [
    "hammer", "wrench", "pliers", "drill", "saw", "chisel", "clamp", "file",
];

/// 24 two-class documents with disjoint vocabularies; the last six are
/// pinned to the test split. Deterministic by construction.
fn write_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    let mut lines = Vec::new();
    for i in 0..24 {
        let (label, pool) = if i % 2 == 0 {
            ("fruit", FRUIT)
        } else {
            ("tools", TOOLS)
        };
        let tokens: Vec<&str> = (0..5 + i % 4).map(|j| pool[(i * 3 + j * 5) % 8]).collect();
        let split = if i >= 18 { ",\"split\":\"test\"" } else { "" };
        lines.push(format!(
            "{{\"id\":\"d{i}\",\"text\":\"{}\",\"label\":\"{label}\"{split}}}",
            tokens.join(" ")
        ));
    }
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn textgcn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textgcn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).unwrap()
}

const TRAIN_ARGS: [&str; 13] = [
    "--corpus",
    "corpus.jsonl",
    "--preset",
    "fewshot",
    "--fraction",
    "0.25",
    "--epochs",
    "60",
    "--hidden",
    "8",
    "--min-frequency",
    "1",
    "--trace",
];

#[test]
fn train_records_the_run_on_disk() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["--seed", "3", "--out-dir", "results", "train"];
    args.extend_from_slice(&TRAIN_ARGS);
    let output = textgcn(&args, dir.path());
    let stdout = stdout_of(&output);
    assert!(stdout.contains("test accuracy:"), "stdout: {stdout}");

    let hash_dirs: Vec<PathBuf> = std::fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(hash_dirs.len(), 1);
    let run_dir = &hash_dirs[0];
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], 3);
    assert_eq!(record["trace"].as_array().unwrap().len(), 60);
    assert!(record["test_accuracy"].is_number());
    assert!(run_dir.join("trace.csv").is_file());
    assert!(run_dir.join("checkpoint.bin").is_file());

    // A rerun with the same config serves the cached record.
    let rerun = stdout_of(&textgcn(&args, dir.path()));
    assert!(rerun.contains("(cached)"), "stdout: {rerun}");
}

#[test]
fn invalid_fraction_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let output = textgcn(
        &["train", "--corpus", "corpus.jsonl", "--fraction", "1.5"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("usage"), "stderr: {stderr}");
    assert!(stderr.contains("train_fraction"), "stderr: {stderr}");
}

#[test]
fn sweep_aggregates_and_caches_cells() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let args = [
        "--out-dir",
        "results",
        "--jobs",
        "2",
        "sweep",
        "--corpus",
        "corpus.jsonl",
        "--fractions",
        "0.25,0.5",
        "--seeds",
        "1,2",
        "--presets",
        "textgcn,fewshot",
        "--epochs",
        "25",
        "--hidden",
        "8",
        "--min-frequency",
        "1",
    ];
    let stdout = stdout_of(&textgcn(&args, dir.path()));
    assert!(stdout.contains("8 cells: 8 ran, 0 cached, 0 failed"), "{stdout}");
    assert!(stdout.contains("+-"), "{stdout}");
    assert!(stdout.contains("edge-count ratio"), "{stdout}");

    let csv = std::fs::read_to_string(dir.path().join("results/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 9, "header plus eight runs: {csv}");
    assert!(rows[0].starts_with("cell,preset,train_fraction"));

    let rerun = stdout_of(&textgcn(&args, dir.path()));
    assert!(rerun.contains("8 cells: 0 ran, 8 cached, 0 failed"), "{rerun}");

    let mut forced: Vec<&str> = vec!["--out-dir", "results", "sweep", "--force"];
    forced.extend_from_slice(&args[5..]);
    let reforced = stdout_of(&textgcn(&forced, dir.path()));
    assert!(reforced.contains("8 cells: 8 ran, 0 cached, 0 failed"), "{reforced}");
}

#[test]
fn evaluate_reports_the_recorded_test_accuracy() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["--seed", "3", "--out-dir", "results", "train"];
    args.extend_from_slice(&TRAIN_ARGS);
    stdout_of(&textgcn(&args, dir.path()));

    let run_dir = std::fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .next()
        .unwrap();
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    let expected = format!(
        "Test accuracy: {:.1}%",
        record["test_accuracy"].as_f64().unwrap() * 100.0
    );

    let checkpoint = run_dir.join("checkpoint.bin");
    let mut eval_args = vec!["--seed", "3", "evaluate"];
    eval_args.extend_from_slice(&TRAIN_ARGS[..12]);
    eval_args.extend_from_slice(&["--checkpoint", checkpoint.to_str().unwrap()]);
    let stdout = stdout_of(&textgcn(&eval_args, dir.path()));
    assert!(stdout.contains(&expected), "stdout: {stdout}, want {expected}");
}

#[test]
fn export_embeddings_writes_one_row_per_node() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["--seed", "3", "--out-dir", "results", "train"];
    args.extend_from_slice(&TRAIN_ARGS);
    stdout_of(&textgcn(&args, dir.path()));
    let run_dir = std::fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .next()
        .unwrap();
    let checkpoint = run_dir.join("checkpoint.bin");

    let mut export_args = vec!["--seed", "3", "export-embeddings"];
    export_args.extend_from_slice(&TRAIN_ARGS[..12]);
    export_args.extend_from_slice(&[
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--output",
        "emb.csv",
    ]);
    let stdout = stdout_of(&textgcn(&export_args, dir.path()));
    assert!(stdout.contains("node embeddings"), "stdout: {stdout}");

    let csv = std::fs::read_to_string(dir.path().join("emb.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("id,node_type,split,predicted_class,z0"));
    // 24 documents plus the 16-word vocabulary, plus the header.
    assert_eq!(lines.len(), 1 + 24 + 16, "{}", lines.len());
}

#[test]
fn build_graph_compares_both_construction_modes() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    let stdout = stdout_of(&textgcn(
        &[
            "build-graph",
            "--corpus",
            "corpus.jsonl",
            "--min-frequency",
            "1",
            "--window-size",
            "5",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("doc-word-only edges"), "{stdout}");
    assert!(stdout.contains("with-word-word edges"), "{stdout}");
    assert!(stdout.contains("edge-count ratio"), "{stdout}");
}

#[test]
fn config_file_supplies_defaults_and_catches_typos() {
    let dir = TempDir::new().unwrap();
    write_corpus(dir.path());
    std::fs::write(
        dir.path().join("exp.toml"),
        "corpus = \"corpus.jsonl\"\npreset = \"fewshot\"\nepochs = 20\nhidden = 8\nmin_frequency = 1\ntrain_fraction = 0.25\n",
    )
    .unwrap();
    let stdout = stdout_of(&textgcn(
        &["--config", "exp.toml", "--out-dir", "results", "train", "--epochs", "30"],
        dir.path(),
    ));
    assert!(stdout.contains("test accuracy:"), "{stdout}");
    let run_dir = std::fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .next()
        .unwrap();
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(
        record["trace"].as_array().unwrap().len(),
        30,
        "the explicit flag beats the file value"
    );

    std::fs::write(dir.path().join("bad.toml"), "epcohs = 5\n").unwrap();
    let output = textgcn(&["--config", "bad.toml", "train"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown key"), "stderr: {stderr}");
}
