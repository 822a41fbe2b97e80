//! Single-experiment plumbing: the corpus-to-accuracy pipeline with on-disk
//! run records keyed by config hash, plus the build-graph, evaluate, and
//! embedding-export commands.

use std::fs;
use std::path::{Path, PathBuf};

use textgcn::corpus::{build_vocabulary, TokenizedCorpus};
use textgcn::graph::{build_graph, GraphMode};
use textgcn::model::Checkpoint;
use textgcn::trainer::{
    evaluate, export_embeddings, prepare, train, RunResult, TrainConfig,
};

use crate::options::SplitOpt;
use crate::{stage, CliError};

pub struct RunArtifacts {
    pub result: RunResult,
    pub dir: PathBuf,
    pub cached: bool,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs one experiment, or returns the cached record when a readable
/// `run.json` for this config hash already exists and `force` is off.
pub fn run_experiment(
    corpus: &TokenizedCorpus,
    config: &TrainConfig,
    out_dir: &Path,
    force: bool,
    write_trace: bool,
    save_checkpoint: bool,
) -> Result<RunArtifacts, CliError> {
    let dir = out_dir.join(config.config_hash());
    let run_path = dir.join("run.json");
    if !force && run_path.is_file() {
        if let Ok(text) = fs::read_to_string(&run_path) {
            if let Ok(result) = serde_json::from_str::<RunResult>(&text) {
                return Ok(RunArtifacts {
                    result,
                    dir,
                    cached: true,
                });
            }
        }
        // An unreadable record is rerun rather than trusted.
    }
    let prepared = prepare(corpus, config).map_err(stage("prepare"))?;
    let outcome = train(&prepared, config).map_err(stage("train"))?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut json = serde_json::to_string_pretty(&outcome.result).expect("result serializes");
    json.push('\n');
    fs::write(&run_path, json).map_err(io_err(&run_path))?;
    if write_trace {
        outcome
            .result
            .write_trace_csv(&dir.join("trace.csv"))
            .map_err(stage("trace"))?;
    }
    if save_checkpoint {
        outcome
            .checkpoint
            .save(&dir.join("checkpoint.bin"))
            .map_err(stage("checkpoint"))?;
    }
    Ok(RunArtifacts {
        result: outcome.result,
        dir,
        cached: false,
    })
}

pub fn cmd_train(
    corpus: &TokenizedCorpus,
    config: &TrainConfig,
    out_dir: &Path,
    force: bool,
    write_trace: bool,
) -> Result<(), CliError> {
    let artifacts = run_experiment(corpus, config, out_dir, force, write_trace, true)?;
    let result = &artifacts.result;
    let source = if artifacts.cached { " (cached)" } else { "" };
    println!("config {}{source}", result.config_hash);
    println!(
        "best epoch {} with validation loss {:.6}",
        result.best_epoch, result.best_val_loss
    );
    match result.test_accuracy {
        Some(acc) => println!("test accuracy: {:.1}%", acc * 100.0),
        None => println!("test accuracy: n/a (corpus has no test documents)"),
    }
    println!("run record: {}", artifacts.dir.join("run.json").display());
    Ok(())
}

pub struct GraphSizes {
    pub documents: usize,
    pub words: usize,
    /// Stored nonzeros of the normalized adjacency per construction mode.
    pub nnz_doc_word_only: usize,
    pub nnz_with_word_word: usize,
}

impl GraphSizes {
    pub fn print(&self) {
        println!(
            "documents {}, words {}, nodes {}",
            self.documents,
            self.words,
            self.documents + self.words
        );
        println!("doc-word-only edges (nnz): {}", self.nnz_doc_word_only);
        println!("with-word-word edges (nnz): {}", self.nnz_with_word_word);
        println!(
            "edge-count ratio with-word-word / doc-word-only: {:.2}",
            self.nnz_with_word_word as f64 / self.nnz_doc_word_only as f64
        );
    }
}

/// Builds the graph in both modes and reports their sizes.
pub fn graph_sizes(corpus: &TokenizedCorpus, config: &TrainConfig) -> Result<GraphSizes, CliError> {
    let vocab = build_vocabulary(corpus, config.min_frequency).map_err(stage("vocabulary"))?;
    let mut counts = [0usize; 2];
    for (slot, mode) in [GraphMode::DocWordOnly, GraphMode::WithWordWord]
        .into_iter()
        .enumerate()
    {
        let graph = build_graph(
            corpus,
            &vocab,
            mode,
            config.window_size,
            config.pmi_counting,
        )
        .map_err(stage("graph"))?;
        counts[slot] = graph.normalized().nnz();
    }
    Ok(GraphSizes {
        documents: corpus.len(),
        words: vocab.len(),
        nnz_doc_word_only: counts[0],
        nnz_with_word_word: counts[1],
    })
}

pub fn cmd_build_graph(corpus: &TokenizedCorpus, config: &TrainConfig) -> Result<(), CliError> {
    graph_sizes(corpus, config)?.print();
    Ok(())
}

pub fn cmd_evaluate(
    corpus: &TokenizedCorpus,
    config: &TrainConfig,
    checkpoint: &Path,
    split: SplitOpt,
) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(checkpoint).map_err(stage("checkpoint"))?;
    let prepared = prepare(corpus, config).map_err(stage("prepare"))?;
    let tag = split.into_tag();
    let accuracy = evaluate(&checkpoint.params, &prepared, tag).map_err(stage("evaluate"))?;
    println!("{tag:?} accuracy: {:.1}%", accuracy * 100.0);
    Ok(())
}

pub fn cmd_export(
    corpus: &TokenizedCorpus,
    config: &TrainConfig,
    checkpoint: &Path,
    output: &Path,
) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(checkpoint).map_err(stage("checkpoint"))?;
    let prepared = prepare(corpus, config).map_err(stage("prepare"))?;
    export_embeddings(&checkpoint.params, &prepared, corpus, output).map_err(stage("export"))?;
    let nodes = prepared.graph.indexing().n_nodes();
    println!("wrote {nodes} node embeddings to {}", output.display());
    Ok(())
}
