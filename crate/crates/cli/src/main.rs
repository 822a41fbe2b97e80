//! Experiment front-end for the word-document graph classifier: builds
//! graphs, runs single training experiments, scores checkpoints, exports
//! embeddings, and drives multi-seed/multi-fraction sweeps with cached,
//! aggregated results.

mod experiment;
mod options;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use options::{CorpusOpts, FileConfig, ModelOpts, SplitOpt};
use sweep::GridOpts;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: textgcn::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error("all {0} sweep cells failed")]
    SweepFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 2,
            _ => 1,
        }
    }
}

/// Tags a pipeline stage onto a library error so failures name where they
/// happened.
pub fn stage(stage: &'static str) -> impl Fn(textgcn::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "textgcn",
    version,
    about = "Few-shot transductive document classification over word-document graphs"
)]
struct Cli {
    /// Flat TOML file of default option values; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed, overriding both the built-in default and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel sweep cells.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Root directory for run records and sweep tables.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the graph and report edge counts for both construction modes.
    BuildGraph {
        #[command(flatten)]
        corpus: CorpusOpts,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Train one model and record the run under <out-dir>/<hash>/.
    Train {
        #[command(flatten)]
        corpus: CorpusOpts,
        #[command(flatten)]
        model: ModelOpts,
        /// Also write the per-epoch trace CSV next to run.json.
        #[arg(long)]
        trace: bool,
        /// Retrain even when a cached record exists for this config.
        #[arg(long)]
        force: bool,
    },
    /// Score a saved checkpoint on one split of the corpus.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusOpts,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitOpt,
    },
    /// Run the fraction x seed x preset grid and aggregate per cell.
    Sweep {
        #[command(flatten)]
        corpus: CorpusOpts,
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        grid: GridOpts,
        /// Rerun cells whose cached records already exist.
        #[arg(long)]
        force: bool,
    },
    /// Write eval-mode node embeddings with predictions to a CSV file.
    ExportEmbeddings {
        #[command(flatten)]
        corpus: CorpusOpts,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildGraph { corpus, model } => {
            let config = options::resolve_train_config(&file, &model, cli.seed)?;
            let corpus = options::resolve_corpus(&file, &corpus)?;
            experiment::cmd_build_graph(&corpus, &config)
        }
        Command::Train {
            corpus,
            model,
            trace,
            force,
        } => {
            let config = options::resolve_train_config(&file, &model, cli.seed)?;
            let corpus = options::resolve_corpus(&file, &corpus)?;
            experiment::cmd_train(&corpus, &config, &cli.out_dir, force, trace)
        }
        Command::Evaluate {
            corpus,
            model,
            checkpoint,
            split,
        } => {
            let config = options::resolve_train_config(&file, &model, cli.seed)?;
            let corpus = options::resolve_corpus(&file, &corpus)?;
            experiment::cmd_evaluate(&corpus, &config, &checkpoint, split)
        }
        Command::Sweep {
            corpus,
            model,
            grid,
            force,
        } => {
            let corpus = options::resolve_corpus(&file, &corpus)?;
            let jobs = cli.jobs.unwrap_or(1).max(1);
            sweep::cmd_sweep(&corpus, &file, &model, &grid, cli.seed, &cli.out_dir, jobs, force)
        }
        Command::ExportEmbeddings {
            corpus,
            model,
            checkpoint,
            output,
        } => {
            let config = options::resolve_train_config(&file, &model, cli.seed)?;
            let corpus = options::resolve_corpus(&file, &corpus)?;
            experiment::cmd_export(&corpus, &config, &checkpoint, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
