//! The sweep runner: enumerates the fraction x seed x preset grid (or a
//! fixed-budget grid), runs cells in parallel against the on-disk cache,
//! writes per-run rows to sweep.csv, and prints per-cell aggregates.

use std::collections::BTreeMap;
use std::path::Path;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use textgcn::corpus::TokenizedCorpus;
use textgcn::trainer::{Preset, TrainConfig};

use crate::experiment::{graph_sizes, run_experiment};
use crate::options::{
    apply_flags, auto_split_mode, split_mode_is_explicit, FileConfig, ModelOpts, PresetOpt,
};
use crate::CliError;

#[derive(Debug, Args)]
pub struct GridOpts {
    /// Comma-separated labeled fractions.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.01,0.02,0.05,0.1,0.9"
    )]
    pub fractions: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Comma-separated presets.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "textgcn,textgcn+2nr,textgcn+pseudo,fewshot"
    )]
    pub presets: Vec<PresetOpt>,
    /// Replace the fraction grid with fixed-budget cells: TOTAL labels
    /// split train/validation in steps of --budget-step.
    #[arg(long, value_name = "TOTAL")]
    pub budget_grid: Option<usize>,
    /// Step size of the budget split.
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub budget_step: usize,
}

/// One grid axis value: a labeled fraction or an exact (train, val) budget.
#[derive(Debug, Clone, Copy)]
enum CellValue {
    Fraction(f64),
    Budget(usize, usize),
}

impl CellValue {
    fn label(self) -> String {
        match self {
            CellValue::Fraction(f) => {
                let pct = (f * 1000.0).round() / 10.0;
                if pct.fract() == 0.0 {
                    format!("{pct:.0}%")
                } else {
                    format!("{pct:.1}%")
                }
            }
            CellValue::Budget(t, v) => format!("{t}/{v}"),
        }
    }
}

struct Cell {
    label: String,
    preset: Preset,
    seed: u64,
    config: TrainConfig,
}

#[derive(Serialize)]
struct SweepRow {
    cell: String,
    preset: &'static str,
    train_fraction: f64,
    budget_train: Option<usize>,
    budget_val: Option<usize>,
    seed: u64,
    config_hash: String,
    best_epoch: usize,
    best_val_loss: f64,
    test_accuracy: Option<f64>,
    wall_clock_seconds: f64,
    cached: bool,
}

fn enumerate_values(grid: &GridOpts) -> Result<Vec<CellValue>, CliError> {
    match grid.budget_grid {
        None => {
            if grid.fractions.is_empty() {
                return Err(CliError::Usage("--fractions must not be empty".to_string()));
            }
            Ok(grid.fractions.iter().map(|&f| CellValue::Fraction(f)).collect())
        }
        Some(total) => {
            let step = grid.budget_step;
            if step == 0 || step >= total {
                return Err(CliError::Usage(format!(
                    "--budget-step {step} must be in 1..{total}"
                )));
            }
            Ok((step..total)
                .step_by(step)
                .map(|t| CellValue::Budget(t, total - t))
                .collect())
        }
    }
}

fn build_cells(
    file: &FileConfig,
    opts: &ModelOpts,
    grid: &GridOpts,
    values: &[CellValue],
) -> Result<Vec<Cell>, CliError> {
    if opts.preset.is_some() {
        return Err(CliError::Usage(
            "sweeps take their presets from --presets, not --preset".to_string(),
        ));
    }
    if grid.seeds.is_empty() {
        return Err(CliError::Usage("--seeds must not be empty".to_string()));
    }
    if grid.presets.is_empty() {
        return Err(CliError::Usage("--presets must not be empty".to_string()));
    }
    let base = file.base_config()?;
    let split_explicit = split_mode_is_explicit(file, opts);
    let mut cells = Vec::new();
    for &value in values {
        for preset_opt in &grid.presets {
            let preset = preset_opt.into_core();
            for &seed in &grid.seeds {
                let mut config = base.clone();
                preset.apply(&mut config);
                apply_flags(&mut config, opts);
                match value {
                    CellValue::Fraction(f) => {
                        config.train_fraction = f;
                        config.budget_override = None;
                    }
                    CellValue::Budget(t, v) => config.budget_override = Some((t, v)),
                }
                config.seed = seed;
                if !split_explicit {
                    config.split_mode = auto_split_mode(config.train_fraction);
                }
                config
                    .validate()
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                cells.push(Cell {
                    label: value.label(),
                    preset,
                    seed,
                    config,
                });
            }
        }
    }
    Ok(cells)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn print_aggregate_table(rows: &[SweepRow], labels: &[String], presets: &[Preset]) {
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if let Some(acc) = row.test_accuracy {
            groups
                .entry((row.cell.as_str(), row.preset))
                .or_default()
                .push(acc * 100.0);
        }
    }
    let preset_names: Vec<&'static str> = presets.iter().map(|p| p.name()).collect();
    let cell_text = |label: &str, name: &str| -> String {
        match groups.get(&(label, name)) {
            Some(values) => {
                let (mean, std) = mean_std(values);
                format!("{mean:.1} +- {std:.1}")
            }
            None => "-".to_string(),
        }
    };
    let label_width = labels
        .iter()
        .map(|l| l.len())
        .chain(["cell".len()])
        .max()
        .unwrap_or(4);
    let col_widths: Vec<usize> = preset_names
        .iter()
        .map(|name| {
            labels
                .iter()
                .map(|l| cell_text(l, name).len())
                .chain([name.len()])
                .max()
                .unwrap_or(1)
        })
        .collect();

    println!();
    println!("test accuracy, mean +- std over seeds (percent):");
    let mut header = format!("{:label_width$}", "cell");
    for (name, width) in preset_names.iter().zip(&col_widths) {
        header.push_str(&format!("  {name:width$}"));
    }
    println!("{header}");
    for label in labels {
        let mut line = format!("{label:label_width$}");
        for (name, width) in preset_names.iter().zip(&col_widths) {
            let text = cell_text(label, name);
            line.push_str(&format!("  {text:width$}"));
        }
        println!("{line}");
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    corpus: &TokenizedCorpus,
    file: &FileConfig,
    opts: &ModelOpts,
    grid: &GridOpts,
    _seed: Option<u64>,
    out_dir: &Path,
    jobs: usize,
    force: bool,
) -> Result<(), CliError> {
    let values = enumerate_values(grid)?;
    let cells = build_cells(file, opts, grid, &values)?;
    let labels: Vec<String> = values.iter().map(|v| v.label()).collect();
    let presets: Vec<Preset> = grid.presets.iter().map(|p| p.into_core()).collect();
    println!(
        "sweep: {} cells ({} {} x {} presets x {} seeds), {jobs} parallel",
        cells.len(),
        values.len(),
        if grid.budget_grid.is_some() {
            "budgets"
        } else {
            "fractions"
        },
        presets.len(),
        grid.seeds.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let outcomes: Vec<(Cell, Result<crate::experiment::RunArtifacts, CliError>)> =
        pool.install(|| {
            cells
                .into_par_iter()
                .map(|cell| {
                    let artifacts =
                        run_experiment(corpus, &cell.config, out_dir, force, false, false);
                    (cell, artifacts)
                })
                .collect()
        });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let (mut ran, mut cached) = (0usize, 0usize);
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(artifacts) => {
                if artifacts.cached {
                    cached += 1;
                } else {
                    ran += 1;
                }
                let result = artifacts.result;
                rows.push(SweepRow {
                    cell: cell.label,
                    preset: cell.preset.name(),
                    train_fraction: cell.config.train_fraction,
                    budget_train: cell.config.budget_override.map(|(t, _)| t),
                    budget_val: cell.config.budget_override.map(|(_, v)| v),
                    seed: cell.seed,
                    config_hash: result.config_hash,
                    best_epoch: result.best_epoch,
                    best_val_loss: result.best_val_loss,
                    test_accuracy: result.test_accuracy,
                    wall_clock_seconds: result.wall_clock_seconds,
                    cached: artifacts.cached,
                });
            }
            Err(e) => failures.push(format!(
                "cell {} preset {} seed {}: {e}",
                cell.label,
                cell.preset.name(),
                cell.seed
            )),
        }
    }
    for failure in &failures {
        eprintln!("warning: {failure}");
    }
    println!(
        "{} cells: {ran} ran, {cached} cached, {} failed",
        rows.len() + failures.len(),
        failures.len()
    );
    if rows.is_empty() {
        return Err(CliError::SweepFailed(failures.len()));
    }

    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let csv_path = out_dir.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Io {
        path: csv_path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError::Io {
            path: csv_path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    }
    writer.flush().map_err(|source| CliError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    println!("wrote {} run records to {}", rows.len(), csv_path.display());
    if !failures.is_empty() {
        let failures_path = out_dir.join("failures.txt");
        std::fs::write(&failures_path, failures.join("\n") + "\n").map_err(|source| {
            CliError::Io {
                path: failures_path.display().to_string(),
                source,
            }
        })?;
        println!(
            "recorded {} failed cells in {}",
            failures.len(),
            failures_path.display()
        );
    }

    print_aggregate_table(&rows, &labels, &presets);

    // The construction-mode comparison for this corpus, using the resolved
    // graph options (presets do not change the raw counts).
    let mut graph_config = file.base_config()?;
    apply_flags(&mut graph_config, opts);
    println!();
    graph_sizes(corpus, &graph_config)?.print();
    Ok(())
}
