//! Flag surfaces and layered option resolution. Values are resolved as
//! built-in defaults, then config-file keys, then the preset bundle, then
//! explicit flags, so a preset can be both requested from a file and
//! overridden field-by-field on the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::Value;

use textgcn::corpus::{load_corpus_pair, CorpusFormat, SplitMode, SplitTag, TokenizedCorpus};
use textgcn::graph::{GraphMode, PmiCounting};
use textgcn::optim::OptimizerKind;
use textgcn::trainer::{AnchorPool, Preset, TrainConfig};

use crate::{stage, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatOpt {
    Jsonl,
    Tsv,
}

impl FormatOpt {
    fn into_core(self) -> CorpusFormat {
        match self {
            FormatOpt::Jsonl => CorpusFormat::Jsonl,
            FormatOpt::Tsv => CorpusFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetOpt {
    #[value(name = "textgcn")]
    Textgcn,
    #[value(name = "textgcn+2nr")]
    Textgcn2nr,
    #[value(name = "textgcn+pseudo")]
    TextgcnPseudo,
    #[value(name = "fewshot")]
    Fewshot,
}

impl PresetOpt {
    pub fn into_core(self) -> Preset {
        match self {
            PresetOpt::Textgcn => Preset::Textgcn,
            PresetOpt::Textgcn2nr => Preset::Textgcn2nr,
            PresetOpt::TextgcnPseudo => Preset::TextgcnPseudo,
            PresetOpt::Fewshot => Preset::Fewshot,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphModeOpt {
    DocWordOnly,
    WithWordWord,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PmiCountingOpt {
    Presence,
    Multiplicity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitModeOpt {
    /// Low-resource below fraction 0.5, high-resource at or above it.
    Auto,
    LowResource,
    HighResource,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorPoolOpt {
    NonTest,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerOpt {
    Ranger,
    Adam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitOpt {
    Train,
    Validation,
    Test,
}

impl SplitOpt {
    pub fn into_tag(self) -> SplitTag {
        match self {
            SplitOpt::Train => SplitTag::Train,
            SplitOpt::Validation => SplitTag::Validation,
            SplitOpt::Test => SplitTag::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusOpts {
    /// Training-pool corpus file.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Companion corpus whose documents are pinned to the test split.
    #[arg(long, value_name = "FILE")]
    pub test_corpus: Option<PathBuf>,
    /// Corpus file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatOpt>,
}

#[derive(Debug, Default, Args)]
pub struct ModelOpts {
    /// Frozen flag bundle to start from.
    #[arg(long, value_enum)]
    pub preset: Option<PresetOpt>,
    /// Labeled fraction of the train pool.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Budget layout; auto switches to high-resource at fraction 0.5.
    #[arg(long, value_enum)]
    pub split_mode: Option<SplitModeOpt>,
    /// Exact labeled budget as train,val counts; overrides the fraction.
    #[arg(long, value_name = "T,V", value_parser = parse_budget)]
    pub budget: Option<(usize, usize)>,
    /// Class-stratified label sampling.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratified: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Hidden width of both graph layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Triplet margin.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Pseudo-label confidence threshold.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda_2nr: Option<f64>,
    #[arg(long)]
    pub lambda_pseudo: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub enable_2nr: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub enable_pseudo: Option<bool>,
    /// Training signal annealing on the supervised loss.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub tsa: Option<bool>,
    /// Triplet anchor pool.
    #[arg(long, value_enum)]
    pub anchor_pool: Option<AnchorPoolOpt>,
    #[arg(long, value_enum)]
    pub graph_mode: Option<GraphModeOpt>,
    /// Co-occurrence window for word-word edges.
    #[arg(long)]
    pub window_size: Option<usize>,
    #[arg(long, value_enum)]
    pub pmi_counting: Option<PmiCountingOpt>,
    /// Minimum corpus frequency for a word to become a node.
    #[arg(long)]
    pub min_frequency: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerOpt>,
    #[arg(long)]
    pub lookahead_k: Option<usize>,
    #[arg(long)]
    pub lookahead_alpha: Option<f64>,
    /// Gradient centralization on matrix parameters.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub gc: Option<bool>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

fn parse_budget(s: &str) -> Result<(usize, usize), String> {
    let (t, v) = s
        .split_once(',')
        .ok_or_else(|| format!("expected T,V document counts, got {s:?}"))?;
    let t = t.trim().parse().map_err(|e| format!("train count: {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("validation count: {e}"))?;
    Ok((t, v))
}

/// Keys a config file may carry beyond the training-config fields.
const EXTRA_KEYS: [&str; 4] = ["corpus", "test_corpus", "format", "preset"];

/// A parsed `--config` file: a flat TOML table whose keys are either
/// training-config field names or corpus/preset selectors.
#[derive(Debug, Default)]
pub struct FileConfig {
    path: String,
    values: BTreeMap<String, Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: display.clone(),
            source,
        })?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: display.clone(),
            message: e.to_string(),
        })?;
        let known = config_keys();
        let mut values = BTreeMap::new();
        for (key, value) in table {
            if !known.iter().any(|k| k == &key) && !EXTRA_KEYS.contains(&key.as_str()) {
                return Err(CliError::ConfigFile {
                    path: display,
                    message: format!("unknown key {key:?}"),
                });
            }
            let value = serde_json::to_value(value).map_err(|e| CliError::ConfigFile {
                path: display.clone(),
                message: format!("key {key:?}: {e}"),
            })?;
            values.insert(key, value);
        }
        Ok(FileConfig {
            path: display,
            values,
        })
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(CliError::ConfigFile {
                path: self.path.clone(),
                message: format!("key {key:?} must be a string, got {other}"),
            }),
        }
    }

    pub fn path_value(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn preset(&self) -> Result<Option<Preset>, CliError> {
        match self.string("preset")? {
            None => Ok(None),
            Some(name) => Preset::parse(&name).map(Some).ok_or_else(|| {
                CliError::ConfigFile {
                    path: self.path.clone(),
                    message: format!("unknown preset {name:?}"),
                }
            }),
        }
    }

    pub fn format(&self) -> Result<Option<CorpusFormat>, CliError> {
        match self.string("format")? {
            None => Ok(None),
            Some(name) => match name.as_str() {
                "jsonl" => Ok(Some(CorpusFormat::Jsonl)),
                "tsv" => Ok(Some(CorpusFormat::Tsv)),
                other => Err(CliError::ConfigFile {
                    path: self.path.clone(),
                    message: format!("unknown format {other:?} (expected jsonl or tsv)"),
                }),
            },
        }
    }

    /// Built-in defaults overlaid with this file's training-config keys.
    pub fn base_config(&self) -> Result<TrainConfig, CliError> {
        let mut json = serde_json::to_value(TrainConfig::default()).expect("config serializes");
        let object = json.as_object_mut().expect("config is a json object");
        for (key, value) in &self.values {
            if object.contains_key(key.as_str()) {
                object.insert(key.clone(), value.clone());
            }
        }
        serde_json::from_value(json).map_err(|e| CliError::ConfigFile {
            path: self.path.clone(),
            message: e.to_string(),
        })
    }
}

/// Training-config field names, straight from the struct's serialized form.
fn config_keys() -> Vec<String> {
    let json = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    json.as_object()
        .expect("config is a json object")
        .keys()
        .cloned()
        .collect()
}

/// Copies every explicitly passed flag onto the config.
pub fn apply_flags(config: &mut TrainConfig, opts: &ModelOpts) {
    if let Some(v) = opts.fraction {
        config.train_fraction = v;
    }
    if let Some(v) = opts.split_mode {
        match v {
            SplitModeOpt::Auto => {}
            SplitModeOpt::LowResource => config.split_mode = SplitMode::LowResource,
            SplitModeOpt::HighResource => config.split_mode = SplitMode::HighResource,
        }
    }
    if let Some(v) = opts.budget {
        config.budget_override = Some(v);
    }
    if let Some(v) = opts.stratified {
        config.stratified = v;
    }
    if let Some(v) = opts.epochs {
        config.epochs = v;
    }
    if let Some(v) = opts.lr {
        config.lr = v;
    }
    if let Some(v) = opts.dropout {
        config.dropout = v;
    }
    if let Some(v) = opts.hidden {
        config.hidden = v;
    }
    if let Some(v) = opts.margin {
        config.margin = v;
    }
    if let Some(v) = opts.beta {
        config.beta = v;
    }
    if let Some(v) = opts.lambda_2nr {
        config.lambda_2nr = v;
    }
    if let Some(v) = opts.lambda_pseudo {
        config.lambda_pseudo = v;
    }
    if let Some(v) = opts.enable_2nr {
        config.enable_2nr = v;
    }
    if let Some(v) = opts.enable_pseudo {
        config.enable_pseudo = v;
    }
    if let Some(v) = opts.tsa {
        config.tsa = v;
    }
    if let Some(v) = opts.anchor_pool {
        config.anchor_pool = match v {
            AnchorPoolOpt::NonTest => AnchorPool::NonTest,
            AnchorPoolOpt::All => AnchorPool::All,
        };
    }
    if let Some(v) = opts.graph_mode {
        config.graph_mode = match v {
            GraphModeOpt::DocWordOnly => GraphMode::DocWordOnly,
            GraphModeOpt::WithWordWord => GraphMode::WithWordWord,
        };
    }
    if let Some(v) = opts.window_size {
        config.window_size = v;
    }
    if let Some(v) = opts.pmi_counting {
        config.pmi_counting = match v {
            PmiCountingOpt::Presence => PmiCounting::Presence,
            PmiCountingOpt::Multiplicity => PmiCounting::Multiplicity,
        };
    }
    if let Some(v) = opts.min_frequency {
        config.min_frequency = v;
    }
    if let Some(v) = opts.optimizer {
        config.optimizer = match v {
            OptimizerOpt::Ranger => OptimizerKind::Ranger,
            OptimizerOpt::Adam => OptimizerKind::Adam,
        };
    }
    if let Some(v) = opts.lookahead_k {
        config.lookahead_k = v;
    }
    if let Some(v) = opts.lookahead_alpha {
        config.lookahead_alpha = v;
    }
    if let Some(v) = opts.gc {
        config.gc = v;
    }
    if let Some(v) = opts.weight_decay {
        config.weight_decay = v;
    }
}

/// Whether the split mode was pinned by a flag or a config-file key, as
/// opposed to being left to the fraction-based auto rule.
pub fn split_mode_is_explicit(file: &FileConfig, opts: &ModelOpts) -> bool {
    match opts.split_mode {
        Some(SplitModeOpt::Auto) => false,
        Some(_) => true,
        None => file.has_key("split_mode"),
    }
}

pub fn auto_split_mode(fraction: f64) -> SplitMode {
    if fraction >= 0.5 {
        SplitMode::HighResource
    } else {
        SplitMode::LowResource
    }
}

/// Full resolution for single-run commands: defaults, file, preset, flags,
/// global seed, then the auto split rule and validation.
pub fn resolve_train_config(
    file: &FileConfig,
    opts: &ModelOpts,
    seed: Option<u64>,
) -> Result<TrainConfig, CliError> {
    let mut config = file.base_config()?;
    let preset = match opts.preset {
        Some(p) => Some(p.into_core()),
        None => file.preset()?,
    };
    if let Some(preset) = preset {
        preset.apply(&mut config);
    }
    apply_flags(&mut config, opts);
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if !split_mode_is_explicit(file, opts) {
        config.split_mode = auto_split_mode(config.train_fraction);
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn infer_format(path: &Path) -> Result<CorpusFormat, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => Ok(CorpusFormat::Jsonl),
        Some("tsv") | Some("txt") => Ok(CorpusFormat::Tsv),
        _ => Err(CliError::Usage(format!(
            "cannot infer the corpus format of {}; pass --format",
            path.display()
        ))),
    }
}

pub fn resolve_corpus(file: &FileConfig, opts: &CorpusOpts) -> Result<TokenizedCorpus, CliError> {
    let train = match &opts.corpus {
        Some(p) => p.clone(),
        None => file.path_value("corpus")?.ok_or_else(|| {
            CliError::Usage("--corpus is required (flag or config-file key)".to_string())
        })?,
    };
    let test = match &opts.test_corpus {
        Some(p) => Some(p.clone()),
        None => file.path_value("test_corpus")?,
    };
    let format = match opts.format {
        Some(f) => f.into_core(),
        None => match file.format()? {
            Some(f) => f,
            None => infer_format(&train)?,
        },
    };
    load_corpus_pair(&train, test.as_deref(), format).map_err(stage("corpus"))
}
