//! Full-batch training with validation-loss model selection, plus the
//! surrounding pipeline plumbing: run configuration (hash-stable, so result
//! directories can be keyed by content), preset flag bundles, corpus
//! preparation, test evaluation, and embedding export.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compute::DenseMatrix;
use crate::corpus::{
    assign_splits, build_vocabulary, ClassIndex, SplitAssignment, SplitMode, SplitTag,
    TokenizedCorpus, Vocabulary,
};
use crate::graph::{build_graph, GraphMode, PmiCounting, WordDocumentGraph};
use crate::model::{
    backward, forward_eval, forward_train, init_params, Checkpoint, GcnParams,
};
use crate::objectives::{
    loss_2nr, loss_pseudo, loss_supervised, mean_cross_entropy, sample_triplets, total_loss,
    ThresholdDirection, TsaSchedule,
};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::rng::{stream, stream_rng, RngState};
use crate::{Error, Result};

/// Which documents anchor the neighborhood-regularizer triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPool {
    /// Train, validation, and unlabeled documents (the default).
    NonTest,
    /// Every document node, test included.
    All,
}

/// Everything a single run depends on. Field order is part of the hash
/// contract: `config_hash` digests the canonical JSON serialization, which
/// follows declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub margin: f64,
    pub beta: f64,
    pub lambda_2nr: f64,
    pub lambda_pseudo: f64,
    pub enable_2nr: bool,
    pub enable_pseudo: bool,
    pub tsa: bool,
    pub anchor_pool: AnchorPool,
    pub pseudo_threshold_direction: ThresholdDirection,
    pub graph_mode: GraphMode,
    pub window_size: usize,
    pub pmi_counting: PmiCounting,
    pub min_frequency: u64,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    pub budget_override: Option<(usize, usize)>,
    pub stratified: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub gc: bool,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 0.01,
            dropout: 0.5,
            hidden: 64,
            margin: 1.0,
            beta: 0.75,
            lambda_2nr: 1.0,
            lambda_pseudo: 1.0,
            enable_2nr: false,
            enable_pseudo: false,
            tsa: false,
            anchor_pool: AnchorPool::NonTest,
            pseudo_threshold_direction: ThresholdDirection::GreaterEqual,
            graph_mode: GraphMode::WithWordWord,
            window_size: 20,
            pmi_counting: PmiCounting::Presence,
            min_frequency: 5,
            train_fraction: 0.01,
            split_mode: SplitMode::LowResource,
            budget_override: None,
            stratified: false,
            seed: 42,
            optimizer: OptimizerKind::Ranger,
            lookahead_k: 6,
            lookahead_alpha: 0.5,
            gc: true,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".to_string()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".to_string()));
        }
        if self.margin < 0.0 {
            return Err(Error::Config(format!(
                "triplet margin {} must be non-negative",
                self.margin
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "pseudo-label threshold {} outside [0, 1]",
                self.beta
            )));
        }
        if self.lambda_2nr < 0.0 {
            return Err(Error::NegativeLossWeight(self.lambda_2nr));
        }
        if self.lambda_pseudo < 0.0 {
            return Err(Error::NegativeLossWeight(self.lambda_pseudo));
        }
        if self.budget_override.is_none()
            && !(self.train_fraction > 0.0 && self.train_fraction <= 1.0)
        {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be at least 1".to_string()));
        }
        if self.min_frequency == 0 {
            return Err(Error::Config(
                "min_frequency must be at least 1".to_string(),
            ));
        }
        if self.lookahead_k == 0 {
            return Err(Error::Config("lookahead_k must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.lookahead_alpha) {
            return Err(Error::Config(format!(
                "lookahead_alpha {} outside [0, 1]",
                self.lookahead_alpha
            )));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// Stable across runs and processes for equal configs.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            lr: self.lr,
            lookahead_k: self.lookahead_k,
            lookahead_alpha: self.lookahead_alpha,
            gc: self.gc,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }
}

/// Frozen flag bundles: each results-table row maps to exactly one preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "textgcn")]
    Textgcn,
    #[serde(rename = "textgcn+2nr")]
    Textgcn2nr,
    #[serde(rename = "textgcn+pseudo")]
    TextgcnPseudo,
    #[serde(rename = "fewshot")]
    Fewshot,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Textgcn,
        Preset::Textgcn2nr,
        Preset::TextgcnPseudo,
        Preset::Fewshot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Textgcn => "textgcn",
            Preset::Textgcn2nr => "textgcn+2nr",
            Preset::TextgcnPseudo => "textgcn+pseudo",
            Preset::Fewshot => "fewshot",
        }
    }

    pub fn parse(name: &str) -> Option<Preset> {
        Preset::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Overwrites the feature flags and graph mode; every other field of
    /// `config` is left as configured.
    pub fn apply(self, config: &mut TrainConfig) {
        match self {
            Preset::Textgcn => {
                config.graph_mode = GraphMode::WithWordWord;
                config.enable_2nr = false;
                config.enable_pseudo = false;
                config.tsa = false;
            }
            Preset::Textgcn2nr => {
                config.graph_mode = GraphMode::WithWordWord;
                config.enable_2nr = true;
                config.enable_pseudo = false;
                config.tsa = true;
            }
            Preset::TextgcnPseudo => {
                config.graph_mode = GraphMode::WithWordWord;
                config.enable_2nr = false;
                config.enable_pseudo = true;
                config.tsa = false;
            }
            Preset::Fewshot => {
                config.graph_mode = GraphMode::DocWordOnly;
                config.enable_2nr = true;
                config.enable_pseudo = true;
                config.tsa = true;
            }
        }
    }

    pub fn configured(self, base: &TrainConfig) -> TrainConfig {
        let mut config = base.clone();
        self.apply(&mut config);
        config
    }
}

/// The assembled inputs of one run: vocabulary, label space, graph, and
/// split assignment, all derived from one corpus and one config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocabulary: Vocabulary,
    pub classes: ClassIndex,
    pub labels: Vec<Option<usize>>,
    pub graph: WordDocumentGraph,
    pub splits: SplitAssignment,
}

pub fn prepare(corpus: &TokenizedCorpus, config: &TrainConfig) -> Result<Prepared> {
    config.validate()?;
    let vocabulary = build_vocabulary(corpus, config.min_frequency)?;
    let classes = ClassIndex::from_corpus(corpus);
    let labels = classes.labels_for(corpus);
    let graph = build_graph(
        corpus,
        &vocabulary,
        config.graph_mode,
        config.window_size,
        config.pmi_counting,
    )?;
    let splits = assign_splits(
        corpus,
        config.train_fraction,
        config.seed,
        config.split_mode,
        config.budget_override,
        config.stratified,
    )?;
    Ok(Prepared {
        vocabulary,
        classes,
        labels,
        graph,
        splits,
    })
}

/// One epoch's loss components and validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_supervised: f64,
    pub loss_2nr: Option<f64>,
    pub loss_pseudo: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Fraction in [0, 1]; `None` when the corpus has no test documents.
    pub test_accuracy: Option<f64>,
    pub wall_clock_seconds: f64,
    pub trace: Vec<EpochTrace>,
}

impl RunResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        let io_err = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        w.write_record([
            "epoch",
            "loss_total",
            "loss_supervised",
            "loss_2nr",
            "loss_pseudo",
            "val_loss",
            "val_accuracy",
        ])
        .map_err(io_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trace {
            w.write_record([
                t.epoch.to_string(),
                t.loss_total.to_string(),
                t.loss_supervised.to_string(),
                opt(t.loss_2nr),
                opt(t.loss_pseudo),
                t.val_loss.to_string(),
                t.val_accuracy.to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: RunResult,
    pub checkpoint: Checkpoint,
}

fn check_finite(value: f64, component: &str, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            component: component.to_string(),
            epoch,
        })
    }
}

/// (doc, class) pairs for every document carrying `tag`.
fn collect_examples(prepared: &Prepared, tag: SplitTag) -> Result<Vec<(usize, usize)>> {
    prepared
        .splits
        .docs_with(tag)
        .into_iter()
        .map(|doc| {
            prepared.labels[doc]
                .map(|class| (doc, class))
                .ok_or_else(|| {
                    Error::Config(format!("document {doc} tagged {tag:?} has no label"))
                })
        })
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy_of(logits: &DenseMatrix, examples: &[(usize, usize)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|&&(doc, class)| argmax(logits.row(doc)) == class)
        .count();
    hits as f64 / examples.len() as f64
}

/// Runs the full-batch loop and returns the best-validation-loss snapshot.
///
/// Per epoch: zero grads, train-mode forward, enabled losses (supervised
/// with the annealing threshold when `tsa` is on, triplet regularizer,
/// pseudo-labels), backward, optimizer step, then an eval-mode forward for
/// the validation loss (plain cross-entropy, no annealing or regularizers)
/// and a snapshot whenever that loss strictly improves; ties keep the
/// earliest epoch.
pub fn train(prepared: &Prepared, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let indexing = prepared.graph.indexing();
    let n_docs = indexing.n_docs;
    let n_nodes = indexing.n_nodes();
    let adj = prepared.graph.normalized();
    let tags = prepared.splits.tags();
    let n_classes = prepared.classes.n_classes();

    let train_examples = collect_examples(prepared, SplitTag::Train)?;
    if train_examples.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let val_examples = collect_examples(prepared, SplitTag::Validation)?;
    if val_examples.is_empty() {
        return Err(Error::Config(
            "validation split is empty; model selection needs validation documents".to_string(),
        ));
    }
    let unlabeled = prepared.splits.docs_with(SplitTag::Unlabeled);
    let anchors: Vec<usize> = match config.anchor_pool {
        AnchorPool::NonTest => (0..n_docs).filter(|&d| tags[d] != SplitTag::Test).collect(),
        AnchorPool::All => (0..n_docs).collect(),
    };
    let schedule = TsaSchedule {
        total_steps: config.epochs,
        n_classes,
    };

    let mut init_rng = stream_rng(config.seed, stream::INIT);
    let mut dropout_rng = stream_rng(config.seed, stream::DROPOUT);
    let mut triplet_rng = stream_rng(config.seed, stream::TRIPLET);
    let mut params = init_params(n_nodes, config.hidden, n_classes, &mut init_rng);
    let mut optimizer = Optimizer::new(config.optimizer_config(), &params.parameters());

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, GcnParams, RngState)> = None;

    for epoch in 0..config.epochs {
        params.zero_grads();
        let out = forward_train(adj, n_docs, &params, config.dropout, &mut dropout_rng)?;

        let threshold = config.tsa.then(|| schedule.threshold(epoch));
        let (l_sup, mut grad_logits) =
            loss_supervised(&out.logits, &train_examples, tags, threshold)?;
        check_finite(l_sup, "supervised loss", epoch)?;

        let mut upstream_z = DenseMatrix::zeros(n_nodes, config.hidden);
        let l_2nr = if config.enable_2nr {
            let triplets = sample_triplets(&prepared.graph, &anchors, &mut triplet_rng);
            let (l, g) = loss_2nr(&out.z, &triplets, config.margin)?;
            check_finite(l, "neighborhood regularizer", epoch)?;
            upstream_z.axpy(config.lambda_2nr, &g)?;
            Some(l)
        } else {
            None
        };

        let l_pseudo = if config.enable_pseudo {
            let (l, g) = loss_pseudo(
                &out.logits,
                &unlabeled,
                tags,
                config.beta,
                config.pseudo_threshold_direction,
            )?;
            check_finite(l, "pseudo-label loss", epoch)?;
            grad_logits.axpy(config.lambda_pseudo, &g)?;
            Some(l)
        } else {
            None
        };

        let l_total = total_loss(
            l_sup,
            l_2nr,
            l_pseudo,
            config.lambda_2nr,
            config.lambda_pseudo,
        )?;
        check_finite(l_total, "total loss", epoch)?;

        backward(&out, &grad_logits, &upstream_z, &mut params, adj)?;
        optimizer.step(&mut params.parameters_mut())?;

        let eval_out = forward_eval(adj, n_docs, &params)?;
        let (val_loss, _) =
            mean_cross_entropy(&eval_out.logits, &val_examples, tags, SplitTag::Validation)?;
        check_finite(val_loss, "validation loss", epoch)?;
        let val_accuracy = accuracy_of(&eval_out.logits, &val_examples);

        trace.push(EpochTrace {
            epoch,
            loss_total: l_total,
            loss_supervised: l_sup,
            loss_2nr: l_2nr,
            loss_pseudo: l_pseudo,
            val_loss,
            val_accuracy,
        });

        if best.as_ref().is_none_or(|&(_, b, _, _)| val_loss < b) {
            best = Some((
                epoch,
                val_loss,
                params.clone(),
                RngState::capture(&dropout_rng),
            ));
        }
    }

    let (best_epoch, best_val_loss, best_params, rng_state) =
        best.expect("epochs >= 1 guarantees a snapshot");

    let test_accuracy = if prepared.splits.count(SplitTag::Test) > 0 {
        Some(evaluate(&best_params, prepared, SplitTag::Test)?)
    } else {
        None
    };

    let result = RunResult {
        config_hash: config.config_hash(),
        seed: config.seed,
        best_epoch,
        best_val_loss,
        test_accuracy,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        trace,
    };
    Ok(TrainOutcome {
        result,
        checkpoint: Checkpoint {
            epoch: best_epoch,
            rng_state,
            params: best_params,
        },
    })
}

/// Eval-mode accuracy over the documents carrying `tag`: the fraction whose
/// argmax logit matches the gold label.
pub fn evaluate(params: &GcnParams, prepared: &Prepared, tag: SplitTag) -> Result<f64> {
    if tag == SplitTag::Unlabeled {
        return Err(Error::EvaluateUnlabeledSplit);
    }
    let examples = collect_examples(prepared, tag)?;
    if examples.is_empty() {
        return Err(Error::Config(format!("no documents tagged {tag:?}")));
    }
    let indexing = prepared.graph.indexing();
    let out = forward_eval(prepared.graph.normalized(), indexing.n_docs, params)?;
    Ok(accuracy_of(&out.logits, &examples))
}

/// Writes one CSV row per graph node: id, node type, split tag, predicted
/// class (documents only), and the eval-mode representation z. Word rows
/// leave split and prediction empty.
pub fn export_embeddings(
    params: &GcnParams,
    prepared: &Prepared,
    corpus: &TokenizedCorpus,
    path: &Path,
) -> Result<()> {
    let indexing = prepared.graph.indexing();
    if corpus.len() != indexing.n_docs {
        return Err(Error::ShapeMismatch {
            op: "export_embeddings".to_string(),
            details: format!(
                "corpus has {} documents but the graph was built over {}",
                corpus.len(),
                indexing.n_docs
            ),
        });
    }
    let out = forward_eval(prepared.graph.normalized(), indexing.n_docs, params)?;
    let io_err = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec![
        "id".to_string(),
        "node_type".to_string(),
        "split".to_string(),
        "predicted_class".to_string(),
    ];
    header.extend((0..params.hidden()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(io_err)?;

    let tag_name = |t: SplitTag| match t {
        SplitTag::Train => "train",
        SplitTag::Validation => "validation",
        SplitTag::Unlabeled => "unlabeled",
        SplitTag::Test => "test",
    };
    for node in 0..indexing.n_nodes() {
        let mut record: Vec<String> = Vec::with_capacity(4 + params.hidden());
        if indexing.is_doc_node(node) {
            let doc = &corpus.documents()[node];
            record.push(doc.id.clone());
            record.push("document".to_string());
            record.push(tag_name(prepared.splits.tag(node)).to_string());
            let predicted = argmax(out.logits.row(node));
            record.push(prepared.classes.name(predicted).to_string());
        } else {
            record.push(prepared.vocabulary.word(indexing.word_of(node).expect("word node")).to_string());
            record.push("word".to_string());
            record.push(String::new());
            record.push(String::new());
        }
        record.extend(out.z.row(node).iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}
