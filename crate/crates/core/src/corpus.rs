//! Corpus ingestion, vocabulary construction, and split assignment.
//!
//! Documents arrive pre-tokenized (or whitespace-splittable) from JSONL or
//! TSV files. The vocabulary is counted transductively over every document
//! in the corpus, train/test alike, and words below the frequency threshold
//! are dropped. No stopword removal, stemming, or language-specific
//! normalization happens here; the only transform is ASCII-range
//! lowercasing.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, stream_rng};
use crate::{Error, Result};

/// Where a document is pinned before random splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FixedSplit {
    #[default]
    TrainPool,
    Test,
}

/// One ingested document: an id, its token sequence, and optional label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Option<String>,
    pub fixed_split: FixedSplit,
}

/// The whole corpus, in file order. Single source of truth for text.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    documents: Vec<RawDocument>,
}

impl TokenizedCorpus {
    /// Validates and wraps a document list: every document must have tokens,
    /// ids must be unique, and test documents must carry a label.
    pub fn from_documents(documents: Vec<RawDocument>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.tokens.is_empty() {
                return Err(Error::EmptyDocument(doc.id.clone()));
            }
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateDocumentId(doc.id.clone()));
            }
            if doc.fixed_split == FixedSplit::Test && doc.label.is_none() {
                return Err(Error::UnlabeledTestDocument(doc.id.clone()));
            }
        }
        Ok(TokenizedCorpus { documents })
    }

    pub fn documents(&self) -> &[RawDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Supported on-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

fn ascii_lowercase_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file).lines())
}

fn read_documents(
    path: &Path,
    format: CorpusFormat,
    forced_split: Option<FixedSplit>,
) -> Result<Vec<RawDocument>> {
    let path_str = path.display().to_string();
    let mut documents = Vec::new();
    for (lineno, line) in open_lines(path)?.enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| Error::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: path_str.clone(),
            line: lineno,
            format: format!("{format:?}").to_lowercase(),
            reason,
        };
        let doc = match format {
            CorpusFormat::Jsonl => {
                let record: JsonlRecord =
                    serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
                let fixed_split = match record.split.as_deref() {
                    None | Some("train-pool") => FixedSplit::TrainPool,
                    Some("test") => FixedSplit::Test,
                    Some(other) => {
                        return Err(malformed(format!(
                            "unknown split tag {other:?} (expected \"train-pool\" or \"test\")"
                        )))
                    }
                };
                RawDocument {
                    id: record.id,
                    tokens: ascii_lowercase_tokens(&record.text),
                    label: record.label,
                    fixed_split,
                }
            }
            CorpusFormat::Tsv => {
                let (label, text) = line
                    .split_once('\t')
                    .ok_or_else(|| malformed("expected label<TAB>text".to_string()))?;
                if label.is_empty() {
                    return Err(malformed("empty label field".to_string()));
                }
                RawDocument {
                    id: format!("{path_str}:{lineno}"),
                    tokens: ascii_lowercase_tokens(text),
                    label: Some(label.to_string()),
                    fixed_split: FixedSplit::TrainPool,
                }
            }
        };
        let doc = match forced_split {
            Some(split) => RawDocument {
                fixed_split: split,
                ..doc
            },
            None => doc,
        };
        if doc.tokens.is_empty() {
            return Err(Error::EmptyDocument(doc.id));
        }
        documents.push(doc);
    }
    Ok(documents)
}

/// Loads one corpus file. JSONL records may carry their own split tag; TSV
/// rows default to the train pool (see [`load_corpus_pair`] for the
/// companion test file convention).
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<TokenizedCorpus> {
    TokenizedCorpus::from_documents(read_documents(path, format, None)?)
}

/// Loads a train-pool file plus an optional companion test file of the same
/// format. Documents from the companion file are tagged as test regardless
/// of any split field.
pub fn load_corpus_pair(
    train_path: &Path,
    test_path: Option<&Path>,
    format: CorpusFormat,
) -> Result<TokenizedCorpus> {
    let mut documents = read_documents(train_path, format, None)?;
    if let Some(test_path) = test_path {
        documents.extend(read_documents(test_path, format, Some(FixedSplit::Test))?);
    }
    TokenizedCorpus::from_documents(documents)
}

/// The frequency-thresholded word set, indexed densely from 0 in first
/// occurrence order.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    corpus_freq: Vec<u64>,
    doc_freq: Vec<u64>,
    min_frequency: u64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn corpus_frequency(&self, index: usize) -> u64 {
        self.corpus_freq[index]
    }

    /// Number of documents containing the word at least once.
    pub fn doc_frequency(&self, index: usize) -> u64 {
        self.doc_freq[index]
    }

    pub fn min_frequency(&self) -> u64 {
        self.min_frequency
    }
}

/// Counts words over the entire corpus (transductive: train, unlabeled, and
/// test documents all contribute) and keeps those with corpus frequency at
/// least `min_frequency`.
pub fn build_vocabulary(corpus: &TokenizedCorpus, min_frequency: u64) -> Result<Vocabulary> {
    // First pass: corpus and document frequencies in first-occurrence order.
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
    for doc in corpus.documents() {
        let mut seen_in_doc: HashSet<&str> = HashSet::new();
        for token in &doc.tokens {
            match counts.entry(token.clone()) {
                Entry::Occupied(mut e) => e.get_mut().0 += 1,
                Entry::Vacant(e) => {
                    e.insert((1, 0));
                    order.push(token.clone());
                }
            }
            if seen_in_doc.insert(token.as_str()) {
                counts.get_mut(token.as_str()).expect("just inserted").1 += 1;
            }
        }
    }

    let mut words = Vec::new();
    let mut corpus_freq = Vec::new();
    let mut doc_freq = Vec::new();
    for word in order {
        let &(cf, df) = counts.get(&word).expect("counted");
        if cf >= min_frequency {
            words.push(word);
            corpus_freq.push(cf);
            doc_freq.push(df);
        }
    }
    if words.is_empty() {
        return Err(Error::EmptyVocabulary(min_frequency));
    }
    let index = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    Ok(Vocabulary {
        words,
        index,
        corpus_freq,
        doc_freq,
        min_frequency,
    })
}

/// Per-document role during training and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Unlabeled,
    Test,
}

/// How the labeled budget is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Sample floor(fraction * pool) train documents and equally many
    /// validation documents; the rest of the pool becomes unlabeled nodes.
    LowResource,
    /// Sample floor(fraction * pool) train documents and use the remaining
    /// labeled pool as validation; no unlabeled nodes.
    HighResource,
}

/// The materialized split: one tag per document, in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    tags: Vec<SplitTag>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn tag(&self, doc: usize) -> SplitTag {
        self.tags[doc]
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn docs_with(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == tag).then_some(i))
            .collect()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

/// Samples the train/validation/unlabeled partition of the train pool.
///
/// Only labeled pool documents are eligible for the train and validation
/// sets; pool documents without a label always become unlabeled nodes. Test
/// documents keep their fixed tag. `budget_override` fixes absolute
/// (train, validation) counts and leaves the rest of the pool unlabeled.
/// `stratified` switches the uniform draw to per-class proportional
/// allocation.
pub fn assign_splits(
    corpus: &TokenizedCorpus,
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
    budget_override: Option<(usize, usize)>,
    stratified: bool,
) -> Result<SplitAssignment> {
    if budget_override.is_none() {
        if !(train_fraction > 0.0) || train_fraction > 1.0 {
            return Err(Error::Config(format!(
                "train_fraction {train_fraction} outside (0, 1]"
            )));
        }
    }

    let docs = corpus.documents();
    let labeled_pool: Vec<usize> = docs
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            (d.fixed_split == FixedSplit::TrainPool && d.label.is_some()).then_some(i)
        })
        .collect();
    let pool_size = labeled_pool.len();

    let (n_train, n_val) = match budget_override {
        Some((t, v)) => (t, v),
        None => {
            let t = (train_fraction * pool_size as f64).floor() as usize;
            let v = match mode {
                SplitMode::LowResource => t,
                SplitMode::HighResource => pool_size.saturating_sub(t),
            };
            (t, v)
        }
    };
    if n_train == 0 || n_train + n_val > pool_size {
        return Err(Error::SplitInfeasible {
            requested: n_train,
            requested_val: n_val,
            pool: pool_size,
        });
    }

    let mut rng = stream_rng(seed, rng::stream::SPLIT);
    let mut train_docs: Vec<usize> = Vec::with_capacity(n_train);
    let mut val_docs: Vec<usize> = Vec::with_capacity(n_val);

    if stratified {
        // Group the labeled pool by class, in lexicographic class order.
        let mut by_class: Vec<(String, Vec<usize>)> = Vec::new();
        {
            let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
            for &i in &labeled_pool {
                map.entry(docs[i].label.as_deref().expect("labeled"))
                    .or_default()
                    .push(i);
            }
            let mut classes: Vec<&str> = map.keys().copied().collect();
            classes.sort_unstable();
            for c in classes {
                by_class.push((c.to_string(), map.remove(c).expect("present")));
            }
        }
        let quotas_train = proportional_quotas(&by_class, n_train, pool_size);
        let quotas_val = proportional_quotas(&by_class, n_val, pool_size);
        for (k, (_, members)) in by_class.iter().enumerate() {
            let take_t = quotas_train[k];
            let take_v = quotas_val[k];
            if take_t + take_v > members.len() {
                return Err(Error::SplitInfeasible {
                    requested: n_train,
                    requested_val: n_val,
                    pool: pool_size,
                });
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            train_docs.extend_from_slice(&members[..take_t]);
            val_docs.extend_from_slice(&members[take_t..take_t + take_v]);
        }
    } else {
        let mut shuffled = labeled_pool.clone();
        shuffled.shuffle(&mut rng);
        train_docs.extend_from_slice(&shuffled[..n_train]);
        val_docs.extend_from_slice(&shuffled[n_train..n_train + n_val]);
    }

    let mut tags = vec![SplitTag::Unlabeled; docs.len()];
    for (i, doc) in docs.iter().enumerate() {
        if doc.fixed_split == FixedSplit::Test {
            tags[i] = SplitTag::Test;
        }
    }
    for &i in &train_docs {
        tags[i] = SplitTag::Train;
    }
    for &i in &val_docs {
        tags[i] = SplitTag::Validation;
    }
    if mode == SplitMode::HighResource && budget_override.is_none() {
        // Remaining labeled pool documents all become validation.
        for &i in &labeled_pool {
            if tags[i] == SplitTag::Unlabeled {
                tags[i] = SplitTag::Validation;
            }
        }
    }

    Ok(SplitAssignment {
        tags,
        train_fraction,
        seed,
    })
}

/// Largest-remainder allocation of `total` slots over class sizes.
fn proportional_quotas(by_class: &[(String, Vec<usize>)], total: usize, pool: usize) -> Vec<usize> {
    let mut quotas: Vec<usize> = Vec::with_capacity(by_class.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(by_class.len());
    let mut assigned = 0;
    for (k, (_, members)) in by_class.iter().enumerate() {
        let exact = total as f64 * members.len() as f64 / pool as f64;
        let floor = exact.floor() as usize;
        quotas.push(floor);
        assigned += floor;
        remainders.push((exact - floor as f64, k));
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, k) in remainders.iter().take(total.saturating_sub(assigned)) {
        quotas[k] += 1;
    }
    quotas
}

/// Dense class indexing over the distinct labels of labeled documents,
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIndex {
    classes: Vec<String>,
}

impl ClassIndex {
    pub fn from_corpus(corpus: &TokenizedCorpus) -> Self {
        let mut classes: Vec<String> = corpus
            .documents()
            .iter()
            .filter_map(|d| d.label.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        classes.sort_unstable();
        ClassIndex { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    /// Class index per document, in corpus order; None for unlabeled docs.
    pub fn labels_for(&self, corpus: &TokenizedCorpus) -> Vec<Option<usize>> {
        corpus
            .documents()
            .iter()
            .map(|d| d.label.as_deref().and_then(|l| self.index_of(l)))
            .collect()
    }
}
