//! Word-document graph construction and symmetric normalization.
//!
//! Nodes are documents followed by vocabulary words. Document-word edges
//! carry TF-IDF weights; word-word edges (optional, mode-dependent) carry
//! positive PMI computed over sliding token windows; every node gets a unit
//! self-loop. The normalized adjacency D^(-1/2) A D^(-1/2) is what the model
//! consumes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::DenseMatrix;
use crate::corpus::{TokenizedCorpus, Vocabulary};
use crate::{Error, Result};

/// Dense node numbering: documents occupy [0, n_docs), words occupy
/// [n_docs, n_docs + n_words).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIndexing {
    pub n_docs: usize,
    pub n_words: usize,
}

impl NodeIndexing {
    pub fn n_nodes(&self) -> usize {
        self.n_docs + self.n_words
    }

    pub fn doc_node(&self, doc: usize) -> usize {
        debug_assert!(doc < self.n_docs);
        doc
    }

    pub fn word_node(&self, word: usize) -> usize {
        debug_assert!(word < self.n_words);
        self.n_docs + word
    }

    pub fn is_doc_node(&self, node: usize) -> bool {
        node < self.n_docs
    }

    pub fn word_of(&self, node: usize) -> Option<usize> {
        (node >= self.n_docs && node < self.n_nodes()).then(|| node - self.n_docs)
    }
}

/// Compressed sparse row matrix with f64 values and u32 column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triples. The triples are sorted here;
    /// duplicates, out-of-range indices, and non-finite values are errors.
    pub fn from_triples(
        n_rows: usize,
        n_cols: usize,
        mut triples: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if n_cols > u32::MAX as usize {
            return Err(Error::GraphConstruction(format!(
                "column count {n_cols} exceeds u32 index range"
            )));
        }
        triples.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triples.len());
        let mut values = Vec::with_capacity(triples.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &triples {
            if r >= n_rows || c >= n_cols {
                return Err(Error::GraphConstruction(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::GraphConstruction(format!(
                    "non-finite value {v} at ({r}, {c})"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::GraphConstruction(format!(
                    "duplicate entry at ({r}, {c})"
                )));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c as u32);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Value at (r, c), zero when the entry is not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    /// Exact symmetry check: every stored (r, c, v) has a stored (c, r, v).
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .all(|(&c, &v)| self.get(c as usize, r) == v)
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut dense = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense.set(r, c as usize, v);
            }
        }
        dense
    }
}

/// Which edge families the graph carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// TF-IDF document-word edges and self-loops only.
    DocWordOnly,
    /// Additionally, positive-PMI word-word edges.
    WithWordWord,
}

/// How PMI window statistics count repeated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmiCounting {
    /// A word (or pair) counts once per window it appears in.
    #[default]
    Presence,
    /// Occurrences multiply: a window with word i appearing a times and j
    /// appearing b times adds a to #W(i), and a*b to #W(i, j).
    Multiplicity,
}

/// The assembled graph: raw adjacency per the piecewise edge-weight rule and
/// its symmetric-normalized counterpart.
#[derive(Debug, Clone)]
pub struct WordDocumentGraph {
    indexing: NodeIndexing,
    mode: GraphMode,
    adjacency: CsrMatrix,
    normalized: CsrMatrix,
}

impl WordDocumentGraph {
    pub fn indexing(&self) -> NodeIndexing {
        self.indexing
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn normalized(&self) -> &CsrMatrix {
        &self.normalized
    }
}

/// TF-IDF weights for every (doc, word) pair with positive weight:
/// tf(word, doc) * ln(N_docs / df(word)). Raw term counts, no smoothing;
/// words present in every document get idf 0 and emit no edge.
pub fn tfidf_edges(corpus: &TokenizedCorpus, vocab: &Vocabulary) -> Vec<(usize, usize, f64)> {
    let n_docs = corpus.len() as f64;
    let mut edges = Vec::new();
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for (d, doc) in corpus.documents().iter().enumerate() {
        counts.clear();
        for token in &doc.tokens {
            if let Some(w) = vocab.index_of(token) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        for (&w, &tf) in &counts {
            let idf = (n_docs / vocab.doc_frequency(w) as f64).ln();
            let weight = tf as f64 * idf;
            if weight > 0.0 {
                edges.push((d, w, weight));
            }
        }
    }
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges
}

/// Number of sliding windows a document of `len` tokens contributes.
pub(crate) fn window_count(len: usize, window_size: usize) -> usize {
    if len <= window_size {
        1
    } else {
        len - window_size + 1
    }
}

/// Positive-PMI word pairs from sliding windows of `window_size` tokens
/// (stride 1, never crossing document boundaries; a document shorter than
/// the window yields exactly one window). Returns each unordered pair once
/// as (i, j) with i < j.
pub fn pmi_edges(
    corpus: &TokenizedCorpus,
    vocab: &Vocabulary,
    window_size: usize,
    counting: PmiCounting,
) -> Vec<(usize, usize, f64)> {
    assert!(window_size >= 1, "window_size must be at least 1");
    let mut n_windows: u64 = 0;
    let mut single = vec![0u64; vocab.len()];
    let mut pair: HashMap<u64, u64> = HashMap::new();
    // Per-window scratch: distinct word ids and their in-window counts.
    let mut buf: Vec<(u32, u64)> = Vec::with_capacity(window_size);

    for doc in corpus.documents() {
        let ids: Vec<Option<u32>> = doc
            .tokens
            .iter()
            .map(|t| vocab.index_of(t).map(|w| w as u32))
            .collect();
        let wins = window_count(ids.len(), window_size);
        n_windows += wins as u64;
        for start in 0..wins {
            let end = (start + window_size).min(ids.len());
            buf.clear();
            for id in ids[start..end].iter().flatten() {
                match buf.iter_mut().find(|(w, _)| w == id) {
                    Some((_, c)) => *c += 1,
                    None => buf.push((*id, 1)),
                }
            }
            for (k, &(wi, ci)) in buf.iter().enumerate() {
                let unit = match counting {
                    PmiCounting::Presence => 1,
                    PmiCounting::Multiplicity => ci,
                };
                single[wi as usize] += unit;
                for &(wj, cj) in &buf[k + 1..] {
                    let joint = match counting {
                        PmiCounting::Presence => 1,
                        PmiCounting::Multiplicity => ci * cj,
                    };
                    let (lo, hi) = if wi < wj { (wi, wj) } else { (wj, wi) };
                    *pair.entry((lo as u64) << 32 | hi as u64).or_insert(0) += joint;
                }
            }
        }
    }

    let total = n_windows as f64;
    let mut edges: Vec<(usize, usize, f64)> = pair
        .into_iter()
        .filter_map(|(key, joint)| {
            let i = (key >> 32) as usize;
            let j = (key & 0xffff_ffff) as usize;
            let pmi = (joint as f64 * total / (single[i] as f64 * single[j] as f64)).ln();
            (pmi > 0.0).then_some((i, j, pmi))
        })
        .collect();
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges
}

/// Assembles the symmetric adjacency with a unit diagonal from edge lists
/// and normalizes it. Word-word edges are supplied exactly when the mode
/// keeps them; duplicate edges are construction bugs and error out.
pub fn build_adjacency(
    indexing: NodeIndexing,
    doc_word_edges: &[(usize, usize, f64)],
    word_word_edges: Option<&[(usize, usize, f64)]>,
) -> Result<WordDocumentGraph> {
    let n = indexing.n_nodes();
    let mode = match word_word_edges {
        Some(_) => GraphMode::WithWordWord,
        None => GraphMode::DocWordOnly,
    };
    let mut triples = Vec::with_capacity(
        n + 2 * (doc_word_edges.len() + word_word_edges.map_or(0, |e| e.len())),
    );
    for i in 0..n {
        triples.push((i, i, 1.0));
    }
    for &(d, w, weight) in doc_word_edges {
        if d >= indexing.n_docs || w >= indexing.n_words {
            return Err(Error::GraphConstruction(format!(
                "doc-word edge ({d}, {w}) outside {} docs x {} words",
                indexing.n_docs, indexing.n_words
            )));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::GraphConstruction(format!(
                "doc-word edge ({d}, {w}) has non-positive weight {weight}"
            )));
        }
        triples.push((indexing.doc_node(d), indexing.word_node(w), weight));
        triples.push((indexing.word_node(w), indexing.doc_node(d), weight));
    }
    if let Some(edges) = word_word_edges {
        for &(i, j, weight) in edges {
            if i >= indexing.n_words || j >= indexing.n_words {
                return Err(Error::GraphConstruction(format!(
                    "word-word edge ({i}, {j}) outside {} words",
                    indexing.n_words
                )));
            }
            if i == j {
                return Err(Error::GraphConstruction(format!(
                    "word-word self-pair ({i}, {j}) collides with the diagonal"
                )));
            }
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(Error::GraphConstruction(format!(
                    "word-word edge ({i}, {j}) has non-positive weight {weight}"
                )));
            }
            triples.push((indexing.word_node(i), indexing.word_node(j), weight));
            triples.push((indexing.word_node(j), indexing.word_node(i), weight));
        }
    }
    let adjacency = CsrMatrix::from_triples(n, n, triples)?;
    let normalized = normalize_adjacency(&adjacency)?;
    Ok(WordDocumentGraph {
        indexing,
        mode,
        adjacency,
        normalized,
    })
}

/// Symmetric normalization D^(-1/2) A D^(-1/2) with D the diagonal degree
/// matrix (row sums) of A. The scale for entry (i, j) is computed as the
/// single product inv_sqrt_deg[i] * inv_sqrt_deg[j], so the result is
/// bitwise symmetric whenever A is.
pub fn normalize_adjacency(adjacency: &CsrMatrix) -> Result<CsrMatrix> {
    let n = adjacency.n_rows();
    let mut inv_sqrt_deg = Vec::with_capacity(n);
    for r in 0..n {
        let deg = adjacency.row_sum(r);
        if !(deg > 0.0) {
            return Err(Error::GraphConstruction(format!(
                "row {r} has non-positive degree {deg}; unit diagonal missing"
            )));
        }
        inv_sqrt_deg.push(1.0 / deg.sqrt());
    }
    let mut normalized = adjacency.clone();
    for r in 0..n {
        let span = normalized.row_ptr[r]..normalized.row_ptr[r + 1];
        for k in span {
            let c = normalized.col_idx[k] as usize;
            let scale = inv_sqrt_deg[r] * inv_sqrt_deg[c];
            normalized.values[k] *= scale;
        }
    }
    Ok(normalized)
}

const GRAPH_MAGIC: &[u8; 4] = b"WDGR";
const GRAPH_VERSION: u32 = 1;

impl WordDocumentGraph {
    /// Writes the raw adjacency plus header to a binary artifact. The
    /// normalized matrix is recomputed on load.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
        write(GRAPH_MAGIC)?;
        write(&GRAPH_VERSION.to_le_bytes())?;
        write(&[match self.mode {
            GraphMode::DocWordOnly => 0u8,
            GraphMode::WithWordWord => 1u8,
        }])?;
        write(&(self.indexing.n_docs as u64).to_le_bytes())?;
        write(&(self.indexing.n_words as u64).to_le_bytes())?;
        write(&(self.adjacency.nnz() as u64).to_le_bytes())?;
        for &p in &self.adjacency.row_ptr {
            write(&(p as u64).to_le_bytes())?;
        }
        for &c in &self.adjacency.col_idx {
            write(&c.to_le_bytes())?;
        }
        for &v in &self.adjacency.values {
            write(&v.to_le_bytes())?;
        }
        w.into_inner()
            .map_err(|e| Error::GraphConstruction(format!("flush failed: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let bad = |reason: String| Error::GraphConstruction(format!("graph artifact: {reason}"));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != GRAPH_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let version = u32::from_le_bytes(u32buf);
        if version != GRAPH_VERSION {
            return Err(bad(format!(
                "unsupported version {version} (expected {GRAPH_VERSION})"
            )));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(io_err)?;
        let mode = match byte[0] {
            0 => GraphMode::DocWordOnly,
            1 => GraphMode::WithWordWord,
            other => return Err(bad(format!("unknown mode byte {other}"))),
        };
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let n_docs = read_u64(&mut r)? as usize;
        let n_words = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let indexing = NodeIndexing { n_docs, n_words };
        let n = indexing.n_nodes();

        let mut row_ptr = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            row_ptr.push(read_u64(&mut r)? as usize);
        }
        if row_ptr.first() != Some(&0) || row_ptr.last() != Some(&nnz) {
            return Err(bad("row offsets do not span nnz".to_string()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad("row offsets not monotone".to_string()));
        }
        let mut col_idx = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            r.read_exact(&mut u32buf).map_err(io_err)?;
            let c = u32::from_le_bytes(u32buf);
            if c as usize >= n {
                return Err(bad(format!("column {c} out of range {n}")));
            }
            col_idx.push(c);
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            let v = f64::from_bits(u64::from_le_bytes(u64buf));
            if !v.is_finite() {
                return Err(bad(format!("non-finite stored value {v}")));
            }
            values.push(v);
        }
        let adjacency = CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr,
            col_idx,
            values,
        };
        for r in 0..n {
            let (cols, _) = adjacency.row(r);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(format!("row {r} columns not strictly increasing")));
            }
        }
        if !adjacency.is_symmetric() {
            return Err(bad("stored adjacency is not symmetric".to_string()));
        }
        let normalized = normalize_adjacency(&adjacency)?;
        Ok(WordDocumentGraph {
            indexing,
            mode,
            adjacency,
            normalized,
        })
    }
}

/// End-to-end construction from a corpus: vocabulary lookups, TF-IDF edges,
/// optional PMI edges, assembly, and normalization.
pub fn build_graph(
    corpus: &TokenizedCorpus,
    vocab: &Vocabulary,
    mode: GraphMode,
    window_size: usize,
    counting: PmiCounting,
) -> Result<WordDocumentGraph> {
    let indexing = NodeIndexing {
        n_docs: corpus.len(),
        n_words: vocab.len(),
    };
    let doc_word = tfidf_edges(corpus, vocab);
    let word_word = match mode {
        GraphMode::DocWordOnly => None,
        GraphMode::WithWordWord => Some(pmi_edges(corpus, vocab, window_size, counting)),
    };
    build_adjacency(indexing, &doc_word, word_word.as_deref())
}
