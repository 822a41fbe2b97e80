//! The three loss components and the triplet sampler.
//!
//! - Supervised cross-entropy over train documents, optionally gated by a
//!   log-schedule annealing threshold that masks examples the model already
//!   predicts confidently.
//! - 2-hop neighborhood regularization: for an anchor document, a bridge
//!   word is drawn from its word neighbors proportionally to edge weight,
//!   a positive document from the bridge's neighborhood, and a negative
//!   document from outside it; a triplet margin loss on the final hidden
//!   representations pulls 2-hop neighbors together.
//! - Adaptive pseudo-labeling: confident argmax predictions on unlabeled
//!   documents become targets, each weighted by the inverse size of its
//!   pseudo-class.
//!
//! Every function returns the loss value together with the exact gradient
//! its caller must feed into the model's backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{cross_entropy_row, euclidean_distance, DenseMatrix};
use crate::corpus::SplitTag;
use crate::graph::WordDocumentGraph;
use crate::{Error, Result};

/// One sampled 2-hop triplet, in graph node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletSample {
    /// Anchor document node u.
    pub anchor: usize,
    /// Bridge word node v with A[u][v] > 0.
    pub bridge: usize,
    /// Positive document node drawn from N(v).
    pub positive: usize,
    /// Negative document node drawn from outside N(v).
    pub negative: usize,
}

/// Log annealing schedule for the supervised-loss confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsaSchedule {
    pub total_steps: usize,
    pub n_classes: usize,
}

impl TsaSchedule {
    /// threshold(t) = alpha_t (1 - 1/C) + 1/C with
    /// alpha_t = 1 - exp(-(t/T) * 5). At t = 0 this is exactly 1/C (chance
    /// level); it grows monotonically toward just under 1.
    pub fn threshold(&self, step: usize) -> f64 {
        debug_assert!(step <= self.total_steps);
        let c = self.n_classes as f64;
        let t = step as f64 / self.total_steps as f64;
        let alpha = 1.0 - (-t * 5.0).exp();
        alpha * (1.0 - 1.0 / c) + 1.0 / c
    }
}

/// Index of the k-th (0-based) value in [0, n) that is absent from the
/// sorted slice `present`.
fn kth_absent(present: &[u32], k: usize, n: usize) -> usize {
    let (mut lo, mut hi) = (0usize, n);
    // Invariant: the k-th absent value is in [lo, hi).
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let present_le = present.partition_point(|&p| (p as usize) <= mid);
        let absent_le = mid + 1 - present_le;
        if absent_le >= k + 1 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Draws one triplet per anchor. Anchors without word neighbors are skipped
/// with a warning (documents emptied by the vocabulary threshold), and so
/// are anchors whose bridge word touches every document (no valid negative
/// exists; resampling the bridge would bias its distribution).
///
/// Bridge words are drawn from the anchor's word neighbors with probability
/// proportional to the raw edge weight; positives uniformly from the
/// bridge's document neighbors; negatives uniformly from the complement.
pub fn sample_triplets<R: Rng>(
    graph: &WordDocumentGraph,
    anchor_pool: &[usize],
    rng: &mut R,
) -> Vec<TripletSample> {
    let n_docs = graph.indexing().n_docs;
    let adj = graph.adjacency();
    let mut triplets = Vec::with_capacity(anchor_pool.len());
    for &anchor in anchor_pool {
        debug_assert!(anchor < n_docs, "anchor {anchor} is not a document node");
        let (cols, vals) = adj.row(anchor);
        // Document rows carry only the self-loop and word neighbors, and
        // columns are sorted, so word neighbors form the row's suffix.
        let word_start = cols.partition_point(|&c| (c as usize) < n_docs);
        let (word_cols, word_vals) = (&cols[word_start..], &vals[word_start..]);
        if word_cols.is_empty() {
            log::warn!("anchor document node {anchor} has no word neighbors; skipped");
            continue;
        }
        let total: f64 = word_vals.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = word_cols.len() - 1;
        for (k, &w) in word_vals.iter().enumerate() {
            draw -= w;
            if draw < 0.0 {
                chosen = k;
                break;
            }
        }
        let bridge = word_cols[chosen] as usize;

        let (bridge_cols, _) = adj.row(bridge);
        let doc_end = bridge_cols.partition_point(|&c| (c as usize) < n_docs);
        let doc_neighbors = &bridge_cols[..doc_end];
        debug_assert!(!doc_neighbors.is_empty());
        let positive = doc_neighbors[rng.gen_range(0..doc_neighbors.len())] as usize;

        let complement = n_docs - doc_neighbors.len();
        if complement == 0 {
            continue;
        }
        let negative = kth_absent(doc_neighbors, rng.gen_range(0..complement), n_docs);
        triplets.push(TripletSample {
            anchor,
            bridge,
            positive,
            negative,
        });
    }
    triplets
}

/// Triplet margin loss mean(max{d(u, u_p) - d(u, u_n) + margin, 0}) over
/// Euclidean distances between rows of z, with its gradient on z. Inactive
/// triplets (hinge at or below zero) contribute nothing; the subgradient at
/// zero distance is zero.
pub fn loss_2nr(
    z: &DenseMatrix,
    triplets: &[TripletSample],
    margin: f64,
) -> Result<(f64, DenseMatrix)> {
    if margin < 0.0 {
        return Err(Error::Config(format!("negative triplet margin {margin}")));
    }
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    let inv_t = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    for t in triplets {
        let (u, up, un) = (z.row(t.anchor), z.row(t.positive), z.row(t.negative));
        let d_pos = euclidean_distance(u, up);
        let d_neg = euclidean_distance(u, un);
        let hinge = d_pos - d_neg + margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge * inv_t;
        // d d_pos / d z_u = (z_u - z_up)/d_pos, and the mirror for d_neg.
        for c in 0..z.cols() {
            let dp = if d_pos > 0.0 {
                (u[c] - up[c]) / d_pos
            } else {
                0.0
            };
            let dn = if d_neg > 0.0 {
                (u[c] - un[c]) / d_neg
            } else {
                0.0
            };
            grad.set(t.anchor, c, grad.get(t.anchor, c) + inv_t * (dp - dn));
            grad.set(t.positive, c, grad.get(t.positive, c) - inv_t * dp);
            grad.set(t.negative, c, grad.get(t.negative, c) + inv_t * dn);
        }
    }
    Ok((loss, grad))
}

fn guarded_cross_entropy(
    logits: &DenseMatrix,
    examples: &[(usize, usize)],
    tags: &[SplitTag],
    expected: SplitTag,
) -> Result<Vec<(usize, usize, f64, Vec<f64>)>> {
    let mut rows = Vec::with_capacity(examples.len());
    for &(doc, class) in examples {
        if tags[doc] != expected {
            return Err(Error::LabelLeakage {
                node: doc,
                tag: tags[doc],
                expected,
            });
        }
        let (loss, grad) = cross_entropy_row(logits.row(doc), class)?;
        rows.push((doc, class, loss, grad));
    }
    Ok(rows)
}

/// Plain mean cross-entropy over the given (doc row, class) examples, all
/// of which must carry `expected` in `tags` (the leakage guard). Used for
/// the validation loss. Returns the mean loss and the gradient on logits.
pub fn mean_cross_entropy(
    logits: &DenseMatrix,
    examples: &[(usize, usize)],
    tags: &[SplitTag],
    expected: SplitTag,
) -> Result<(f64, DenseMatrix)> {
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    if examples.is_empty() {
        return Ok((0.0, grad));
    }
    let rows = guarded_cross_entropy(logits, examples, tags, expected)?;
    let inv = 1.0 / rows.len() as f64;
    let mut total = 0.0;
    for (doc, _, loss, g) in rows {
        total += loss * inv;
        for (c, gv) in g.iter().enumerate() {
            grad.set(doc, c, grad.get(doc, c) + gv * inv);
        }
    }
    Ok((total, grad))
}

/// Supervised loss over train documents. With `threshold = Some(thr)`
/// (annealing active), examples whose predicted probability of the true
/// class strictly exceeds thr are masked out; the loss is the sum over
/// unmasked examples divided by their count (zero when all are masked).
pub fn loss_supervised(
    logits: &DenseMatrix,
    examples: &[(usize, usize)],
    tags: &[SplitTag],
    threshold: Option<f64>,
) -> Result<(f64, DenseMatrix)> {
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    if examples.is_empty() {
        return Ok((0.0, grad));
    }
    let rows = guarded_cross_entropy(logits, examples, tags, SplitTag::Train)?;
    let kept: Vec<&(usize, usize, f64, Vec<f64>)> = match threshold {
        None => rows.iter().collect(),
        Some(thr) => rows
            .iter()
            .filter(|(_, _, loss, _)| {
                // loss = -ln p_true, so p_true > thr <=> loss < -ln thr.
                let p_true = (-loss).exp();
                p_true <= thr
            })
            .collect(),
    };
    if kept.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / kept.len() as f64;
    let mut total = 0.0;
    for (doc, _, loss, g) in kept {
        total += loss * inv;
        for (c, gv) in g.iter().enumerate() {
            grad.set(*doc, c, grad.get(*doc, c) + gv * inv);
        }
    }
    Ok((total, grad))
}

/// Which side of the confidence threshold keeps an unlabeled node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDirection {
    /// Keep nodes whose max predicted probability is >= beta.
    #[default]
    GreaterEqual,
    /// Keep nodes whose max predicted probability is <= beta (the literal
    /// published formula; contradicts the surrounding prose).
    LessEqual,
}

/// Pseudo-label loss over the unlabeled document set. Each eligible node's
/// argmax prediction becomes its target if its confidence passes beta; the
/// cross-entropy of node i is weighted by 1/N_i where N_i counts included
/// nodes sharing i's pseudo-label, so every represented pseudo-class
/// contributes exactly weight 1. The pseudo-target is a constant: no
/// gradient flows through the argmax.
pub fn loss_pseudo(
    logits: &DenseMatrix,
    eligible: &[usize],
    tags: &[SplitTag],
    beta: f64,
    direction: ThresholdDirection,
) -> Result<(f64, DenseMatrix)> {
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let n_classes = logits.cols();
    let mut included: Vec<(usize, usize)> = Vec::new();
    for &doc in eligible {
        if tags[doc] != SplitTag::Unlabeled {
            return Err(Error::LabelLeakage {
                node: doc,
                tag: tags[doc],
                expected: SplitTag::Unlabeled,
            });
        }
        let row = logits.row(doc);
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (c, &v) in row.iter().enumerate() {
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        let lse = crate::compute::log_sum_exp(row);
        let p_max = (best_v - lse).exp();
        let keep = match direction {
            ThresholdDirection::GreaterEqual => p_max >= beta,
            ThresholdDirection::LessEqual => p_max <= beta,
        };
        if keep {
            included.push((doc, best));
        }
    }
    if included.is_empty() {
        return Ok((0.0, grad));
    }
    let mut class_counts = vec![0usize; n_classes];
    for &(_, class) in &included {
        class_counts[class] += 1;
    }
    let mut total = 0.0;
    for (doc, class) in included {
        let weight = 1.0 / class_counts[class] as f64;
        let (loss, g) = cross_entropy_row(logits.row(doc), class)?;
        total += weight * loss;
        for (c, gv) in g.iter().enumerate() {
            grad.set(doc, c, grad.get(doc, c) + gv * weight);
        }
    }
    Ok((total, grad))
}

/// Combines the components: L = L_sup + lambda_2nr * L_2nr
/// + lambda_pseudo * L_pse, with disabled components contributing exactly
/// zero. Weights must be nonnegative.
pub fn total_loss(
    sup: f64,
    l2nr: Option<f64>,
    pseudo: Option<f64>,
    lambda_2nr: f64,
    lambda_pseudo: f64,
) -> Result<f64> {
    if lambda_2nr < 0.0 {
        return Err(Error::NegativeLossWeight(lambda_2nr));
    }
    if lambda_pseudo < 0.0 {
        return Err(Error::NegativeLossWeight(lambda_pseudo));
    }
    let mut total = sup;
    if let Some(l) = l2nr {
        total += lambda_2nr * l;
    }
    if let Some(l) = pseudo {
        total += lambda_pseudo * l;
    }
    Ok(total)
}
