//! Shared fixtures for the integration suites: random corpus generation,
//! independent brute-force oracles for the graph weights, finite-difference
//! gradient checks, and sampler distribution checks. Everything here is
//! deliberately written from the definitions, with different data
//! structures and arithmetic order than the library, so agreement is
//! evidence rather than tautology.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use textgcn::compute::{
    add_bias_rows, column_sums, cross_entropy_row, euclidean_distance,
    euclidean_distance_backward, log_sum_exp, matmul, matmul_a_bt, matmul_at_b, relu,
    relu_backward, softmax_rows, spmm, DenseMatrix, DropoutMask,
};
use textgcn::corpus::{FixedSplit, RawDocument, SplitTag, TokenizedCorpus, Vocabulary};
use textgcn::graph::{CsrMatrix, GraphMode, PmiCounting};
use textgcn::model::{backward, forward_train, init_params};
use textgcn::objectives::{
    loss_2nr, loss_pseudo, loss_supervised, sample_triplets, total_loss, ThresholdDirection,
    TripletSample,
};
use textgcn::trainer::{prepare, Prepared, Preset, TrainConfig};

pub const WORD_POOL: [&str; 24] = [
    "alder", "birch", "cedar", "dogwood", "elm", "fir", "ginkgo", "hazel", "ironwood", "juniper",
    "katsura", "larch", "maple", "nutmeg", "oak", "pine", "quince", "rowan", "spruce", "tamarack",
    "umbrella", "viburnum", "willow", "yew",
];

/// A random labeled corpus: `n_docs` documents of 1..=max_len tokens from a
/// `pool_size`-word pool, labels over `n_classes` classes, and roughly a
/// quarter of the documents carrying the fixed test split when requested.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    n_docs: usize,
    pool_size: usize,
    max_len: usize,
    n_classes: usize,
    with_test: bool,
) -> TokenizedCorpus {
    assert!(pool_size <= WORD_POOL.len());
    let docs = (0..n_docs)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let tokens = (0..len)
                .map(|_| WORD_POOL[rng.gen_range(0..pool_size)].to_string())
                .collect();
            let is_test = with_test && i >= n_docs - n_docs / 4;
            RawDocument {
                id: format!("d{i}"),
                tokens,
                label: Some(format!("c{}", rng.gen_range(0..n_classes))),
                fixed_split: if is_test {
                    FixedSplit::Test
                } else {
                    FixedSplit::TrainPool
                },
            }
        })
        .collect();
    TokenizedCorpus::from_documents(docs).expect("generated corpus is valid")
}

/// The ten-document linearly separable corpus used by the convergence
/// criterion: two classes over disjoint vocabularies, six train-pool and
/// four test documents.
pub fn separable_corpus() -> TokenizedCorpus {
    let doc = |id: &str, text: &str, label: &str, split: FixedSplit| RawDocument {
        id: id.to_string(),
        tokens: text.split_whitespace().map(str::to_string).collect(),
        label: Some(label.to_string()),
        fixed_split: split,
    };
    let docs = vec![
        doc("f0", "apple banana", "fruit", FixedSplit::TrainPool),
        doc("f1", "banana cherry apple", "fruit", FixedSplit::TrainPool),
        doc("f2", "cherry apple", "fruit", FixedSplit::TrainPool),
        doc("t0", "hammer wrench", "tools", FixedSplit::TrainPool),
        doc("t1", "wrench pliers hammer", "tools", FixedSplit::TrainPool),
        doc("t2", "pliers hammer", "tools", FixedSplit::TrainPool),
        doc("ft0", "apple cherry banana", "fruit", FixedSplit::Test),
        doc("ft1", "banana apple", "fruit", FixedSplit::Test),
        doc("tt0", "hammer pliers wrench", "tools", FixedSplit::Test),
        doc("tt1", "wrench hammer", "tools", FixedSplit::Test),
    ];
    TokenizedCorpus::from_documents(docs).expect("separable corpus is valid")
}

pub fn separable_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        hidden: 16,
        min_frequency: 1,
        budget_override: Some((2, 2)),
        stratified: true,
        seed: 7,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// TF-IDF weights recomputed straight from the definition, with document
/// frequencies recounted by scanning every document.
pub fn tfidf_oracle(
    corpus: &TokenizedCorpus,
    vocab: &Vocabulary,
) -> BTreeMap<(usize, usize), f64> {
    let docs = corpus.documents();
    let n = docs.len() as f64;
    let mut out = BTreeMap::new();
    for (d, doc) in docs.iter().enumerate() {
        for w in 0..vocab.len() {
            let word = vocab.word(w);
            let tf = doc.tokens.iter().filter(|t| t.as_str() == word).count();
            if tf == 0 {
                continue;
            }
            let df = docs
                .iter()
                .filter(|dd| dd.tokens.iter().any(|t| t.as_str() == word))
                .count();
            if df < docs.len() {
                out.insert((d, w), tf as f64 * (n / df as f64).ln());
            }
        }
    }
    out
}

/// PMI edges recomputed by materializing every sliding window. Membership
/// (PMI > 0) is decided in exact integer arithmetic:
/// joint * #W > single_i * single_j.
pub fn pmi_oracle(
    corpus: &TokenizedCorpus,
    vocab: &Vocabulary,
    window: usize,
    counting: PmiCounting,
) -> BTreeMap<(usize, usize), f64> {
    let mut windows: Vec<Vec<(usize, u64)>> = Vec::new();
    for doc in corpus.documents() {
        let ids: Vec<Option<usize>> = doc.tokens.iter().map(|t| vocab.index_of(t)).collect();
        let n_wins = if ids.len() <= window {
            1
        } else {
            ids.len() - window + 1
        };
        for s in 0..n_wins {
            let e = (s + window).min(ids.len());
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            for id in ids[s..e].iter().flatten() {
                *counts.entry(*id).or_insert(0) += 1;
            }
            windows.push(counts.into_iter().collect());
        }
    }
    let total = windows.len() as u64;
    let mut single = vec![0u64; vocab.len()];
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for win in &windows {
        for (a, &(i, ci)) in win.iter().enumerate() {
            single[i] += match counting {
                PmiCounting::Presence => 1,
                PmiCounting::Multiplicity => ci,
            };
            for &(j, cj) in &win[a + 1..] {
                let key = if i < j { (i, j) } else { (j, i) };
                *joint.entry(key).or_insert(0) += match counting {
                    PmiCounting::Presence => 1,
                    PmiCounting::Multiplicity => ci * cj,
                };
            }
        }
    }
    joint
        .into_iter()
        .filter_map(|((i, j), c)| {
            let emit = (c as u128) * (total as u128) > (single[i] as u128) * (single[j] as u128);
            emit.then(|| {
                let p_joint = c as f64 / total as f64;
                let p_i = single[i] as f64 / total as f64;
                let p_j = single[j] as f64 / total as f64;
                ((i, j), (p_joint / (p_i * p_j)).ln())
            })
        })
        .collect()
}

/// Dense symmetric normalization done the slow way: materialize A, take row
/// sums as degrees, divide every entry by sqrt(deg_r) * sqrt(deg_c).
pub fn dense_normalized_oracle(adj: &CsrMatrix) -> DenseMatrix {
    let a = adj.to_dense();
    let n = a.rows();
    let deg: Vec<f64> = (0..n).map(|r| a.row(r).iter().sum()).collect();
    let mut out = DenseMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let v = a.get(r, c);
            if v != 0.0 {
                out.set(r, c, v / (deg[r].sqrt() * deg[c].sqrt()));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

pub const FD_H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// |a - b| relative to their combined magnitude, floored so that
/// disagreement below 1e-8 absolute always passes (two orders of magnitude
/// above central-difference noise) and a missing gradient of any visible
/// size always fails.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-4, a.abs() + b.abs())
}

/// Central finite difference of a scalar function of one matrix entry.
pub fn central_diff<F: FnMut(&DenseMatrix) -> f64>(
    x: &DenseMatrix,
    r: usize,
    c: usize,
    mut f: F,
) -> f64 {
    let mut plus = x.clone();
    plus.set(r, c, x.get(r, c) + FD_H);
    let mut minus = x.clone();
    minus.set(r, c, x.get(r, c) - FD_H);
    (f(&plus) - f(&minus)) / (2.0 * FD_H)
}

/// Checks every entry of `analytic` against a central difference of `f`
/// with respect to `x`; returns the worst relative error.
pub fn fd_check_matrix<F: FnMut(&DenseMatrix) -> f64>(
    x: &DenseMatrix,
    analytic: &DenseMatrix,
    mut f: F,
) -> Result<f64, String> {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let fd = central_diff(x, r, c, &mut f);
            let err = rel_err(analytic.get(r, c), fd);
            if err >= FD_TOL {
                return Err(format!(
                    "entry ({r},{c}): analytic {} vs finite-difference {fd} (rel err {err:.3e})",
                    analytic.get(r, c)
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = scale * (2.0 * rng.gen::<f64>() - 1.0);
    }
    m
}

/// One random training instance on a <= 20-node graph, with everything the
/// composed-objective check needs frozen: fixed dropout masks (via a cloned
/// RNG), fixed triplets, fixed annealing threshold.
pub struct ComposedInstance {
    pub prepared: Prepared,
    pub config: TrainConfig,
    pub dropout_rng: ChaCha8Rng,
    pub triplets: Vec<TripletSample>,
    pub threshold: f64,
    pub train_examples: Vec<(usize, usize)>,
    pub unlabeled: Vec<usize>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, with_word_word: bool) -> ComposedInstance {
    loop {
        let n_docs = rng.gen_range(4..=7);
        let n_classes = rng.gen_range(2..=3);
        let corpus = random_corpus(rng, n_docs, 10, 5, n_classes, true);
        let mut config = Preset::Fewshot.configured(&TrainConfig {
            hidden: 6,
            min_frequency: 1,
            budget_override: Some((2, 1)),
            stratified: false,
            seed: rng.gen(),
            margin: 1.0,
            beta: 0.3,
            ..TrainConfig::default()
        });
        if with_word_word {
            config.graph_mode = GraphMode::WithWordWord;
        }
        let Ok(prepared) = prepare(&corpus, &config) else {
            continue;
        };
        if prepared.graph.indexing().n_nodes() > 20 {
            continue;
        }
        let tags = prepared.splits.tags();
        let train_examples: Vec<(usize, usize)> = prepared
            .splits
            .docs_with(SplitTag::Train)
            .into_iter()
            .map(|d| (d, prepared.labels[d].expect("train docs are labeled")))
            .collect();
        let unlabeled = prepared.splits.docs_with(SplitTag::Unlabeled);
        let anchors: Vec<usize> = (0..prepared.graph.indexing().n_docs)
            .filter(|&d| tags[d] != SplitTag::Test)
            .collect();
        let mut triplet_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let triplets = sample_triplets(&prepared.graph, &anchors, &mut triplet_rng);
        let dropout_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        // Mid-schedule annealing threshold; far from 0 or 1 so masking is
        // exercised without being degenerate.
        let threshold = 0.8;
        return ComposedInstance {
            prepared,
            config,
            dropout_rng,
            triplets,
            threshold,
            train_examples,
            unlabeled,
        };
    }
}

/// The full three-part objective as a pure function of the parameters,
/// with dropout masks replayed from a cloned RNG.
pub fn composed_objective(inst: &ComposedInstance, params: &textgcn::model::GcnParams) -> f64 {
    let graph = &inst.prepared.graph;
    let adj = graph.normalized();
    let n_docs = graph.indexing().n_docs;
    let tags = inst.prepared.splits.tags();
    let mut rng = inst.dropout_rng.clone();
    let out = forward_train(adj, n_docs, params, inst.config.dropout, &mut rng)
        .expect("forward succeeds");
    let (l_sup, _) = loss_supervised(
        &out.logits,
        &inst.train_examples,
        tags,
        Some(inst.threshold),
    )
    .expect("supervised loss");
    let (l_2nr, _) = loss_2nr(&out.z, &inst.triplets, inst.config.margin).expect("triplet loss");
    let (l_pse, _) = loss_pseudo(
        &out.logits,
        &inst.unlabeled,
        tags,
        inst.config.beta,
        ThresholdDirection::GreaterEqual,
    )
    .expect("pseudo loss");
    total_loss(
        l_sup,
        Some(l_2nr),
        Some(l_pse),
        inst.config.lambda_2nr,
        inst.config.lambda_pseudo,
    )
    .expect("total loss")
}

/// Analytic gradients of the composed objective for every parameter,
/// computed through the hand-written backward pass.
pub fn composed_analytic_grads(
    inst: &ComposedInstance,
    params: &textgcn::model::GcnParams,
) -> textgcn::model::GcnParams {
    let graph = &inst.prepared.graph;
    let adj = graph.normalized();
    let n_docs = graph.indexing().n_docs;
    let tags = inst.prepared.splits.tags();
    let mut params = params.clone();
    params.zero_grads();
    let mut rng = inst.dropout_rng.clone();
    let out = forward_train(adj, n_docs, &params, inst.config.dropout, &mut rng)
        .expect("forward succeeds");
    let (_, mut grad_logits) = loss_supervised(
        &out.logits,
        &inst.train_examples,
        tags,
        Some(inst.threshold),
    )
    .expect("supervised loss");
    let (_, g2) = loss_2nr(&out.z, &inst.triplets, inst.config.margin).expect("triplet loss");
    let mut upstream_z = DenseMatrix::zeros(out.z.rows(), out.z.cols());
    upstream_z
        .axpy(inst.config.lambda_2nr, &g2)
        .expect("shapes match");
    let (_, gp) = loss_pseudo(
        &out.logits,
        &inst.unlabeled,
        tags,
        inst.config.beta,
        ThresholdDirection::GreaterEqual,
    )
    .expect("pseudo loss");
    grad_logits
        .axpy(inst.config.lambda_pseudo, &gp)
        .expect("shapes match");
    backward(&out, &grad_logits, &upstream_z, &mut params, adj).expect("backward succeeds");
    params
}

/// Criterion driver: FD-checks the composed objective on `n_instances`
/// random instances, alternating graph modes. Returns (instances checked,
/// worst relative error).
pub fn check_composed_gradients(n_instances: usize, seed: u64) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n_instances {
        let inst = random_instance(&mut rng, i % 2 == 1);
        let mut init_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut params = init_params(
            inst.prepared.graph.indexing().n_nodes(),
            inst.config.hidden,
            inst.prepared.classes.n_classes(),
            &mut init_rng,
        );
        // Finite differences need a generic point: fresh initialization has
        // all-zero biases, which parks dropout-zeroed documents exactly on
        // an argmax tie (a kink of the pseudo-label loss). Jittering every
        // parameter moves the evaluation off all such boundaries.
        for p in params.parameters_mut() {
            for v in p.value.data_mut() {
                *v += 0.2 * init_rng.gen::<f64>() - 0.1;
            }
        }
        let grads = composed_analytic_grads(&inst, &params);
        for (p, g) in params.parameters().iter().zip(grads.parameters()) {
            let name = &p.name;
            for r in 0..p.value.rows() {
                for c in 0..p.value.cols() {
                    let fd = {
                        let mut perturbed = params.clone();
                        let base = p.value.get(r, c);
                        let target = perturbed
                            .parameters_mut()
                            .into_iter()
                            .find(|q| &q.name == name)
                            .expect("parameter present");
                        target.value.set(r, c, base + FD_H);
                        let f_plus = composed_objective(&inst, &perturbed);
                        let target = perturbed
                            .parameters_mut()
                            .into_iter()
                            .find(|q| &q.name == name)
                            .expect("parameter present");
                        target.value.set(r, c, base - FD_H);
                        let f_minus = composed_objective(&inst, &perturbed);
                        (f_plus - f_minus) / (2.0 * FD_H)
                    };
                    let analytic = g.grad.get(r, c);
                    let err = rel_err(analytic, fd);
                    if err >= FD_TOL {
                        return Err(format!(
                            "instance {i}, {name}[{r},{c}]: analytic {analytic} vs \
                             finite-difference {fd} (rel err {err:.3e})"
                        ));
                    }
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok((n_instances, worst))
}

/// FD checks for every differentiable kernel, one scope per kernel.
/// Returns the worst relative error across all of them.
pub fn check_kernel_gradients(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut track = |label: &str, res: Result<f64, String>| -> Result<(), String> {
        match res {
            Ok(w) => {
                worst = worst.max(w);
                Ok(())
            }
            Err(e) => Err(format!("{label}: {e}")),
        }
    };

    // Sparse-dense product: d/dX sum(spmm(A, X) * R) = spmm(A^T, R), and the
    // normalized adjacency is symmetric, so A^T = A.
    {
        let corpus = random_corpus(&mut rng, 6, 8, 5, 2, false);
        let config = TrainConfig {
            min_frequency: 1,
            budget_override: Some((2, 1)),
            ..TrainConfig::default()
        };
        let prepared = prepare(&corpus, &config).expect("prepare");
        let a = prepared.graph.normalized();
        let n = a.n_rows();
        let x = random_matrix(&mut rng, n, 4, 1.0);
        let r = random_matrix(&mut rng, n, 4, 1.0);
        let analytic = spmm(a, &r).expect("spmm");
        let f = |x: &DenseMatrix| {
            let y = spmm(a, x).expect("spmm");
            (0..n).map(|i| dot(y.row(i), r.row(i))).sum()
        };
        track("spmm", fd_check_matrix(&x, &analytic, f))?;
    }

    // Dense product: d/dA sum(AB * R) = R B^T, d/dB = A^T R.
    {
        let a = random_matrix(&mut rng, 5, 4, 1.0);
        let b = random_matrix(&mut rng, 4, 3, 1.0);
        let r = random_matrix(&mut rng, 5, 3, 1.0);
        let f_of = |a: &DenseMatrix, b: &DenseMatrix| {
            let y = matmul(a, b).expect("matmul");
            (0..y.rows()).map(|i| dot(y.row(i), r.row(i))).sum::<f64>()
        };
        let grad_a = matmul_a_bt(&r, &b).expect("grad wrt a");
        track("matmul wrt A", fd_check_matrix(&a, &grad_a, |m| f_of(m, &b)))?;
        let grad_b = matmul_at_b(&a, &r).expect("grad wrt b");
        track("matmul wrt B", fd_check_matrix(&b, &grad_b, |m| f_of(&a, m)))?;
    }

    // Bias broadcast: d/db sum((X + 1 b) * R) = column sums of R.
    {
        let x = random_matrix(&mut rng, 6, 3, 1.0);
        let b = random_matrix(&mut rng, 1, 3, 0.5);
        let r = random_matrix(&mut rng, 6, 3, 1.0);
        let grad_b = DenseMatrix::from_rows(vec![column_sums(&r)]);
        let f = |b: &DenseMatrix| {
            let mut y = x.clone();
            add_bias_rows(&mut y, b.row(0)).expect("bias");
            (0..y.rows()).map(|i| dot(y.row(i), r.row(i))).sum()
        };
        track("bias broadcast", fd_check_matrix(&b, &grad_b, f))?;
    }

    // ReLU: gradient masked where the pre-activation is non-positive.
    {
        let mut x = random_matrix(&mut rng, 5, 4, 1.0);
        for v in x.data_mut() {
            // Keep every entry well clear of the kink at 0.
            if v.abs() < 0.05 {
                *v += 0.1_f64.copysign(*v);
            }
        }
        let r = random_matrix(&mut rng, 5, 4, 1.0);
        let analytic = relu_backward(&x, &r).expect("relu backward");
        let f = |x: &DenseMatrix| {
            let y = relu(x);
            (0..y.rows()).map(|i| dot(y.row(i), r.row(i))).sum()
        };
        track("relu", fd_check_matrix(&x, &analytic, f))?;
    }

    // Dropout with a frozen mask: apply and backward scale identically.
    {
        let x = random_matrix(&mut rng, 6, 4, 1.0);
        let r = random_matrix(&mut rng, 6, 4, 1.0);
        let mask = DropoutMask::sample(6, 4, 0.6, &mut rng);
        let analytic = mask.backward(&r).expect("dropout backward");
        let f = |x: &DenseMatrix| {
            let y = mask.apply(x).expect("dropout apply");
            (0..y.rows()).map(|i| dot(y.row(i), r.row(i))).sum()
        };
        track("dropout", fd_check_matrix(&x, &analytic, f))?;
    }

    // log-sum-exp: gradient is the softmax.
    {
        let x = random_matrix(&mut rng, 1, 5, 2.0);
        let analytic = softmax_rows(&x);
        let f = |x: &DenseMatrix| log_sum_exp(x.row(0));
        track("log_sum_exp", fd_check_matrix(&x, &analytic, f))?;
    }

    // Cross-entropy of one row against a fixed target class.
    {
        let x = random_matrix(&mut rng, 1, 4, 2.0);
        let target = 2;
        let (_, g) = cross_entropy_row(x.row(0), target).expect("ce");
        let analytic = DenseMatrix::from_rows(vec![g]);
        let f = |x: &DenseMatrix| cross_entropy_row(x.row(0), target).expect("ce").0;
        track("cross_entropy", fd_check_matrix(&x, &analytic, f))?;
    }

    // Euclidean distance between two distinct vectors.
    {
        let a = random_matrix(&mut rng, 1, 6, 1.0);
        let mut b = random_matrix(&mut rng, 1, 6, 1.0);
        if euclidean_distance(a.row(0), b.row(0)) < 0.1 {
            for v in b.data_mut() {
                *v += 0.5;
            }
        }
        let ga = euclidean_distance_backward(a.row(0), b.row(0), 1.0);
        let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
        let f_a = |a: &DenseMatrix| euclidean_distance(a.row(0), b.row(0));
        track(
            "euclidean wrt a",
            fd_check_matrix(&a, &DenseMatrix::from_rows(vec![ga]), f_a),
        )?;
        let f_b = |b: &DenseMatrix| euclidean_distance(a.row(0), b.row(0));
        track(
            "euclidean wrt b",
            fd_check_matrix(&b, &DenseMatrix::from_rows(vec![gb]), f_b),
        )?;
    }

    // The three loss heads directly on random inputs.
    {
        let n_docs = 6;
        let tags = vec![
            SplitTag::Train,
            SplitTag::Train,
            SplitTag::Validation,
            SplitTag::Unlabeled,
            SplitTag::Unlabeled,
            SplitTag::Test,
        ];
        let logits = random_matrix(&mut rng, n_docs, 3, 2.0);
        let examples = vec![(0, 1), (1, 2)];

        let (_, g) = loss_supervised(&logits, &examples, &tags, None).expect("sup");
        let f = |l: &DenseMatrix| loss_supervised(l, &examples, &tags, None).expect("sup").0;
        track("supervised loss", fd_check_matrix(&logits, &g, f))?;

        let (_, g) = loss_supervised(&logits, &examples, &tags, Some(0.7)).expect("sup tsa");
        let f = |l: &DenseMatrix| {
            loss_supervised(l, &examples, &tags, Some(0.7))
                .expect("sup tsa")
                .0
        };
        track("supervised loss with annealing", fd_check_matrix(&logits, &g, f))?;

        let eligible = vec![3, 4];
        let (_, g) = loss_pseudo(&logits, &eligible, &tags, 0.3, ThresholdDirection::GreaterEqual)
            .expect("pseudo");
        let f = |l: &DenseMatrix| {
            loss_pseudo(l, &eligible, &tags, 0.3, ThresholdDirection::GreaterEqual)
                .expect("pseudo")
                .0
        };
        track("pseudo-label loss", fd_check_matrix(&logits, &g, f))?;
    }

    // Triplet loss on a random representation matrix.
    {
        let z = random_matrix(&mut rng, 8, 5, 1.0);
        let triplets = vec![
            TripletSample {
                anchor: 0,
                bridge: 6,
                positive: 1,
                negative: 2,
            },
            TripletSample {
                anchor: 3,
                bridge: 7,
                positive: 4,
                negative: 5,
            },
        ];
        let (_, g) = loss_2nr(&z, &triplets, 1.0).expect("2nr");
        let f = |z: &DenseMatrix| loss_2nr(z, &triplets, 1.0).expect("2nr").0;
        track("triplet loss", fd_check_matrix(&z, &g, f))?;
    }

    Ok(worst)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Sampler distribution checks
// ---------------------------------------------------------------------------

/// Exhaustively verifies the three membership invariants on every triplet:
/// bridge is a word neighbor of the anchor, positive is a document neighbor
/// of the bridge, negative is a document outside the bridge's neighborhood.
/// Neighborhoods are recomputed from the dense raw adjacency. Returns the
/// number of triplets verified.
pub fn check_sampler_membership(min_triplets: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verified = 0;
    while verified < min_triplets {
        let n_docs = rng.gen_range(4..=10);
        let corpus = random_corpus(&mut rng, n_docs, 12, 6, 2, false);
        let config = TrainConfig {
            min_frequency: 1,
            budget_override: Some((1, 1)),
            graph_mode: if rng.gen() {
                GraphMode::DocWordOnly
            } else {
                GraphMode::WithWordWord
            },
            seed: rng.gen(),
            ..TrainConfig::default()
        };
        let Ok(prepared) = prepare(&corpus, &config) else {
            continue;
        };
        let graph = &prepared.graph;
        let n_docs = graph.indexing().n_docs;
        let dense = graph.adjacency().to_dense();
        let anchors: Vec<usize> = (0..n_docs).collect();
        let triplets = sample_triplets(graph, &anchors, &mut rng);
        for t in &triplets {
            verify_triplet(t, &dense, n_docs)?;
            verified += 1;
        }
    }
    Ok(verified)
}

pub fn verify_triplet(t: &TripletSample, dense: &DenseMatrix, n_docs: usize) -> Result<(), String> {
    if t.bridge < n_docs {
        return Err(format!("bridge {} is not a word node", t.bridge));
    }
    if t.anchor >= n_docs || t.positive >= n_docs || t.negative >= n_docs {
        return Err(format!("non-document anchor/positive/negative in {t:?}"));
    }
    if dense.get(t.anchor, t.bridge) <= 0.0 {
        return Err(format!(
            "bridge {} is not a neighbor of anchor {}",
            t.bridge, t.anchor
        ));
    }
    if dense.get(t.bridge, t.positive) <= 0.0 {
        return Err(format!(
            "positive {} is not a neighbor of bridge {}",
            t.positive, t.bridge
        ));
    }
    if dense.get(t.bridge, t.negative) > 0.0 {
        return Err(format!(
            "negative {} is inside the neighborhood of bridge {}",
            t.negative, t.bridge
        ));
    }
    Ok(())
}

/// A four-document corpus engineered so the anchor's word edges have
/// TF-IDF weights in ratio 1:2:4, with valid positives and negatives.
pub fn chi_square_corpus() -> TokenizedCorpus {
    let doc = |id: &str, tokens: Vec<&str>| RawDocument {
        id: id.to_string(),
        tokens: tokens.into_iter().map(str::to_string).collect(),
        label: Some("x".to_string()),
        fixed_split: FixedSplit::TrainPool,
    };
    // alder, birch, cedar appear in exactly two of four documents each, so
    // idf = ln(2) for all three and the anchor's weights are 1:2:4 by raw
    // term frequency. dogwood/elm keep d2 and d3 out of every bridge
    // neighborhood, providing negatives.
    TokenizedCorpus::from_documents(vec![
        doc(
            "d0",
            vec![
                "alder", "birch", "birch", "cedar", "cedar", "cedar", "cedar",
            ],
        ),
        doc("d1", vec!["alder", "birch", "cedar"]),
        doc("d2", vec!["dogwood", "elm"]),
        doc("d3", vec!["elm", "dogwood"]),
    ])
    .expect("chi-square corpus is valid")
}

/// Draws `draws` bridges from document 0 of the engineered corpus and
/// returns (chi-square statistic, 0.99 quantile of chi-square with k-1
/// degrees of freedom).
pub fn bridge_chi_square(draws: usize, seed: u64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    let corpus = chi_square_corpus();
    let config = TrainConfig {
        min_frequency: 1,
        budget_override: Some((1, 1)),
        graph_mode: GraphMode::DocWordOnly,
        ..TrainConfig::default()
    };
    let prepared = prepare(&corpus, &config).expect("prepare");
    let graph = &prepared.graph;
    let n_docs = graph.indexing().n_docs;

    // Expected bridge distribution: the anchor's TF-IDF edge weights,
    // recomputed by the independent oracle.
    let oracle = tfidf_oracle(&corpus, &prepared.vocabulary);
    let weights: BTreeMap<usize, f64> = oracle
        .iter()
        .filter(|((d, _), _)| *d == 0)
        .map(|((_, w), &v)| (n_docs + w, v))
        .collect();
    let total: f64 = weights.values().sum();

    let anchors = vec![0usize; draws];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets = sample_triplets(graph, &anchors, &mut rng);
    assert_eq!(triplets.len(), draws, "every draw must yield a triplet");
    let mut observed: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &triplets {
        *observed.entry(t.bridge).or_insert(0) += 1;
    }
    for bridge in observed.keys() {
        assert!(weights.contains_key(bridge), "bridge outside the edge set");
    }

    let mut stat = 0.0;
    for (node, &w) in &weights {
        let expected = draws as f64 * w / total;
        let obs = *observed.get(node).unwrap_or(&0) as f64;
        stat += (obs - expected) * (obs - expected) / expected;
    }
    let dist = ChiSquared::new((weights.len() - 1) as f64).expect("valid dof");
    (stat, dist.inverse_cdf(0.99))
}
