//! Two GCN layers with one-hot inputs plus a linear classification head.
//!
//! With identity input features, the first layer's product I·W1 is elided:
//! the rows of W1 are the node embeddings and layer 1 computes
//! ReLU(A_hat·W1) directly. The second layer produces z, the final hidden
//! representation of every node (post-ReLU, pre-dropout, pre-classifier),
//! which is both what the classifier head reads (document rows only) and
//! what the neighborhood-regularization loss measures distances on.
//!
//! The backward pass is the hand-written reverse of the forward composition
//! and accumulates into each parameter's gradient, so several losses can
//! backpropagate through one shared forward cache.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{
    add_bias_rows, column_sums, matmul, matmul_a_bt, matmul_at_b, relu, relu_backward, spmm,
    DenseMatrix, DropoutMask, Parameter,
};
use crate::graph::CsrMatrix;
use crate::rng::RngState;
use crate::{Error, Result};

/// All learnable parameters. Layer 1 has no bias: the input is one-hot, so
/// a bias there is redundant with W1 itself.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub w1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    pub wc: Parameter,
    pub bc: Parameter,
}

impl GcnParams {
    pub fn n_nodes(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.wc.value.cols()
    }

    /// Fixed iteration order for the optimizer: w1, w2, b2, wc, bc.
    pub fn parameters_mut(&mut self) -> [&mut Parameter; 5] {
        [
            &mut self.w1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc,
            &mut self.bc,
        ]
    }

    pub fn parameters(&self) -> [&Parameter; 5] {
        [&self.w1, &self.w2, &self.b2, &self.wc, &self.bc]
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = bound * (2.0 * rng.gen::<f64>() - 1.0);
    }
    m
}

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
/// Draw order is fixed (W1 row-major, then W2, then Wc) so a given seed
/// always produces bit-identical parameters.
pub fn init_params<R: Rng>(
    n_nodes: usize,
    hidden: usize,
    n_classes: usize,
    rng: &mut R,
) -> GcnParams {
    assert!(n_nodes > 0 && hidden > 0 && n_classes > 0);
    GcnParams {
        w1: Parameter::new("w1", glorot_uniform(n_nodes, hidden, rng)),
        w2: Parameter::new("w2", glorot_uniform(hidden, hidden, rng)),
        b2: Parameter::new("b2", DenseMatrix::zeros(1, hidden)),
        wc: Parameter::new("wc", glorot_uniform(hidden, n_classes, rng)),
        bc: Parameter::new("bc", DenseMatrix::zeros(1, n_classes)),
    }
}

/// Forward activations plus everything backward needs.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Pre-activation of layer 1 (A_hat · W1).
    p1: DenseMatrix,
    mask1: Option<DropoutMask>,
    /// Aggregated layer-2 input (A_hat · dropout(ReLU(p1))).
    m: DenseMatrix,
    /// Pre-activation of layer 2 (m · W2 + b2).
    p2: DenseMatrix,
    /// Final hidden representation: ReLU(p2), before dropout.
    pub z: DenseMatrix,
    mask2: Option<DropoutMask>,
    /// Dropout-scaled z; the classifier reads its document rows.
    zd: DenseMatrix,
    /// Document logits (n_docs × n_classes).
    pub logits: DenseMatrix,
    n_docs: usize,
}

impl ForwardOutput {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }
}

fn run_forward(
    adj: &CsrMatrix,
    n_docs: usize,
    params: &GcnParams,
    masks: Option<(DropoutMask, DropoutMask)>,
) -> Result<ForwardOutput> {
    let n_nodes = adj.n_rows();
    if params.n_nodes() != n_nodes {
        return Err(Error::ShapeMismatch {
            op: "forward".to_string(),
            details: format!(
                "W1 has {} rows but the graph has {n_nodes} nodes",
                params.n_nodes()
            ),
        });
    }
    if n_docs > n_nodes {
        return Err(Error::ShapeMismatch {
            op: "forward".to_string(),
            details: format!("{n_docs} docs exceed {n_nodes} nodes"),
        });
    }
    let (mask1, mask2) = match masks {
        Some((m1, m2)) => (Some(m1), Some(m2)),
        None => (None, None),
    };

    let p1 = spmm(adj, &params.w1.value)?;
    let h1 = relu(&p1);
    let h1d = match &mask1 {
        Some(m) => m.apply(&h1)?,
        None => h1,
    };
    let m = spmm(adj, &h1d)?;
    let mut p2 = matmul(&m, &params.w2.value)?;
    add_bias_rows(&mut p2, params.b2.value.row(0))?;
    let z = relu(&p2);
    let zd = match &mask2 {
        Some(msk) => msk.apply(&z)?,
        None => z.clone(),
    };

    let zd_docs = take_rows(&zd, n_docs);
    let mut logits = matmul(&zd_docs, &params.wc.value)?;
    add_bias_rows(&mut logits, params.bc.value.row(0))?;

    Ok(ForwardOutput {
        p1,
        mask1,
        m,
        p2,
        z,
        mask2,
        zd,
        logits,
        n_docs,
    })
}

/// Training-mode forward: fresh dropout masks (drop probability `dropout`)
/// are drawn from `rng` for both activations.
pub fn forward_train(
    adj: &CsrMatrix,
    n_docs: usize,
    params: &GcnParams,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardOutput> {
    assert!((0.0..1.0).contains(&dropout), "dropout {dropout} outside [0, 1)");
    let keep_p = 1.0 - dropout;
    let hidden = params.hidden();
    let n_nodes = adj.n_rows();
    let mask1 = DropoutMask::sample(n_nodes, hidden, keep_p, rng);
    let mask2 = DropoutMask::sample(n_nodes, hidden, keep_p, rng);
    run_forward(adj, n_docs, params, Some((mask1, mask2)))
}

/// Evaluation-mode forward: no dropout, no scaling; a pure function of the
/// adjacency and parameters.
pub fn forward_eval(adj: &CsrMatrix, n_docs: usize, params: &GcnParams) -> Result<ForwardOutput> {
    run_forward(adj, n_docs, params, None)
}

fn take_rows(m: &DenseMatrix, n: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, m.cols());
    for r in 0..n {
        out.row_mut(r).copy_from_slice(m.row(r));
    }
    out
}

/// Reverse pass. `upstream_logits` carries the gradient from the supervised
/// and pseudo-label losses (n_docs × n_classes); `upstream_z` carries the
/// gradient the neighborhood regularizer puts directly on z
/// (n_nodes × hidden). Either may be all zeros. Gradients are accumulated
/// into `params`, never overwritten.
pub fn backward(
    output: &ForwardOutput,
    upstream_logits: &DenseMatrix,
    upstream_z: &DenseMatrix,
    params: &mut GcnParams,
    adj: &CsrMatrix,
) -> Result<()> {
    let n_docs = output.n_docs;
    if upstream_logits.shape() != output.logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward".to_string(),
            details: format!(
                "logit grad {:?} vs logits {:?}",
                upstream_logits.shape(),
                output.logits.shape()
            ),
        });
    }
    if upstream_z.shape() != output.z.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward".to_string(),
            details: format!(
                "z grad {:?} vs z {:?}",
                upstream_z.shape(),
                output.z.shape()
            ),
        });
    }

    // Classifier head: logits = zd[docs] · Wc + bc.
    params
        .bc
        .accumulate(&DenseMatrix::from_rows(vec![column_sums(upstream_logits)]))?;
    let zd_docs = take_rows(&output.zd, n_docs);
    params
        .wc
        .accumulate(&matmul_at_b(&zd_docs, upstream_logits)?)?;
    let g_zd_docs = matmul_a_bt(upstream_logits, &params.wc.value)?;
    let mut g_zd = DenseMatrix::zeros(output.zd.rows(), output.zd.cols());
    for r in 0..n_docs {
        g_zd.row_mut(r).copy_from_slice(g_zd_docs.row(r));
    }

    // Dropout on z, then add the regularizer's direct contribution to z.
    let mut g_z = match &output.mask2 {
        Some(mask) => mask.backward(&g_zd)?,
        None => g_zd,
    };
    g_z.add_assign(upstream_z)?;

    // Layer 2: z = ReLU(m · W2 + b2).
    let g_p2 = relu_backward(&output.p2, &g_z)?;
    params
        .b2
        .accumulate(&DenseMatrix::from_rows(vec![column_sums(&g_p2)]))?;
    params.w2.accumulate(&matmul_at_b(&output.m, &g_p2)?)?;
    let g_m = matmul_a_bt(&g_p2, &params.w2.value)?;

    // Aggregation is symmetric, so grad through A_hat·x is another A_hat·g.
    let g_h1d = spmm(adj, &g_m)?;
    let g_h1 = match &output.mask1 {
        Some(mask) => mask.backward(&g_h1d)?,
        None => g_h1d,
    };
    let g_p1 = relu_backward(&output.p1, &g_h1)?;
    // Layer 1 input is the identity, so grad_W1 = A_hatᵀ · g_p1.
    params.w1.accumulate(&spmm(adj, &g_p1)?)?;
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCNC";
const CHECKPOINT_VERSION: u32 = 1;

/// A training snapshot: parameters, the epoch they were taken at, and the
/// dropout-stream position so training can resume without replaying draws.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub rng_state: RngState,
    pub params: GcnParams,
}

fn write_matrix(w: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> std::io::Result<DenseMatrix> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_bits(u64::from_le_bytes(b8));
    }
    Ok(m)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        (|| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&(self.epoch as u64).to_le_bytes())?;
            w.write_all(&self.rng_state.seed)?;
            w.write_all(&self.rng_state.word_pos.to_le_bytes())?;
            for p in self.params.parameters() {
                write_matrix(&mut w, &p.value)?;
            }
            w.flush()
        })()
        .map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io_err)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io_err)?;
        let epoch = u64::from_le_bytes(b8) as usize;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed).map_err(io_err)?;
        let mut b16 = [0u8; 16];
        r.read_exact(&mut b16).map_err(io_err)?;
        let rng_state = RngState {
            seed,
            word_pos: u128::from_le_bytes(b16),
        };
        let mut matrices = Vec::with_capacity(5);
        for name in ["w1", "w2", "b2", "wc", "bc"] {
            let m = read_matrix(&mut r).map_err(io_err)?;
            if !m.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite entries in {name}")));
            }
            matrices.push((name, m));
        }
        let mut it = matrices.into_iter();
        let mut next = || {
            let (name, m) = it.next().expect("five matrices read");
            Parameter::new(name, m)
        };
        let params = GcnParams {
            w1: next(),
            w2: next(),
            b2: next(),
            wc: next(),
            bc: next(),
        };
        let (h, c) = (params.hidden(), params.n_classes());
        let shapes_ok = params.w2.value.shape() == (h, h)
            && params.b2.value.shape() == (1, h)
            && params.wc.value.shape() == (h, c)
            && params.bc.value.shape() == (1, c);
        if !shapes_ok {
            return Err(Error::Checkpoint("inconsistent matrix shapes".to_string()));
        }
        Ok(Checkpoint {
            epoch,
            rng_state,
            params,
        })
    }
}
