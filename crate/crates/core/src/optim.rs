//! Full-batch optimizer: rectified adaptive moments with Lookahead slow
//! weights and gradient centralization, plus a plain-Adam mode for
//! ablations and debugging.
//!
//! The update per step, in order:
//! 1. Gradient centralization (matrix parameters only, meaning more than
//!    one row): subtract each gradient column's mean over rows.
//! 2. Adam moments m and v with bias correction.
//! 3. Rectification: with rho_inf = 2/(1-beta2) - 1 and
//!    rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t), take the adaptive step
//!    lr * r_t * m_hat / (sqrt(v_hat) + eps) once rho_t > 4, where r_t is
//!    the variance-rectification factor; before that, the plain momentum
//!    step lr * m_hat.
//! 4. Lookahead: every lookahead_k steps, move the slow weights a fraction
//!    alpha toward the fast weights and reset the fast weights onto them.
//!    Disabled in Adam mode.

use serde::{Deserialize, Serialize};

use crate::compute::{DenseMatrix, Parameter};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Ranger,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub gc: bool,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Ranger,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lookahead_k: 6,
            lookahead_alpha: 0.5,
            gc: true,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: DenseMatrix,
    v: DenseMatrix,
    slow: DenseMatrix,
}

/// Optimizer state over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    t: usize,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[&Parameter]) -> Self {
        assert!(config.lr > 0.0, "learning rate must be positive");
        assert!(config.lookahead_k >= 1, "lookahead_k must be at least 1");
        let slots = params
            .iter()
            .map(|p| Slot {
                m: DenseMatrix::zeros(p.value.rows(), p.value.cols()),
                v: DenseMatrix::zeros(p.value.rows(), p.value.cols()),
                slow: p.value.clone(),
            })
            .collect();
        Optimizer {
            config,
            t: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    /// Zeroes the moments and step counter and re-anchors the slow weights
    /// on the current parameter values. Parameter values are untouched.
    pub fn reset(&mut self, params: &[&Parameter]) {
        self.t = 0;
        for (slot, p) in self.slots.iter_mut().zip(params) {
            slot.m.fill(0.0);
            slot.v.fill(0.0);
            slot.slow = p.value.clone();
        }
    }

    /// One update from the gradients currently stored in the parameters.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer.step".to_string(),
                details: format!(
                    "{} parameters vs {} state slots",
                    params.len(),
                    self.slots.len()
                ),
            });
        }
        self.t += 1;
        let t = self.t as f64;
        let cfg = self.config;
        let bias1 = 1.0 - cfg.beta1.powf(t);
        let bias2 = 1.0 - cfg.beta2.powf(t);
        let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
        let beta2_t = cfg.beta2.powf(t);
        let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
        let rectified = match cfg.kind {
            OptimizerKind::Adam => true,
            OptimizerKind::Ranger => rho_t > 4.0,
        };
        let r_t = match cfg.kind {
            OptimizerKind::Adam => 1.0,
            OptimizerKind::Ranger if rectified => (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt(),
            OptimizerKind::Ranger => 1.0,
        };

        for (slot, param) in self.slots.iter_mut().zip(params.iter_mut()) {
            if param.value.shape() != slot.m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer.step".to_string(),
                    details: format!(
                        "parameter {} is {:?} but state is {:?}",
                        param.name,
                        param.value.shape(),
                        slot.m.shape()
                    ),
                });
            }
            let (rows, cols) = param.value.shape();
            let mut grad = param.grad.clone();
            if cfg.weight_decay > 0.0 {
                grad.axpy(cfg.weight_decay, &param.value)?;
            }
            if cfg.gc && rows > 1 {
                let mut col_mean = vec![0.0; cols];
                for r in 0..rows {
                    for (s, &g) in col_mean.iter_mut().zip(grad.row(r)) {
                        *s += g;
                    }
                }
                for s in &mut col_mean {
                    *s /= rows as f64;
                }
                for r in 0..rows {
                    for (g, &mu) in grad.row_mut(r).iter_mut().zip(&col_mean) {
                        *g -= mu;
                    }
                }
            }

            let theta = param.value.data_mut();
            let g = grad.data();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                if rectified {
                    let v_hat = v[i] / bias2;
                    theta[i] -= cfg.lr * r_t * m_hat / (v_hat.sqrt() + cfg.eps);
                } else {
                    theta[i] -= cfg.lr * m_hat;
                }
            }

            if cfg.kind == OptimizerKind::Ranger && self.t % cfg.lookahead_k == 0 {
                let slow = slot.slow.data_mut();
                let fast = param.value.data_mut();
                for i in 0..fast.len() {
                    slow[i] += cfg.lookahead_alpha * (fast[i] - slow[i]);
                    fast[i] = slow[i];
                }
            }

            if !param.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    component: format!("optimizer update of {}", param.name),
                    epoch: self.t,
                });
            }
        }
        Ok(())
    }
}
