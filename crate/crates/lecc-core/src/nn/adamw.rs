//! AdamW: Adam with bias correction and decoupled weight decay.
//!
//! Moment state is keyed by position in the parameter list, so callers must
//! pass the same parameters in the same order on every step. The step count
//! increments exactly once per `step` call, gradients or not.

use super::matrix::Matrix;
use super::param::Parameter;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug)]
pub struct AdamW<F: Scalar> {
    cfg: AdamWConfig,
    t: u64,
    state: Vec<(Matrix<F>, Matrix<F>)>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, t: 0, state: Vec::new() }
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    /// Adjusts the step size without touching moment state; schedules live in
    /// the training loop, not here.
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter and clears nothing:
    /// callers zero gradients themselves between batches.
    pub fn step(&mut self, params: &mut [&mut Parameter<F>]) -> Result<()> {
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|p| {
                    (
                        Matrix::zeros(p.value.rows(), p.value.cols()),
                        Matrix::zeros(p.value.rows(), p.value.cols()),
                    )
                })
                .collect();
        }
        if self.state.len() != params.len() {
            return Err(Error::State("optimizer parameter list changed size"));
        }
        self.t += 1;
        let b1: F = sc(self.cfg.beta1);
        let b2: F = sc(self.cfg.beta2);
        let lr: F = sc(self.cfg.lr);
        let eps: F = sc(self.cfg.eps);
        let wd: F = sc(self.cfg.weight_decay);
        // bias correction factors are computed once per step
        let bc1: F = sc(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2: F = sc(1.0 - self.cfg.beta2.powi(self.t as i32));
        for (p, (m, v)) in params.iter_mut().zip(self.state.iter_mut()) {
            if p.value.shape() != m.shape() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    lhs: p.value.shape_str(),
                    rhs: m.shape_str(),
                });
            }
            if !p.trainable() {
                continue;
            }
            let g = p.grad.data();
            let pv = p.value.data();
            let mut new_vals = Vec::with_capacity(pv.len());
            {
                let md = m.data_mut();
                let vd = v.data_mut();
                for i in 0..pv.len() {
                    md[i] = b1 * md[i] + (F::one() - b1) * g[i];
                    vd[i] = b2 * vd[i] + (F::one() - b2) * g[i] * g[i];
                    let m_hat = md[i] / bc1;
                    let v_hat = vd[i] / bc2;
                    let update = m_hat / (v_hat.sqrt() + eps) + wd * pv[i];
                    new_vals.push(pv[i] - lr * update);
                }
            }
            p.value.data_mut().copy_from_slice(&new_vals);
        }
        Ok(())
    }
}
