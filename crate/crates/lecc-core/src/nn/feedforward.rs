//! Position-wise feed-forward block: linear, GELU, linear.

use super::linear::Linear;
use super::matrix::Matrix;
use super::ops::{gelu, gelu_grad};
use super::rng::normal_matrix;
use super::scalar::Scalar;
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct FeedForward<F: Scalar> {
    pub w1: Linear<F>,
    pub w2: Linear<F>,
    cache: Option<Matrix<F>>,
}

impl<F: Scalar> FeedForward<F> {
    pub fn new(dim: usize, hidden: usize, init_std: f64, trainable: bool, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            w1: Linear::new(normal_matrix(dim, hidden, init_std, rng), trainable),
            w2: Linear::new(normal_matrix(hidden, dim, init_std, rng), trainable),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>) -> Result<Matrix<F>> {
        let z = self.w1.forward(x, None)?;
        let mut h = Matrix::zeros(z.rows(), z.cols());
        for (o, &v) in h.data_mut().iter_mut().zip(z.data().iter()) {
            *o = gelu(v);
        }
        let y = self.w2.forward(&h, None)?;
        self.cache = Some(z);
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Matrix<F>) -> Result<Matrix<F>> {
        let z = self
            .cache
            .take()
            .ok_or(Error::State("feed_forward backward without forward"))?;
        let dh = self.w2.backward(upstream, None)?;
        let mut dz = Matrix::zeros(dh.rows(), dh.cols());
        for ((o, &g), &v) in dz.data_mut().iter_mut().zip(dh.data().iter()).zip(z.data().iter()) {
            *o = g * gelu_grad(v);
        }
        self.w1.backward(&dz, None)
    }
}
