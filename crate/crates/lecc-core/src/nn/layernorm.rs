//! Row-wise layer normalization with affine gain and bias.

use super::matrix::Matrix;
use super::param::Parameter;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};

pub const LN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Scalar> {
    pub gain: Parameter<F>,
    pub bias: Parameter<F>,
    cache: Option<LnCache<F>>,
}

#[derive(Debug, Clone)]
struct LnCache<F: Scalar> {
    x_hat: Matrix<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize, trainable: bool) -> Self {
        let mut gain = Matrix::zeros(1, dim);
        gain.fill(F::one());
        LayerNorm {
            gain: Parameter::new(gain, trainable),
            bias: Parameter::new(Matrix::zeros(1, dim), trainable),
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.value.cols()
    }

    /// Normalizes each row to zero mean and unit variance (epsilon inside the
    /// square root), then applies gain and bias. A zero-variance row
    /// normalizes to the zero vector.
    pub fn forward(&mut self, x: &Matrix<F>) -> Result<Matrix<F>> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: x.shape_str(),
                rhs: self.gain.value.shape_str(),
            });
        }
        let d: F = sc(x.cols() as f64);
        let eps: F = sc(LN_EPSILON);
        let mut x_hat = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mut mean = F::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / d;
            let mut var = F::zero();
            for &v in row {
                let c = v - mean;
                var = var + c * c;
            }
            var = var / d;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let xh = x_hat.row_mut(i);
            if var == F::zero() {
                // all-equal row: normalized form is exactly zero
                for v in xh.iter_mut() {
                    *v = F::zero();
                }
            } else {
                for (o, &v) in xh.iter_mut().zip(row.iter()) {
                    *o = (v - mean) * istd;
                }
            }
            let orow = out.row_mut(i);
            for j in 0..x.cols() {
                orow[j] = self.gain.value.get(0, j) * xh[j] + self.bias.value.get(0, j);
            }
        }
        self.cache = Some(LnCache { x_hat, inv_std });
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Matrix<F>) -> Result<Matrix<F>> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::State("layer_norm backward without forward"))?;
        let d: F = sc(upstream.cols() as f64);
        let mut dx = Matrix::zeros(upstream.rows(), upstream.cols());
        let mut dgain = Matrix::zeros(1, upstream.cols());
        let mut dbias = Matrix::zeros(1, upstream.cols());
        for i in 0..upstream.rows() {
            let up = upstream.row(i);
            let xh = cache.x_hat.row(i);
            let istd = cache.inv_std[i];
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for j in 0..up.len() {
                let dxhat = up[j] * self.gain.value.get(0, j);
                sum_dxhat = sum_dxhat + dxhat;
                sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xh[j];
                dgain.row_mut(0)[j] = dgain.row(0)[j] + up[j] * xh[j];
                dbias.row_mut(0)[j] = dbias.row(0)[j] + up[j];
            }
            let dxr = dx.row_mut(i);
            for j in 0..up.len() {
                let dxhat = up[j] * self.gain.value.get(0, j);
                dxr[j] = istd * (dxhat - sum_dxhat / d - xh[j] * sum_dxhat_xhat / d);
            }
        }
        self.gain.accumulate(&dgain);
        self.bias.accumulate(&dbias);
        Ok(dx)
    }
}
