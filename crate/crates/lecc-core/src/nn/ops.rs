//! Stateless numeric primitives: row softmax, GELU, cross-entropy.

use super::matrix::Matrix;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};

/// Row-wise softmax with max-shift for stability. Each output row sums to 1.
pub fn softmax_rows<F: Scalar>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut sum = F::zero();
        let out_row = out.row_mut(i);
        for (o, &x) in out_row.iter_mut().zip(row.iter()) {
            let e = (x - max).exp();
            *o = e;
            sum = sum + e;
        }
        for o in out_row.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

/// GELU via the tanh approximation, applied element-wise.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c: F = sc(0.7978845608028654); // sqrt(2/pi)
    let k: F = sc(0.044715);
    let half: F = sc(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (F::one() + u.tanh())
}

/// Derivative of [`gelu`] with respect to its input.
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c: F = sc(0.7978845608028654);
    let k: F = sc(0.044715);
    let half: F = sc(0.5);
    let three: F = sc(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * k * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Mean negative log-likelihood over rows, computed through log-sum-exp, plus
/// the gradient with respect to the logits: `(softmax - one_hot) / rows`.
pub fn cross_entropy<F: Scalar>(logits: &Matrix<F>, targets: &[usize]) -> Result<(F, Matrix<F>)> {
    if targets.len() != logits.rows() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: logits.shape_str(),
            rhs: format!("{} targets", targets.len()),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::Data("cross_entropy on empty batch".into()));
    }
    for &t in targets {
        if t >= logits.cols() {
            return Err(Error::OutOfRange {
                what: "target class",
                got: t,
                limit: logits.cols(),
            });
        }
    }
    let n: F = sc(logits.rows() as f64);
    let mut grad = softmax_rows(logits);
    let mut loss = F::zero();
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut sum = F::zero();
        for &x in row {
            sum = sum + (x - max).exp();
        }
        let log_sum_exp = max + sum.ln();
        loss = loss + (log_sum_exp - row[t]);
        let grow = grad.row_mut(i);
        grow[t] = grow[t] - F::one();
        for g in grow.iter_mut() {
            *g = *g / n;
        }
    }
    Ok((loss / n, grad))
}
