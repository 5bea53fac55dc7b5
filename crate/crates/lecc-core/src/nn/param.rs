//! Trainable parameter: a value matrix plus its gradient accumulator.

use super::matrix::Matrix;
use super::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Parameter<F: Scalar> {
    pub value: Matrix<F>,
    pub grad: Matrix<F>,
    trainable: bool,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(value: Matrix<F>, trainable: bool) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter { value, grad, trainable }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Freezing also clears any pending gradient so a later unfreeze cannot
    /// pick up stale accumulation.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        if !trainable {
            self.grad.fill(F::zero());
        }
    }

    /// Adds `grad` into the accumulator. Frozen parameters are never written.
    pub fn accumulate(&mut self, grad: &Matrix<F>) {
        if self.trainable {
            self.grad.add_assign(grad);
        }
    }

    /// Row-wise accumulate for embedding-style scatter updates.
    pub fn accumulate_row(&mut self, row: usize, grad_row: &[F]) {
        if self.trainable {
            let r = self.grad.row_mut(row);
            for (a, b) in r.iter_mut().zip(grad_row.iter()) {
                *a = *a + *b;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.rows() * self.value.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<G: Scalar>(&self) -> Parameter<G> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}
