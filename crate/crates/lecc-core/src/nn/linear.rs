//! Linear map with an optional low-rank side branch.
//!
//! Weights are stored input-major (`d_in x d_out`) so the hot path is a plain
//! `x * W` against contiguous rows. The low-rank branch computes
//! `scale * (x * A) * B` with `A: d_in x r`, `B: r x d_out`; with `B` zero the
//! branch contributes exactly zero and the output equals the base map
//! bit-for-bit.

use super::matrix::Matrix;
use super::param::Parameter;
use super::rng::normal_matrix;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub w: Parameter<F>,
    cache: Option<Matrix<F>>,
}

/// Low-rank branch state: `A` input-major, `B` rank-major, plus the scaling
/// `alpha / rank` baked in at construction.
#[derive(Debug, Clone)]
pub struct LowRank<F: Scalar> {
    pub a: Parameter<F>,
    pub b: Parameter<F>,
    pub scale: F,
    cache_xa: Option<Matrix<F>>,
}

impl<F: Scalar> LowRank<F> {
    /// `A ~ N(0, init_std^2)`, `B = 0`: the branch starts as an exact no-op.
    pub fn init(d_in: usize, d_out: usize, rank: usize, alpha: f64, init_std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Config(format!(
                "rank {rank} invalid for {d_in}x{d_out} target"
            )));
        }
        Ok(LowRank {
            a: Parameter::new(normal_matrix(d_in, rank, init_std, rng), true),
            b: Parameter::new(Matrix::zeros(rank, d_out), true),
            scale: sc(alpha / rank as f64),
            cache_xa: None,
        })
    }

    /// Rebuilds a branch from stored matrices: `a` input-major (`d_in x r`),
    /// `b` rank-major (`r x d_out`).
    pub fn from_parts(a: Matrix<F>, b: Matrix<F>, alpha: f64) -> Result<Self> {
        let rank = a.cols();
        if rank == 0 || b.rows() != rank {
            return Err(Error::Dimension {
                op: "low_rank_parts",
                lhs: a.shape_str(),
                rhs: b.shape_str(),
            });
        }
        Ok(LowRank {
            a: Parameter::new(a, true),
            b: Parameter::new(b, true),
            scale: sc(alpha / rank as f64),
            cache_xa: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.value.cols()
    }

    pub fn d_in(&self) -> usize {
        self.a.value.rows()
    }

    pub fn d_out(&self) -> usize {
        self.b.value.cols()
    }

    /// Dense equivalent `scale * A * B`, shape `d_in x d_out`.
    pub fn dense_delta(&self) -> Matrix<F> {
        let mut d = self.a.value.matmul(&self.b.value).expect("rank dims agree");
        d.scale(self.scale);
        d
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

impl<F: Scalar> Linear<F> {
    pub fn new(w: Matrix<F>, trainable: bool) -> Self {
        Linear {
            w: Parameter::new(w, trainable),
            cache: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.value.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&mut self, x: &Matrix<F>, mut lora: Option<&mut LowRank<F>>) -> Result<Matrix<F>> {
        let mut y = x.matmul(&self.w.value)?;
        if let Some(lr) = lora.as_deref_mut() {
            let xa = x.matmul(&lr.a.value)?;
            let mut delta = xa.matmul(&lr.b.value)?;
            delta.scale(lr.scale);
            y.add_assign(&delta);
            lr.cache_xa = Some(xa);
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight (and branch) gradients, returns the input gradient.
    pub fn backward(&mut self, upstream: &Matrix<F>, mut lora: Option<&mut LowRank<F>>) -> Result<Matrix<F>> {
        let x = self
            .cache
            .take()
            .ok_or(Error::State("linear backward without forward"))?;
        if self.w.trainable() {
            let dw = x.matmul_tn(upstream)?;
            self.w.accumulate(&dw);
        }
        let mut dx = upstream.matmul_nt(&self.w.value)?;
        if let Some(lr) = lora.as_deref_mut() {
            let xa = lr
                .cache_xa
                .take()
                .ok_or(Error::State("low-rank backward without forward"))?;
            let mut db = xa.matmul_tn(upstream)?;
            db.scale(lr.scale);
            lr.b.accumulate(&db);
            let mut dxa = upstream.matmul_nt(&lr.b.value)?;
            dxa.scale(lr.scale);
            let da = x.matmul_tn(&dxa)?;
            lr.a.accumulate(&da);
            let dx_branch = dxa.matmul_nt(&lr.a.value)?;
            dx.add_assign(&dx_branch);
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    #[test]
    fn zero_b_branch_is_bitwise_noop() {
        let mut rng = seeded(5);
        let w: Matrix<f32> = normal_matrix(6, 4, 0.2, &mut rng);
        let x: Matrix<f32> = normal_matrix(3, 6, 1.0, &mut rng);
        let mut plain = Linear::new(w.clone(), true);
        let mut with_branch = Linear::new(w, true);
        let mut lr = LowRank::init(6, 4, 2, 4.0, 0.02, &mut rng).unwrap();
        let y0 = plain.forward(&x, None).unwrap();
        let y1 = with_branch.forward(&x, Some(&mut lr)).unwrap();
        assert_eq!(y0.data(), y1.data());
    }

    #[test]
    fn worked_rank_one_example() {
        // Base identity, rank 1, alpha = rank, A = [1 0]^T layout, B = [0 1]:
        // merged map sends [1, 0] to [1, 1].
        let w = Matrix::from_rows(&[&[1.0f64, 0.0], &[0.0, 1.0]]);
        let mut lin = Linear::new(w, false);
        let mut lr = LowRank {
            a: Parameter::new(Matrix::from_rows(&[&[1.0f64], &[0.0]]), true),
            b: Parameter::new(Matrix::from_rows(&[&[0.0f64, 1.0]]), true),
            scale: 1.0,
            cache_xa: None,
        };
        let x = Matrix::from_rows(&[&[1.0f64, 0.0]]);
        let y = lin.forward(&x, Some(&mut lr)).unwrap();
        assert_eq!(y.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut lin = Linear::new(Matrix::<f32>::zeros(2, 2), true);
        let up = Matrix::zeros(1, 2);
        assert!(matches!(
            lin.backward(&up, None),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn rank_larger_than_dims_rejected() {
        let mut rng = seeded(1);
        assert!(LowRank::<f32>::init(4, 4, 5, 8.0, 0.02, &mut rng).is_err());
        assert!(LowRank::<f32>::init(4, 4, 0, 8.0, 0.02, &mut rng).is_err());
    }

    #[test]
    fn frozen_base_gets_no_gradient_while_branch_trains() {
        let mut rng = seeded(9);
        let w: Matrix<f64> = normal_matrix(4, 3, 0.2, &mut rng);
        let mut lin = Linear::new(w, false);
        let mut lr = LowRank::init(4, 3, 2, 4.0, 0.02, &mut rng).unwrap();
        // with B at its zero init, A would see a zero gradient; make B nonzero
        lr.b.value = normal_matrix(2, 3, 0.1, &mut rng);
        let x: Matrix<f64> = normal_matrix(2, 4, 1.0, &mut rng);
        let y = lin.forward(&x, Some(&mut lr)).unwrap();
        let up = Matrix::from_vec(y.rows(), y.cols(), vec![1.0; y.rows() * y.cols()]).unwrap();
        lin.backward(&up, Some(&mut lr)).unwrap();
        assert_eq!(lin.w.grad.max_abs(), 0.0);
        assert!(lr.a.grad.max_abs() > 0.0);
        assert!(lr.b.grad.max_abs() > 0.0);
    }
}
