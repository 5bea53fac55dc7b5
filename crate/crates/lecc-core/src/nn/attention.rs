//! Multi-head self-attention with key-side padding mask.
//!
//! The query and value projections accept an optional low-rank branch; key
//! and output projections are always plain. Masked (PAD) key positions get a
//! large negative score, which underflows to an exact zero attention weight
//! after the shifted softmax.

use super::linear::{Linear, LowRank};
use super::matrix::Matrix;
use super::ops::softmax_rows;
use super::rng::normal_matrix;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

const MASK_SCORE: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<F: Scalar> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    heads: usize,
    cache: Option<AttnCache<F>>,
}

#[derive(Debug, Clone)]
struct AttnCache<F: Scalar> {
    q: Matrix<F>,
    k: Matrix<F>,
    v: Matrix<F>,
    attn: Vec<Matrix<F>>,
}

fn col_slice<F: Scalar>(m: &Matrix<F>, start: usize, width: usize) -> Matrix<F> {
    let mut out = Matrix::zeros(m.rows(), width);
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[start..start + width]);
    }
    out
}

fn col_write<F: Scalar>(dst: &mut Matrix<F>, start: usize, src: &Matrix<F>) {
    for i in 0..src.rows() {
        dst.row_mut(i)[start..start + src.cols()].copy_from_slice(src.row(i));
    }
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(dim: usize, heads: usize, init_std: f64, trainable: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(normal_matrix(dim, dim, init_std, rng), trainable),
            wk: Linear::new(normal_matrix(dim, dim, init_std, rng), trainable),
            wv: Linear::new(normal_matrix(dim, dim, init_std, rng), trainable),
            wo: Linear::new(normal_matrix(dim, dim, init_std, rng), trainable),
            heads,
            cache: None,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.wq.d_in()
    }

    /// `pad` marks key positions to exclude; it must match the sequence length.
    pub fn forward(
        &mut self,
        x: &Matrix<F>,
        pad: &[bool],
        lora_q: Option<&mut LowRank<F>>,
        lora_v: Option<&mut LowRank<F>>,
    ) -> Result<Matrix<F>> {
        if pad.len() != x.rows() {
            return Err(Error::Dimension {
                op: "attention_mask",
                lhs: x.shape_str(),
                rhs: format!("mask len {}", pad.len()),
            });
        }
        let s = x.rows();
        let dh = self.dim() / self.heads;
        let inv_sqrt: F = sc(1.0 / (dh as f64).sqrt());
        let q = self.wq.forward(x, lora_q)?;
        let k = self.wk.forward(x, None)?;
        let v = self.wv.forward(x, lora_v)?;
        let mut ctx = Matrix::zeros(s, self.dim());
        let mut attn_all = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = col_slice(&q, h * dh, dh);
            let kh = col_slice(&k, h * dh, dh);
            let vh = col_slice(&v, h * dh, dh);
            let mut scores = qh.matmul_nt(&kh)?;
            scores.scale(inv_sqrt);
            for i in 0..s {
                let row = scores.row_mut(i);
                for (j, &is_pad) in pad.iter().enumerate() {
                    if is_pad {
                        row[j] = sc(MASK_SCORE);
                    }
                }
            }
            let attn = softmax_rows(&scores);
            let ctx_h = attn.matmul(&vh)?;
            col_write(&mut ctx, h * dh, &ctx_h);
            attn_all.push(attn);
        }
        let out = self.wo.forward(&ctx, None)?;
        self.cache = Some(AttnCache { q, k, v, attn: attn_all });
        Ok(out)
    }

    pub fn backward(
        &mut self,
        upstream: &Matrix<F>,
        lora_q: Option<&mut LowRank<F>>,
        lora_v: Option<&mut LowRank<F>>,
    ) -> Result<Matrix<F>> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::State("attention backward without forward"))?;
        let s = upstream.rows();
        let dh = self.dim() / self.heads;
        let inv_sqrt: F = sc(1.0 / (dh as f64).sqrt());
        let d_ctx = self.wo.backward(upstream, None)?;
        let mut dq = Matrix::zeros(s, self.dim());
        let mut dk = Matrix::zeros(s, self.dim());
        let mut dv = Matrix::zeros(s, self.dim());
        for h in 0..self.heads {
            let attn = &cache.attn[h];
            let kh = col_slice(&cache.k, h * dh, dh);
            let qh = col_slice(&cache.q, h * dh, dh);
            let vh = col_slice(&cache.v, h * dh, dh);
            let d_ctx_h = col_slice(&d_ctx, h * dh, dh);
            let d_attn = d_ctx_h.matmul_nt(&vh)?;
            let dvh = attn.matmul_tn(&d_ctx_h)?;
            // softmax backward per row: a .* (da - sum(da .* a))
            let mut d_scores = Matrix::zeros(s, s);
            for i in 0..s {
                let a = attn.row(i);
                let da = d_attn.row(i);
                let mut dot = F::zero();
                for j in 0..s {
                    dot = dot + a[j] * da[j];
                }
                let dr = d_scores.row_mut(i);
                for j in 0..s {
                    dr[j] = a[j] * (da[j] - dot);
                }
            }
            d_scores.scale(inv_sqrt);
            let dqh = d_scores.matmul(&kh)?;
            let dkh = d_scores.matmul_tn(&qh)?;
            col_write(&mut dq, h * dh, &dqh);
            col_write(&mut dk, h * dh, &dkh);
            col_write(&mut dv, h * dh, &dvh);
        }
        let mut dx = self.wq.backward(&dq, lora_q)?;
        dx.add_assign(&self.wk.backward(&dk, None)?);
        dx.add_assign(&self.wv.backward(&dv, lora_v)?);
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    #[test]
    fn attention_weights_over_unmasked_positions_sum_to_one() {
        let mut rng = seeded(4);
        let mut attn = MultiHeadAttention::<f64>::new(8, 2, 0.1, true, &mut rng).unwrap();
        let x = normal_matrix(5, 8, 0.5, &mut rng);
        let pad = vec![false, false, false, true, true];
        attn.forward(&x, &pad, None, None).unwrap();
        let cache = attn.cache.as_ref().unwrap();
        for a in &cache.attn {
            for i in 0..5 {
                let unmasked: f64 = a.row(i)[..3].iter().sum();
                let masked: f64 = a.row(i)[3..].iter().sum();
                assert!((unmasked - 1.0).abs() < 1e-6, "row {i}: {unmasked}");
                assert_eq!(masked, 0.0, "masked weight leaked in row {i}");
            }
        }
    }

    #[test]
    fn padded_keys_do_not_affect_unpadded_outputs() {
        let mut rng = seeded(8);
        let mut attn = MultiHeadAttention::<f64>::new(8, 2, 0.1, true, &mut rng).unwrap();
        let x4 = normal_matrix(4, 8, 0.5, &mut rng);
        let mut x6 = Matrix::zeros(6, 8);
        for i in 0..4 {
            x6.row_mut(i).copy_from_slice(x4.row(i));
        }
        let y4 = attn.clone().forward(&x4, &[false; 4], None, None).unwrap();
        let y6 = attn.forward(&x6, &[false, false, false, false, true, true], None, None).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert!((y4.get(i, j) - y6.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_not_divisible_by_heads_rejected() {
        let mut rng = seeded(1);
        assert!(MultiHeadAttention::<f32>::new(65, 4, 0.1, true, &mut rng).is_err());
    }
}
