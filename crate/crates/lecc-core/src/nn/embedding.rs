//! Token plus position embedding lookup.

use super::matrix::Matrix;
use super::param::Parameter;
use super::rng::normal_matrix;
use super::scalar::Scalar;
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Embedding<F: Scalar> {
    pub token: Parameter<F>,
    pub position: Parameter<F>,
    cache: Option<Vec<u32>>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(vocab: usize, max_len: usize, dim: usize, init_std: f64, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            token: Parameter::new(normal_matrix(vocab, dim, init_std, rng), true),
            position: Parameter::new(normal_matrix(max_len, dim, init_std, rng), true),
            cache: None,
        }
    }

    pub fn vocab(&self) -> usize {
        self.token.value.rows()
    }

    pub fn max_len(&self) -> usize {
        self.position.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.token.value.cols()
    }

    /// Sum of token and position rows for each id. Rejects ids outside the
    /// vocabulary and sequences longer than the position table.
    pub fn forward(&mut self, ids: &[u32]) -> Result<Matrix<F>> {
        if ids.len() > self.max_len() {
            return Err(Error::OutOfRange {
                what: "sequence length",
                got: ids.len(),
                limit: self.max_len(),
            });
        }
        let mut out = Matrix::zeros(ids.len(), self.dim());
        for (pos, &id) in ids.iter().enumerate() {
            if id as usize >= self.vocab() {
                return Err(Error::OutOfRange {
                    what: "token id",
                    got: id as usize,
                    limit: self.vocab(),
                });
            }
            let trow = self.token.value.row(id as usize);
            let prow = self.position.value.row(pos);
            let orow = out.row_mut(pos);
            for j in 0..trow.len() {
                orow[j] = trow[j] + prow[j];
            }
        }
        self.cache = Some(ids.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Matrix<F>) -> Result<()> {
        let ids = self
            .cache
            .take()
            .ok_or(Error::State("embedding backward without forward"))?;
        for (pos, &id) in ids.iter().enumerate() {
            self.token.accumulate_row(id as usize, upstream.row(pos));
            self.position.accumulate_row(pos, upstream.row(pos));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    #[test]
    fn lookup_adds_token_and_position_rows() {
        let mut emb = Embedding::<f64>::new(5, 4, 3, 0.1, &mut seeded(2));
        let x = emb.forward(&[1, 4]).unwrap();
        for j in 0..3 {
            let want = emb.token.value.get(1, j) + emb.position.value.get(0, j);
            assert_eq!(x.get(0, j), want);
            let want2 = emb.token.value.get(4, j) + emb.position.value.get(1, j);
            assert_eq!(x.get(1, j), want2);
        }
    }

    #[test]
    fn out_of_vocab_id_rejected() {
        let mut emb = Embedding::<f32>::new(5, 4, 3, 0.1, &mut seeded(2));
        assert!(emb.forward(&[5]).is_err());
    }

    #[test]
    fn over_long_sequence_rejected() {
        let mut emb = Embedding::<f32>::new(5, 2, 3, 0.1, &mut seeded(2));
        assert!(emb.forward(&[0, 1, 2]).is_err());
    }
}
