//! Dense row-major matrix with a fixed-order multiply kernel.
//!
//! Every multiply accumulates in ascending index order (i, then k, then j),
//! so results are bit-identical across runs and platforms with the same
//! inputs. All other products are expressed through [`Matrix::matmul`] plus
//! explicit transposition; nothing in this crate reassociates float sums.

use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Builds from a row-major vector. `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: format!("{}x{}", rows, cols),
                rhs: format!("len {}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Test-friendly constructor from nested slices; panics on ragged input.
    pub fn from_rows(rows: &[&[F]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// `self * other`. Accumulation order is i, k, j ascending; the inner j
    /// loop runs over contiguous rows of both output and `other`.
    pub fn matmul(&self, other: &Matrix<F>) -> Result<Matrix<F>> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape_str(),
                rhs: other.shape_str(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for j in 0..other.cols {
                    out_row[j] = out_row[j] + a_ik * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`, computed as a multiply against an explicit transpose
    /// so the accumulation order matches [`Matrix::matmul`] exactly.
    pub fn matmul_nt(&self, other: &Matrix<F>) -> Result<Matrix<F>> {
        self.matmul(&other.transpose())
    }

    /// `self^T * other`, same transposition strategy as [`Matrix::matmul_nt`].
    pub fn matmul_tn(&self, other: &Matrix<F>) -> Result<Matrix<F>> {
        self.transpose().matmul(other)
    }

    pub fn transpose(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix<F>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn sub_assign(&mut self, other: &Matrix<F>) {
        assert_eq!(self.shape(), other.shape(), "sub_assign shape");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a - *b;
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix<F>, factor: F) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + factor * *b;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for a in self.data.iter_mut() {
            *a = *a * factor;
        }
    }

    pub fn fill(&mut self, v: F) {
        self.data.fill(v);
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix<F>) -> F {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element-wise; used to move between f32 storage and f64
    /// verification mode.
    pub fn cast<G: Scalar>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::from_f64_lit(v.as_f64())).collect(),
        }
    }
}
