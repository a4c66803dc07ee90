//! Small dense square matrices. Dimensions here are at most a few dozen, so a
//! row-major `Vec` with straightforward loops is all that is needed.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, T::one())
    }

    pub fn scaled_identity(dim: usize, s: T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = s;
        }
        m
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from rows; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.dim);
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    /// `v^T M v`.
    pub fn quad_form(&self, v: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim {
            acc = acc + v[i] * dot(self.row(i), v);
        }
        acc
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..d {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self += scale * x x^T`.
    pub fn add_outer(&mut self, x: &[T], scale: T) {
        let d = self.dim;
        for i in 0..d {
            let xi = scale * x[i];
            if xi == T::zero() {
                continue;
            }
            for j in 0..d {
                self.data[i * d + j] = self.data[i * d + j] + xi * x[j];
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    /// Averages the matrix with its transpose in place.
    pub fn symmetrize(&mut self) {
        let d = self.dim;
        let half = T::lit(0.5);
        for i in 0..d {
            for j in (i + 1)..d {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Numerical rank from Gaussian elimination with partial pivoting.
    pub fn rank(&self) -> usize {
        let (_, rank) = self.eliminate(false);
        rank
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting. A pivot
    /// below `singular_tol * max|A|` counts as zero; the error reports how many
    /// dimensions are missing.
    pub fn inverse(&self) -> Result<Self> {
        let (inv, rank) = self.eliminate(true);
        if rank < self.dim {
            return Err(Error::Singular {
                dim: self.dim,
                deficiency: self.dim - rank,
            });
        }
        Ok(inv.expect("inverse computed for full rank"))
    }

    fn eliminate(&self, want_inverse: bool) -> (Option<Self>, usize) {
        let d = self.dim;
        let mut a = self.data.clone();
        let mut inv = Self::identity(d).data;
        let scale = self.max_abs();
        let tol = T::singular_tol() * scale.max(T::min_positive_value());
        let mut rank = 0;
        let mut row = 0;
        for col in 0..d {
            if row >= d {
                break;
            }
            let (piv, pval) = (row..d).map(|r| (r, a[r * d + col].abs())).fold(
                (row, T::neg_infinity()),
                |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                },
            );
            if pval <= tol {
                continue;
            }
            if piv != row {
                for j in 0..d {
                    a.swap(piv * d + j, row * d + j);
                    inv.swap(piv * d + j, row * d + j);
                }
            }
            let p = a[row * d + col];
            for j in 0..d {
                a[row * d + j] = a[row * d + j] / p;
                inv[row * d + j] = inv[row * d + j] / p;
            }
            for r in 0..d {
                if r == row {
                    continue;
                }
                let f = a[r * d + col];
                if f == T::zero() {
                    continue;
                }
                for j in 0..d {
                    a[r * d + j] = a[r * d + j] - f * a[row * d + j];
                    inv[r * d + j] = inv[r * d + j] - f * inv[row * d + j];
                }
            }
            row += 1;
            rank += 1;
        }
        let out = if want_inverse && rank == d {
            Some(Self { dim: d, data: inv })
        } else {
            None
        };
        (out, rank)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.dim + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.dim + j]
    }
}

/// Second-moment matrix `sum_i w_i x_i x_i^T`.
pub fn weighted_outer_sum<T: Scalar>(dim: usize, vectors: &[Vec<T>], weights: &[T]) -> Matrix<T> {
    let mut m = Matrix::zeros(dim);
    for (x, &w) in vectors.iter().zip(weights) {
        if w != T::zero() {
            m.add_outer(x, w);
        }
    }
    m
}

/// Rank of the span of a set of vectors in `R^dim`.
pub fn span_rank<T: Scalar>(dim: usize, vectors: &[Vec<T>]) -> usize {
    let ones = vec![T::one(); vectors.len()];
    weighted_outer_sum(dim, vectors, &ones).rank()
}
