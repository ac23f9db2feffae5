use std::ops::{Index, IndexMut};

use super::{NumericsError, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::DimensionMismatch(
                "ragged rows in matrix literal".into(),
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] = out[(i, j)] + a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols, "vector length must match column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `self · S · selfᵀ`, the congruence used for delta-method covariances.
    pub fn sandwich(&self, s: &SymMatrix<T>) -> SymMatrix<T> {
        assert_eq!(self.cols, s.dim(), "sandwich dimension mismatch");
        let mut tmp = Matrix::<T>::zeros(self.rows, s.dim());
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..s.dim() {
                    tmp[(i, j)] = tmp[(i, j)] + a * s[(k, j)];
                }
            }
        }
        SymMatrix::from_fn(self.rows, |i, j| {
            tmp.row(i)
                .iter()
                .zip(self.row(j))
                .map(|(&a, &b)| a * b)
                .sum()
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dense symmetric matrix. Both triangles are stored and every write is
/// mirrored, so `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![T::one(); dim])
    }

    pub fn diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    /// Builds from the upper triangle of `f` (called with `i <= j` only).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from nested rows. Rows must be square and symmetric up to
    /// round-off; the stored matrix is the exact average of both triangles.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let dim = rows.len();
        if dim == 0 {
            return Err(NumericsError::DimensionMismatch("empty matrix".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(NumericsError::DimensionMismatch(
                "symmetric matrix must be square".into(),
            ));
        }
        let scale = rows
            .iter()
            .flatten()
            .fold(T::one(), |acc, &v| acc.max(v.abs()));
        let tol = T::of(1e-12) * scale;
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (rows[i][j] - rows[j][i]).abs() > tol {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        let half = T::of(0.5);
        Ok(Self::from_fn(dim, |i, j| {
            if i == j {
                rows[i][i]
            } else {
                half * (rows[i][j] + rows[j][i])
            }
        }))
    }

    /// Symmetrises an arbitrary square matrix as `(A + Aᵀ)/2`.
    pub fn symmetrize(m: &Matrix<T>) -> Self {
        assert_eq!(m.rows(), m.cols(), "symmetrize needs a square matrix");
        let half = T::of(0.5);
        Self::from_fn(m.rows(), |i, j| half * (m[(i, j)] + m[(j, i)]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        let cur = self[(i, j)];
        self.set(i, j, cur + v);
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn max_abs_diag(&self) -> T {
        self.diag()
            .into_iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |a, b| self[(idx[a], idx[b])])
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch in add");
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.dim, "vector length must match dimension");
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn quad_form(&self, v: &[T]) -> T {
        self.mul_vec(v).iter().zip(v).map(|(&a, &b)| a * b).sum()
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |i, j| self[(i, j)])
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> SymMatrix<U> {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for SymMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * self.dim + j]
    }
}
