use super::{Matrix, NumericsError, Scalar, SymMatrix};

const MAX_JACOBI_SWEEPS: usize = 100;

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a`. A pivot at or below `PIVOT_TOLERANCE × max|diag|` is
    /// reported as `NotPositiveDefinite`.
    pub fn factor(a: &SymMatrix<T>) -> Result<Self, NumericsError> {
        let n = a.dim();
        let tol = T::PIVOT_TOLERANCE * a.max_abs_diag();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > tol) {
                return Err(NumericsError::NotPositiveDefinite { pivot: j });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix<T> {
        let n = self.dim();
        // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
        let l = &self.lower;
        let mut linv = Matrix::zeros(n, n);
        for j in 0..n {
            linv[(j, j)] = T::one() / l[(j, j)];
            for i in (j + 1)..n {
                let mut s = T::zero();
                for k in j..i {
                    s = s + l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = -s / l[(i, i)];
            }
        }
        SymMatrix::from_fn(n, |i, j| {
            let mut s = T::zero();
            for k in j.max(i)..n {
                s = s + linv[(k, i)] * linv[(k, j)];
            }
            s
        })
    }

    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        (0..self.dim()).map(|i| two * self.lower[(i, i)].ln()).sum()
    }

    /// `bᵀ A⁻¹ b` without forming the inverse.
    pub fn inv_quad_form(&self, b: &[T]) -> T {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_vec();
        let mut acc = T::zero();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
            acc = acc + y[i] * y[i];
        }
        acc
    }
}

pub fn chol<T: Scalar>(spd: &SymMatrix<T>) -> Result<Matrix<T>, NumericsError> {
    Cholesky::factor(spd).map(|c| c.lower)
}

pub fn spd_inverse<T: Scalar>(spd: &SymMatrix<T>) -> Result<SymMatrix<T>, NumericsError> {
    Ok(Cholesky::factor(spd)?.inverse())
}

/// Eigenvalues in descending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn reconstruct(&self) -> SymMatrix<T> {
        let n = self.values.len();
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }

    /// Ratio of the largest to the smallest absolute eigenvalue.
    pub fn condition_number(&self) -> T {
        let max = self.values.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        let min = self
            .values
            .iter()
            .fold(T::infinity(), |a, &v| a.min(v.abs()));
        max / min
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen<T: Scalar>(a: &SymMatrix<T>) -> Result<SymEigen<T>, NumericsError> {
    let n = a.dim();
    let mut m = a.to_matrix();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius().max(T::min_positive_value());
    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<T>()
            .sqrt();
        if off <= T::JACOBI_TOLERANCE * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .expect("finite eigenvalues")
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}
