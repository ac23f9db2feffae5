//! Joint first and second moments of `(x, y)`, the bordered raw-moment
//! matrix, its vech parameter indexing, and the regression/effect-size
//! algebra that maps between moments and `(β₀, β, σ²)`.
//!
//! The centered pair `(μ, Σ)` is the stored representation. The raw-moment
//! matrix `Ω = E[(1, x, y)′(1, x, y)]` is derived from it on demand.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Cholesky, NumericsError, Scalar, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("no real coefficient value reaches the target R² (discriminant {discriminant})")]
    NoRealRoot { discriminant: f64 },
    #[error("vech index {0} is out of range")]
    Index(String),
    #[error("malformed model document: {0}")]
    Schema(String),
}

/// `y = β₀ + βᵀx + ε`, `Var(ε) = σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel<T> {
    pub beta0: T,
    pub beta: Vec<T>,
    pub sigma2: T,
}

impl<T: Scalar> RegressionModel<T> {
    pub fn new(beta0: T, beta: Vec<T>, sigma2: T) -> Result<Self, MomentsError> {
        if !(sigma2 >= T::zero()) {
            return Err(MomentsError::Domain(format!(
                "residual variance {sigma2} must be nonnegative"
            )));
        }
        Ok(Self {
            beta0,
            beta,
            sigma2,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// `(β₀, β₁, …, β_p)`.
    pub fn coefficients(&self) -> Vec<T> {
        std::iter::once(self.beta0)
            .chain(self.beta.iter().copied())
            .collect()
    }
}

/// Mean vector and centered covariance of `(x₁, …, x_p, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStructure<T> {
    mu: Vec<T>,
    sigma: SymMatrix<T>,
}

impl<T: Scalar> MomentStructure<T> {
    pub fn new(mu: Vec<T>, sigma: SymMatrix<T>) -> Result<Self, MomentsError> {
        if mu.len() != sigma.dim() || mu.len() < 2 {
            return Err(MomentsError::Domain(format!(
                "mean of length {} does not match covariance of dimension {}",
                mu.len(),
                sigma.dim()
            )));
        }
        Cholesky::factor(&sigma)?;
        Ok(Self { mu, sigma })
    }

    /// Number of regressors.
    pub fn p(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix<T> {
        &self.sigma
    }

    pub fn mu_x(&self) -> &[T] {
        &self.mu[..self.p()]
    }

    pub fn sigma_xx(&self) -> SymMatrix<T> {
        self.sigma.submatrix(&(0..self.p()).collect::<Vec<_>>())
    }

    pub fn omega(&self) -> OmegaView<T> {
        OmegaView::from_moments(self)
    }
}

/// Bordered raw-moment matrix over `(1, x₁, …, x_p, y)` with `ω₀₀ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaView<T> {
    matrix: SymMatrix<T>,
}

impl<T: Scalar> OmegaView<T> {
    fn from_moments(m: &MomentStructure<T>) -> Self {
        let q = m.mu.len();
        let matrix = SymMatrix::from_fn(q + 1, |i, j| match (i, j) {
            (0, 0) => T::one(),
            (0, j) => m.mu[j - 1],
            (i, j) => m.sigma[(i - 1, j - 1)] + m.mu[i - 1] * m.mu[j - 1],
        });
        Self { matrix }
    }

    pub fn matrix(&self) -> &SymMatrix<T> {
        &self.matrix
    }

    /// Number of regressors.
    pub fn p(&self) -> usize {
        self.matrix.dim() - 2
    }

    /// `E[(1,x)(1,x)′]`, the block that is inverted in the bordered solve.
    pub fn design_block(&self) -> SymMatrix<T> {
        self.matrix.submatrix(&(0..=self.p()).collect::<Vec<_>>())
    }

    /// `(ω₀y, Ω_xy)`.
    pub fn cross_column(&self) -> Vec<T> {
        let y = self.p() + 1;
        (0..=self.p()).map(|i| self.matrix[(i, y)]).collect()
    }

    pub fn to_moments(&self) -> Result<MomentStructure<T>, MomentsError> {
        let q = self.matrix.dim() - 1;
        let mu: Vec<T> = (1..=q).map(|j| self.matrix[(0, j)]).collect();
        let sigma = SymMatrix::from_fn(q, |i, j| self.matrix[(i + 1, j + 1)] - mu[i] * mu[j]);
        MomentStructure::new(mu, sigma)
    }
}

/// Flat indexing of the free entries of `vech Ω`.
///
/// Symbols `(s, t)` with `0 ≤ s ≤ t ≤ p+1` use moment coordinates (0 is the
/// intercept, `p+1` is `y`). The order walks rows of the upper triangle:
/// `(0,1), …, (0,p+1), (1,1), (1,2), …, (p+1,p+1)`; `(0,0)` is fixed at one
/// and excluded. The first `p+1` parameters are means, the rest covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VechIndex {
    p: usize,
}

impl VechIndex {
    pub fn new(p: usize) -> Self {
        Self { p }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn width(&self) -> usize {
        self.p + 2
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.p)
    }

    pub fn mean_count(&self) -> usize {
        self.p + 1
    }

    pub fn is_mean(&self, index: usize) -> bool {
        index < self.mean_count()
    }

    pub fn index_of(&self, s: usize, t: usize) -> Result<usize, MomentsError> {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let m = self.width();
        if t >= m || (s, t) == (0, 0) {
            return Err(MomentsError::Index(format!(
                "({s}, {t}) with p = {}",
                self.p
            )));
        }
        let before: usize = (0..s).map(|r| m - r).sum();
        Ok(before + (t - s) - 1)
    }

    pub fn symbol_of(&self, index: usize) -> Result<(usize, usize), MomentsError> {
        if index >= self.parameter_count() {
            return Err(MomentsError::Index(format!(
                "flat index {index} with {} parameters",
                self.parameter_count()
            )));
        }
        let m = self.width();
        let mut flat = index + 1;
        for s in 0..m {
            let len = m - s;
            if flat < len {
                return Ok((s, s + flat));
            }
            flat -= len;
        }
        unreachable!("index bounded by parameter count")
    }

    /// All symbols in flat order.
    pub fn symbols(&self) -> Vec<(usize, usize)> {
        (0..self.parameter_count())
            .map(|i| self.symbol_of(i).expect("in range"))
            .collect()
    }
}

/// `(p+2)(p+3)/2 − 1`: the entries of `vech Ω` other than `ω₀₀`.
pub fn parameter_count(p: usize) -> usize {
    (p + 2) * (p + 3) / 2 - 1
}

/// Joint moments implied by a regression on regressors with moments
/// `(μ_x, Σ_xx)`.
pub fn build_moments<T: Scalar>(
    mu_x: &[T],
    sigma_xx: &SymMatrix<T>,
    model: &RegressionModel<T>,
) -> Result<MomentStructure<T>, MomentsError> {
    let p = mu_x.len();
    if sigma_xx.dim() != p || model.p() != p {
        return Err(MomentsError::Domain(format!(
            "dimension mismatch: mu_x {p}, sigma_xx {}, beta {}",
            sigma_xx.dim(),
            model.p()
        )));
    }
    Cholesky::factor(sigma_xx)?;
    let sxy = sigma_xx.mul_vec(&model.beta);
    let var_y = dot(&model.beta, &sxy) + model.sigma2;
    let mu_y = model.beta0 + dot(&model.beta, mu_x);
    let sigma = SymMatrix::from_fn(p + 1, |i, j| match (i == p, j == p) {
        (false, false) => sigma_xx[(i, j)],
        (false, true) => sxy[i],
        (true, false) => sxy[j],
        (true, true) => var_y,
    });
    let mut mu = mu_x.to_vec();
    mu.push(mu_y);
    // A zero residual variance leaves Σ singular; the regression is still
    // well defined, so only Σ_xx is required to be PD here.
    Ok(MomentStructure { mu, sigma })
}

/// Regression coefficients by the bordered solve
/// `(β₀, β) = E[(1,x)(1,x)′]⁻¹ (μ_y, E[xy])`, with
/// `σ² = ω_yy − (μ_y, E[xy])′(β₀, β)`.
pub fn regression_from_moments<T: Scalar>(
    m: &MomentStructure<T>,
) -> Result<RegressionModel<T>, MomentsError> {
    let omega = m.omega();
    let block = omega.design_block();
    let rhs = omega.cross_column();
    let chol = Cholesky::factor(&block)?;
    let coef = chol.solve(&rhs);
    let y = m.p() + 1;
    let sigma2 = omega.matrix()[(y, y)] - dot(&rhs, &coef);
    Ok(RegressionModel {
        beta0: coef[0],
        beta: coef[1..].to_vec(),
        sigma2,
    })
}

pub fn r_squared<T: Scalar>(model: &RegressionModel<T>, sigma_xx: &SymMatrix<T>) -> T {
    let explained = sigma_xx.quad_form(&model.beta);
    if explained == T::zero() {
        return T::zero();
    }
    explained / (explained + model.sigma2)
}

/// Residual variance that gives the regression the requested R².
pub fn sigma2_for_r2<T: Scalar>(
    beta: &[T],
    sigma_xx: &SymMatrix<T>,
    r2: T,
) -> Result<T, MomentsError> {
    if !(r2 > T::zero() && r2 < T::one()) {
        return Err(MomentsError::Domain(format!(
            "target R² {r2} outside (0, 1)"
        )));
    }
    let explained = sigma_xx.quad_form(beta);
    if !(explained > T::zero()) {
        return Err(MomentsError::Domain(
            "slopes explain no variance; no residual variance reaches a positive R²".into(),
        ));
    }
    Ok(explained * (T::one() - r2) / r2)
}

fn target_r2<T: Scalar>(
    model: &RegressionModel<T>,
    sigma_xx: &SymMatrix<T>,
    delta: T,
) -> Result<T, MomentsError> {
    let target = r_squared(model, sigma_xx) + delta;
    if !(target < T::one()) {
        return Err(MomentsError::Domain(format!(
            "target R² {target} is not below 1"
        )));
    }
    if target < T::zero() {
        return Err(MomentsError::Domain(format!(
            "target R² {target} is negative"
        )));
    }
    Ok(target)
}

/// Scales every slope by a common factor so that R² rises by `delta` with σ²
/// held fixed.
pub fn inflate_beta_for_r2<T: Scalar>(
    model: &RegressionModel<T>,
    sigma_xx: &SymMatrix<T>,
    delta: T,
) -> Result<RegressionModel<T>, MomentsError> {
    let target = target_r2(model, sigma_xx, delta)?;
    if delta == T::zero() {
        return Ok(model.clone());
    }
    let explained = sigma_xx.quad_form(&model.beta);
    if !(explained > T::zero()) {
        return Err(MomentsError::Domain(
            "cannot inflate slopes that explain no variance".into(),
        ));
    }
    let c = (target * model.sigma2 / ((T::one() - target) * explained)).sqrt();
    Ok(RegressionModel {
        beta0: model.beta0,
        beta: model.beta.iter().map(|&b| c * b).collect(),
        sigma2: model.sigma2,
    })
}

/// Moves slope `j` alone so that R² rises by `delta` with σ² and the other
/// slopes held fixed. Of the two roots of the resulting quadratic the one
/// closest to the current `βⱼ` is used; ties go to the larger root.
pub fn poke_beta_for_r2<T: Scalar>(
    model: &RegressionModel<T>,
    sigma_xx: &SymMatrix<T>,
    delta: T,
    j: usize,
) -> Result<RegressionModel<T>, MomentsError> {
    let p = model.p();
    if j >= p {
        return Err(MomentsError::Domain(format!(
            "coefficient index {j} out of range for p = {p}"
        )));
    }
    let target = target_r2(model, sigma_xx, delta)?;
    if delta == T::zero() {
        return Ok(model.clone());
    }
    let explained_target = model.sigma2 * target / (T::one() - target);
    let a = sigma_xx[(j, j)];
    let mut b = T::zero();
    let mut c = -explained_target;
    for k in (0..p).filter(|&k| k != j) {
        b = b + sigma_xx[(j, k)] * model.beta[k];
        for l in (0..p).filter(|&l| l != j) {
            c = c + model.beta[k] * sigma_xx[(k, l)] * model.beta[l];
        }
    }
    // a t² + 2 b t + c = 0
    let disc = b * b - a * c;
    if disc < T::zero() {
        return Err(MomentsError::NoRealRoot {
            discriminant: disc.to_f64_lossy(),
        });
    }
    let sq = disc.sqrt();
    let (r1, r2) = if b >= T::zero() {
        let q = -(b + sq);
        (q / a, if q == T::zero() { T::zero() } else { c / q })
    } else {
        let q = -b + sq;
        (q / a, c / q)
    };
    let current = model.beta[j];
    let (d1, d2) = ((r1 - current).abs(), (r2 - current).abs());
    let t = if d1 < d2 || (d1 == d2 && r1 >= r2) {
        r1
    } else {
        r2
    };
    let mut beta = model.beta.clone();
    beta[j] = t;
    Ok(RegressionModel {
        beta0: model.beta0,
        beta,
        sigma2: model.sigma2,
    })
}

/// Correlation matrix of the five personality trait scores used by the
/// built-in example configuration.
pub fn big_five_covariance<T: Scalar>() -> SymMatrix<T> {
    const R: [[f64; 5]; 5] = [
        [1.0, 0.26, 0.47, 0.20, -0.16],
        [0.26, 1.0, 0.28, 0.46, -0.28],
        [0.47, 0.28, 1.0, 0.20, -0.35],
        [0.20, 0.46, 0.20, 1.0, -0.37],
        [-0.16, -0.28, -0.35, -0.37, 1.0],
    ];
    SymMatrix::from_fn(5, |i, j| T::of(R[i][j]))
}

/// Slopes of the built-in example: the first and fourth traits at 0.3.
pub const BIG_FIVE_BETA: [f64; 5] = [0.3, 0.0, 0.0, 0.3, 0.0];
/// Residual variance used for microdata generation in the built-in example.
pub const BIG_FIVE_SIGMA2: f64 = 1.248602;

/// The built-in example regression over the five trait scores.
pub fn big_five_model<T: Scalar>() -> RegressionModel<T> {
    RegressionModel {
        beta0: T::zero(),
        beta: BIG_FIVE_BETA.iter().map(|&b| T::of(b)).collect(),
        sigma2: T::of(BIG_FIVE_SIGMA2),
    }
}

/// JSON layout of a model file. Exactly one of `sigma2` and `r2` is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub mu_x: Vec<f64>,
    pub sigma_xx: Vec<Vec<f64>>,
    #[serde(default)]
    pub beta0: f64,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

/// Population specification: regressor moments plus the regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub mu_x: Vec<f64>,
    pub sigma_xx: SymMatrix<f64>,
    pub model: RegressionModel<f64>,
}

impl ModelSpec {
    pub fn moments(&self) -> Result<MomentStructure<f64>, MomentsError> {
        build_moments(&self.mu_x, &self.sigma_xx, &self.model)
    }

    pub fn bigfive() -> Self {
        Self {
            mu_x: vec![0.0; 5],
            sigma_xx: big_five_covariance(),
            model: big_five_model(),
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            mu_x: self.mu_x.clone(),
            sigma_xx: self.sigma_xx.to_rows(),
            beta0: self.model.beta0,
            beta: self.model.beta.clone(),
            sigma2: Some(self.model.sigma2),
            r2: None,
        }
    }
}

pub fn parse_model(document: &str) -> Result<ModelSpec, MomentsError> {
    let doc: ModelDocument =
        serde_json::from_str(document).map_err(|e| MomentsError::Schema(e.to_string()))?;
    ModelSpec::try_from(doc)
}

impl TryFrom<ModelDocument> for ModelSpec {
    type Error = MomentsError;

    fn try_from(doc: ModelDocument) -> Result<Self, Self::Error> {
        let sigma_xx =
            SymMatrix::from_rows(&doc.sigma_xx).map_err(|e| MomentsError::Schema(e.to_string()))?;
        let p = doc.beta.len();
        if doc.mu_x.len() != p || sigma_xx.dim() != p {
            return Err(MomentsError::Schema(format!(
                "mu_x has {} entries, sigma_xx is {}x{}, beta has {p}",
                doc.mu_x.len(),
                sigma_xx.dim(),
                sigma_xx.dim()
            )));
        }
        Cholesky::factor(&sigma_xx)?;
        let sigma2 = match (doc.sigma2, doc.r2) {
            (Some(s), None) => s,
            (None, Some(r2)) => sigma2_for_r2(&doc.beta, &sigma_xx, r2)?,
            _ => {
                return Err(MomentsError::Schema(
                    "exactly one of `sigma2` and `r2` must be given".into(),
                ))
            }
        };
        let model = RegressionModel::new(doc.beta0, doc.beta, sigma2)?;
        Ok(Self {
            mu_x: doc.mu_x,
            sigma_xx,
            model,
        })
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
