//! Wald-test power and sample-size determination for linear hypotheses on
//! the regression coefficients.
//!
//! All covariances here are per observation: the covariance of `(β̂₀, β̂)`
//! at `n = 1`, so that the covariance at `n` is `cov / n` and the
//! noncentrality grows linearly in `n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticsError};
use crate::design::Design;
use crate::moments::{
    build_moments, inflate_beta_for_r2, poke_beta_for_r2, MomentsError, RegressionModel,
};
use crate::numerics::{
    chisq_quantile, noncentral_chisq_cdf, normal_quantile, Cholesky, Matrix, NumericsError,
    SymMatrix,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error("R·cov·Rᵀ is singular; the constrained coefficients are not estimable")]
    DegenerateConstraint,
    #[error("the alternative satisfies the null hypothesis; there is no effect to detect")]
    NoEffect,
    #[error("invalid argument: {0}")]
    Domain(String),
}

/// `H₀: Rβ = r` over the full coefficient vector `(β₀, β₁, …, β_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesis {
    constraints: Matrix<f64>,
    target: Vec<f64>,
}

impl LinearHypothesis {
    pub fn new(constraints: Matrix<f64>, target: Vec<f64>) -> Result<Self, PowerError> {
        if constraints.rows() == 0 || constraints.rows() != target.len() {
            return Err(PowerError::Domain(format!(
                "{} constraint rows with a target of length {}",
                constraints.rows(),
                target.len()
            )));
        }
        let gram = SymMatrix::symmetrize(&constraints.matmul(&constraints.transpose())?);
        if Cholesky::factor(&gram).is_err() {
            return Err(PowerError::Domain(
                "constraint matrix does not have full row rank".into(),
            ));
        }
        Ok(Self {
            constraints,
            target,
        })
    }

    pub fn constraints(&self) -> &Matrix<f64> {
        &self.constraints
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Number of constraints.
    pub fn q(&self) -> usize {
        self.target.len()
    }

    /// Number of coefficients including the intercept.
    pub fn width(&self) -> usize {
        self.constraints.cols()
    }

    /// `Rβ − r` at the given coefficients.
    pub fn discrepancy(&self, coefficients: &[f64]) -> Result<Vec<f64>, PowerError> {
        if coefficients.len() != self.width() {
            return Err(PowerError::Domain(format!(
                "hypothesis covers {} coefficients, model has {}",
                self.width(),
                coefficients.len()
            )));
        }
        Ok(self
            .constraints
            .mul_vec(coefficients)
            .into_iter()
            .zip(&self.target)
            .map(|(a, b)| a - b)
            .collect())
    }
}

/// `H₀: β₁ = … = β_p = 0`.
pub fn overall_test(p: usize) -> LinearHypothesis {
    slopes_equal(&vec![0.0; p])
}

/// `H₀: βⱼ = value` for slope `j` (0-based over the slopes).
pub fn coef_test(p: usize, j: usize, value: f64) -> Result<LinearHypothesis, PowerError> {
    if j >= p {
        return Err(PowerError::Domain(format!(
            "coefficient index {j} out of range for p = {p}"
        )));
    }
    let mut r = Matrix::zeros(1, p + 1);
    r[(0, j + 1)] = 1.0;
    LinearHypothesis::new(r, vec![value])
}

fn slopes_equal(values: &[f64]) -> LinearHypothesis {
    let p = values.len();
    let r = Matrix::from_fn(p, p + 1, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    LinearHypothesis {
        constraints: r,
        target: values.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpec {
    pub hypothesis: LinearHypothesis,
    pub alternative: RegressionModel<f64>,
    pub alpha: f64,
    pub target_power: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_POWER: f64 = 0.8;

impl PowerSpec {
    pub fn new(
        hypothesis: LinearHypothesis,
        alternative: RegressionModel<f64>,
        alpha: f64,
        target_power: f64,
    ) -> Result<Self, PowerError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(PowerError::Domain(format!(
                "alpha {alpha} is outside (0, 1)"
            )));
        }
        if !(target_power > alpha && target_power < 1.0) {
            return Err(PowerError::Domain(format!(
                "target power {target_power} must lie in (alpha, 1)"
            )));
        }
        if hypothesis.width() != alternative.p() + 1 {
            return Err(PowerError::Domain(format!(
                "hypothesis covers {} coefficients, model has {}",
                hypothesis.width(),
                alternative.p() + 1
            )));
        }
        Ok(Self {
            hypothesis,
            alternative,
            alpha,
            target_power,
        })
    }

    pub fn discrepancy(&self) -> Result<Vec<f64>, PowerError> {
        self.hypothesis
            .discrepancy(&self.alternative.coefficients())
    }
}

/// Alternative with all slopes scaled up so that R² rises by `delta`, tested
/// against the base slopes.
pub fn r2_increase_uniform(
    model: &RegressionModel<f64>,
    sigma_xx: &SymMatrix<f64>,
    delta: f64,
    alpha: f64,
    target_power: f64,
) -> Result<PowerSpec, PowerError> {
    let alt = inflate_beta_for_r2(model, sigma_xx, delta)?;
    PowerSpec::new(slopes_equal(&model.beta), alt, alpha, target_power)
}

/// Alternative with slope `j` alone moved so that R² rises by `delta`,
/// tested against its base value.
pub fn r2_increase_single(
    model: &RegressionModel<f64>,
    sigma_xx: &SymMatrix<f64>,
    delta: f64,
    j: usize,
    alpha: f64,
    target_power: f64,
) -> Result<PowerSpec, PowerError> {
    let alt = poke_beta_for_r2(model, sigma_xx, delta, j)?;
    let h = coef_test(model.p(), j, model.beta[j])?;
    PowerSpec::new(h, alt, alpha, target_power)
}

/// Which coefficient covariance the power calculation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    #[default]
    MatrixSampled,
    Complete,
}

/// Per-observation covariance of `(β̂₀, β̂)` at the given model.
pub fn unit_cov_beta(
    mu_x: &[f64],
    sigma_xx: &SymMatrix<f64>,
    model: &RegressionModel<f64>,
    design: &Design,
    kind: CovarianceKind,
) -> Result<SymMatrix<f64>, PowerError> {
    let m = build_moments(mu_x, sigma_xx, model)?;
    Ok(match kind {
        CovarianceKind::MatrixSampled => asymptotics::report(&m, design, 1.0)?.cov_beta,
        CovarianceKind::Complete => asymptotics::complete_data_cov_beta(&m, 1.0)?,
    })
}

/// `λ = n (Rβ − r)ᵀ [R V Rᵀ]⁻¹ (Rβ − r)` with `V` the per-observation
/// covariance.
pub fn noncentrality(
    h: &LinearHypothesis,
    alt: &RegressionModel<f64>,
    cov_beta_unit: &SymMatrix<f64>,
    n: f64,
) -> Result<f64, PowerError> {
    let d = h.discrepancy(&alt.coefficients())?;
    Ok(n * unit_noncentrality(h, &d, cov_beta_unit)?)
}

fn unit_noncentrality(
    h: &LinearHypothesis,
    discrepancy: &[f64],
    cov_beta_unit: &SymMatrix<f64>,
) -> Result<f64, PowerError> {
    if cov_beta_unit.dim() != h.width() {
        return Err(PowerError::Domain(format!(
            "covariance has dimension {}, hypothesis covers {} coefficients",
            cov_beta_unit.dim(),
            h.width()
        )));
    }
    let middle = h.constraints.sandwich(cov_beta_unit);
    let chol = Cholesky::factor(&middle).map_err(|_| PowerError::DegenerateConstraint)?;
    Ok(chol.inv_quad_form(discrepancy))
}

fn power_from_lambda(lambda: f64, q: usize, alpha: f64) -> Result<f64, PowerError> {
    let crit = chisq_quantile(1.0 - alpha, q as f64)?;
    Ok(1.0 - noncentral_chisq_cdf(crit, q as u32, lambda))
}

/// Power of the level-`alpha` Wald chi-square test at sample size `n`.
pub fn wald_power(
    h: &LinearHypothesis,
    alt: &RegressionModel<f64>,
    cov_beta_unit: &SymMatrix<f64>,
    n: f64,
    alpha: f64,
) -> Result<f64, PowerError> {
    if !(n > 0.0) {
        return Err(PowerError::Domain(format!(
            "sample size {n} must be positive"
        )));
    }
    let lambda = noncentrality(h, alt, cov_beta_unit, n)?;
    power_from_lambda(lambda, h.q(), alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeResult {
    pub n_total: u64,
    pub per_form: Vec<u64>,
    pub achieved_power: f64,
    pub noncentrality_at_n: f64,
    /// Real-valued sample size at which the target power is reached exactly.
    pub n_continuous: f64,
}

const BISECTION_STEPS: usize = 200;

/// Smallest sample size at which the Wald test reaches the target power.
///
/// Under uniform allocation `n_total` is a multiple of the form count and
/// split equally; otherwise the rounded-up total is apportioned by largest
/// remainders.
pub fn sample_size(
    spec: &PowerSpec,
    cov_beta_unit: &SymMatrix<f64>,
    allocation: &[f64],
) -> Result<SampleSizeResult, PowerError> {
    if allocation.is_empty() {
        return Err(PowerError::Domain("allocation has no forms".into()));
    }
    let d = spec.discrepancy()?;
    if d.iter().all(|&v| v == 0.0) {
        return Err(PowerError::NoEffect);
    }
    let h = &spec.hypothesis;
    let unit_lambda = unit_noncentrality(h, &d, cov_beta_unit)?;
    if !(unit_lambda > 0.0) || !unit_lambda.is_finite() {
        return Err(PowerError::NoEffect);
    }
    let q = h.q();
    let power_at = |n: f64| power_from_lambda(n * unit_lambda, q, spec.alpha);

    let k = allocation.len() as f64;
    let mut hi = k;
    while power_at(hi)? < spec.target_power {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(PowerError::NoEffect);
        }
    }
    let mut lo = if hi > k { hi / 2.0 } else { 0.0 };
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if power_at(mid)? >= spec.target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let uniform = allocation
        .iter()
        .all(|&a| (a - allocation[0]).abs() <= 1e-12);
    let (n_total, per_form) = if uniform {
        let forms = allocation.len() as u64;
        let per = (hi / k).ceil().max(1.0) as u64;
        (per * forms, vec![per; allocation.len()])
    } else {
        let n = hi.ceil().max(1.0) as u64;
        (n, apportion(n, allocation))
    };
    let lambda = n_total as f64 * unit_lambda;
    Ok(SampleSizeResult {
        n_total,
        per_form,
        achieved_power: power_from_lambda(lambda, q, spec.alpha)?,
        noncentrality_at_n: lambda,
        n_continuous: hi,
    })
}

/// Largest-remainder split of `n` across forms in proportion to `allocation`.
pub fn apportion(n: u64, allocation: &[f64]) -> Vec<u64> {
    let total: f64 = allocation.iter().sum();
    let exact: Vec<f64> = allocation.iter().map(|a| a / total * n as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..allocation.len()).collect();
    // Stable sort keeps ties in form order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Closed-form two-sided z-test sample size `(z₁₋α/₂ + z_power)² v / δ²`
/// for one coefficient with per-observation variance `v` and effect `δ`.
pub fn z_test_sample_size(
    unit_variance: f64,
    effect: f64,
    alpha: f64,
    target_power: f64,
) -> Result<f64, PowerError> {
    if effect == 0.0 {
        return Err(PowerError::NoEffect);
    }
    let z = normal_quantile(1.0 - alpha / 2.0)? + normal_quantile(target_power)?;
    Ok(z * z * unit_variance / (effect * effect))
}

/// Hypothesis kinds accepted in a power request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisKind {
    Overall,
    Coef,
    R2Uniform,
    R2Single,
    #[serde(rename = "custom-R")]
    CustomR,
}

/// JSON power or sample-size request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    pub hypothesis: HypothesisKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    /// Slope index (1-based) for `coef` and `r2-single`.
    #[serde(default)]
    pub coefficient: Option<usize>,
    /// Null value for `coef`.
    #[serde(default)]
    pub value: Option<f64>,
    /// R² increase for the `r2-*` kinds.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Rows of R over `(β₀, β₁, …, β_p)` for `custom-R`.
    #[serde(default, rename = "R")]
    pub constraints: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(default)]
    pub covariance: CovarianceKind,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_power() -> f64 {
    DEFAULT_POWER
}

impl PowerRequest {
    pub fn new(hypothesis: HypothesisKind) -> Self {
        Self {
            hypothesis,
            alpha: DEFAULT_ALPHA,
            power: DEFAULT_POWER,
            coefficient: None,
            value: None,
            delta: None,
            constraints: None,
            r: None,
            covariance: CovarianceKind::default(),
        }
    }

    fn slope_index(&self, p: usize) -> Result<usize, PowerError> {
        match self.coefficient {
            Some(j) if (1..=p).contains(&j) => Ok(j - 1),
            Some(j) => Err(PowerError::Domain(format!(
                "coefficient {j} out of range 1..={p}"
            ))),
            None => Err(PowerError::Domain(
                "this hypothesis needs a coefficient index".into(),
            )),
        }
    }

    fn delta(&self) -> Result<f64, PowerError> {
        self.delta
            .ok_or_else(|| PowerError::Domain("this hypothesis needs an R² delta".into()))
    }

    /// Builds the test specification against `model`, which is the
    /// alternative for `overall`, `coef` and `custom-R` and the base
    /// configuration for the `r2-*` kinds.
    pub fn to_spec(
        &self,
        model: &RegressionModel<f64>,
        sigma_xx: &SymMatrix<f64>,
    ) -> Result<PowerSpec, PowerError> {
        let p = model.p();
        match self.hypothesis {
            HypothesisKind::Overall => {
                PowerSpec::new(overall_test(p), model.clone(), self.alpha, self.power)
            }
            HypothesisKind::Coef => {
                let h = coef_test(p, self.slope_index(p)?, self.value.unwrap_or(0.0))?;
                PowerSpec::new(h, model.clone(), self.alpha, self.power)
            }
            HypothesisKind::R2Uniform => {
                r2_increase_uniform(model, sigma_xx, self.delta()?, self.alpha, self.power)
            }
            HypothesisKind::R2Single => r2_increase_single(
                model,
                sigma_xx,
                self.delta()?,
                self.slope_index(p)?,
                self.alpha,
                self.power,
            ),
            HypothesisKind::CustomR => {
                let rows = self.constraints.as_ref().ok_or_else(|| {
                    PowerError::Domain("custom-R needs a constraint matrix R".into())
                })?;
                let r = match &self.r {
                    Some(r) => r.clone(),
                    None => vec![0.0; rows.len()],
                };
                let h = LinearHypothesis::new(Matrix::from_rows(rows)?, r)?;
                PowerSpec::new(h, model.clone(), self.alpha, self.power)
            }
        }
    }
}

/// Sample size for `spec` with the coefficient covariance evaluated at its
/// alternative model.
pub fn plan(
    spec: &PowerSpec,
    mu_x: &[f64],
    sigma_xx: &SymMatrix<f64>,
    design: &Design,
    kind: CovarianceKind,
) -> Result<SampleSizeResult, PowerError> {
    let cov = unit_cov_beta(mu_x, sigma_xx, &spec.alternative, design, kind)?;
    sample_size(spec, &cov, &design.allocation())
}
