//! Expected information for the moment parameters under a matrix sampling
//! design, its inverse, and the delta-method covariance of the regression
//! coefficients.
//!
//! Parameters are ordered by [`VechIndex`]: the `p+1` means of `(x, y)`
//! followed by the upper triangle of the centered covariance `Σ`. Under
//! MCAR the mean and covariance blocks of the information are orthogonal.

use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::design::{Design, DesignError};
use crate::moments::{regression_from_moments, MomentStructure, MomentsError, VechIndex};
use crate::numerics::{sym_eigen, Cholesky, Matrix, NumericsError, Scalar, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("information matrix is singular; the design is not estimable{}", describe_pairs(.uncovered))]
    SingularInformation { uncovered: Vec<(String, String)> },
    #[error("dataset does not match the design: {0}")]
    Data(String),
}

fn describe_pairs(pairs: &[(String, String)]) -> String {
    if pairs.is_empty() {
        String::new()
    } else {
        let list: Vec<String> = pairs.iter().map(|(a, b)| format!("({a},{b})")).collect();
        format!(" (pairs never observed together: {})", list.join(", "))
    }
}

/// Zero-padded inverse of one form's covariance submatrix, over data
/// coordinates `(x₁, …, x_p, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix<T> {
    pub form: usize,
    pub matrix: SymMatrix<T>,
}

pub fn tau<T: Scalar>(
    m: &MomentStructure<T>,
    d: &Design,
    k: usize,
) -> Result<TauMatrix<T>, AsymptoticsError> {
    check_dims(m, d)?;
    Ok(TauMatrix {
        form: k,
        matrix: padded_inverse(m, &d.administered(k)?)?,
    })
}

fn padded_inverse<T: Scalar>(
    m: &MomentStructure<T>,
    idx: &[usize],
) -> Result<SymMatrix<T>, AsymptoticsError> {
    if let Some(&bad) = idx.iter().find(|&&i| i > m.p()) {
        return Err(AsymptoticsError::Data(format!(
            "variable index {bad} out of range for p = {}",
            m.p()
        )));
    }
    let inv = Cholesky::factor(&m.sigma().submatrix(idx))?.inverse();
    let mut padded = SymMatrix::zeros(m.p() + 1);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate().skip(a) {
            padded.set(i, j, inv[(a, b)]);
        }
    }
    Ok(padded)
}

/// A group of rows sharing the same observed variables: data coordinates
/// (`0..p` regressors, `p` the outcome) and its share of the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedBlock<T> {
    pub administered: Vec<usize>,
    pub fraction: T,
}

fn design_blocks<T: Scalar>(d: &Design) -> Result<Vec<ObservedBlock<T>>, AsymptoticsError> {
    (0..d.form_count())
        .map(|k| {
            Ok(ObservedBlock {
                administered: d.administered(k)?,
                fraction: T::of(d.forms()[k].fraction),
            })
        })
        .collect()
}

fn check_dims<T: Scalar>(m: &MomentStructure<T>, d: &Design) -> Result<(), AsymptoticsError> {
    if m.p() != d.p() {
        return Err(AsymptoticsError::Data(format!(
            "moments have {} regressors, design has {}",
            m.p(),
            d.p()
        )));
    }
    Ok(())
}

/// Expected information (negative expected Hessian of the log-likelihood)
/// for all free moment parameters at total sample size `n_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix<T> {
    pub index: VechIndex,
    pub n_total: T,
    pub matrix: SymMatrix<T>,
}

/// Assembles the information entry by entry. With `nₖ` the (real-valued)
/// size of form `k` and `τ⁽ᵏ⁾` its padded inverse covariance:
///
/// * means `(s, t)`: `Σₖ nₖ τ_st`
/// * variances `(ss, uu)`: `½ Σₖ nₖ τ_su²`
/// * variance/covariance `(ss, uv)`: `Σₖ nₖ τ_su τ_sv`
/// * covariances `(st, uv)`: `Σₖ nₖ (τ_su τ_tv + τ_sv τ_tu)`
/// * mean/covariance cross terms: zero
pub fn information<T: Scalar>(
    m: &MomentStructure<T>,
    d: &Design,
    n_total: T,
) -> Result<InformationMatrix<T>, AsymptoticsError> {
    check_dims(m, d)?;
    information_for_blocks(m, &design_blocks(d)?, n_total)
}

/// [`information`] for arbitrary observed-variable groups, such as the
/// missingness patterns found in a dataset.
pub fn information_for_blocks<T: Scalar>(
    m: &MomentStructure<T>,
    blocks: &[ObservedBlock<T>],
    n_total: T,
) -> Result<InformationMatrix<T>, AsymptoticsError> {
    let index = VechIndex::new(m.p());
    let symbols = index.symbols();
    let k_params = symbols.len();
    let mut info = SymMatrix::zeros(k_params);
    let half = T::of(0.5);
    for block in blocks {
        let nk = block.fraction * n_total;
        let tau = padded_inverse(m, &block.administered)?;
        for (i, &(s, t)) in symbols.iter().enumerate() {
            for (j, &(u, v)) in symbols.iter().enumerate().skip(i) {
                let entry = match (s == 0, u == 0) {
                    (true, true) => tau[(t - 1, v - 1)],
                    (true, false) | (false, true) => continue,
                    (false, false) => {
                        let (a, b, c, e) = (s - 1, t - 1, u - 1, v - 1);
                        match (a == b, c == e) {
                            (true, true) => half * tau[(a, c)] * tau[(a, c)],
                            (true, false) => tau[(a, c)] * tau[(a, e)],
                            (false, true) => tau[(c, a)] * tau[(c, b)],
                            (false, false) => tau[(a, c)] * tau[(b, e)] + tau[(a, e)] * tau[(b, c)],
                        }
                    }
                };
                if entry != T::zero() {
                    info.add_to(i, j, nk * entry);
                }
            }
        }
    }
    Ok(InformationMatrix {
        index,
        n_total,
        matrix: info,
    })
}

/// Asymptotic covariance of the moment estimates, the inverse information.
pub fn cov_omega<T: Scalar>(info: &InformationMatrix<T>) -> Result<SymMatrix<T>, AsymptoticsError> {
    match Cholesky::factor(&info.matrix) {
        Ok(c) => Ok(c.inverse()),
        Err(NumericsError::NotPositiveDefinite { .. }) => {
            Err(AsymptoticsError::SingularInformation {
                uncovered: Vec::new(),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Gradient of the raw-moment regression map `(β₀, β) = A⁻¹c` with respect
/// to the free entries of `vech Ω`, where `A = E[(1,x)(1,x)′]` and
/// `c = (ω₀y, Ω_xy)`.
///
/// Columns follow [`VechIndex`]; each is `−A⁻¹ E A⁻¹ c` for a symmetric unit
/// perturbation `E` of `A`, or `A⁻¹eₛ` for an entry of `c`. The `ω_yy`
/// column is zero.
pub fn grad_beta_raw<T: Scalar>(m: &MomentStructure<T>) -> Result<Matrix<T>, AsymptoticsError> {
    let omega = m.omega();
    let p = m.p();
    let y = p + 1;
    let a_inv = Cholesky::factor(&omega.design_block())?.inverse();
    let coef = a_inv.mul_vec(&omega.cross_column());
    let index = VechIndex::new(p);
    let mut g = Matrix::zeros(p + 1, index.parameter_count());
    for (col, (s, t)) in index.symbols().into_iter().enumerate() {
        if t == y {
            if s == y {
                continue;
            }
            for r in 0..=p {
                g[(r, col)] = a_inv[(r, s)];
            }
        } else if s == t {
            for r in 0..=p {
                g[(r, col)] = -a_inv[(r, s)] * coef[s];
            }
        } else {
            for r in 0..=p {
                g[(r, col)] = -(a_inv[(r, s)] * coef[t] + a_inv[(r, t)] * coef[s]);
            }
        }
    }
    Ok(g)
}

/// Gradient of `(β₀, β)` with respect to the centered parameters `(μ, Σ)`,
/// obtained from [`grad_beta_raw`] through `ω₀ₜ = μₜ`,
/// `ω_st = σ_st + μₛμₜ`.
pub fn grad_beta<T: Scalar>(m: &MomentStructure<T>) -> Result<Matrix<T>, AsymptoticsError> {
    let raw = grad_beta_raw(m)?;
    let p = m.p();
    let index = VechIndex::new(p);
    let mu = m.mu();
    let mut g = raw.clone();
    let two = T::of(2.0);
    for t in 1..=p + 1 {
        let mean_col = index.index_of(0, t)?;
        for u in 1..=p + 1 {
            let col = index.index_of(t, u)?;
            let d_omega = if u == t { two * mu[t - 1] } else { mu[u - 1] };
            if d_omega == T::zero() {
                continue;
            }
            for r in 0..=p {
                g[(r, mean_col)] = g[(r, mean_col)] + raw[(r, col)] * d_omega;
            }
        }
    }
    Ok(g)
}

/// Asymptotic covariances and fractions of missing information for the
/// regression coefficients `(β₀, β₁, …, β_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport<T> {
    pub n_total: T,
    pub information: InformationMatrix<T>,
    pub cov_omega: SymMatrix<T>,
    pub grad_beta: Matrix<T>,
    pub cov_beta: SymMatrix<T>,
    /// `σ² (n E[(1,x)(1,x)′])⁻¹`, the fully observed benchmark.
    pub cov_beta_complete: SymMatrix<T>,
    pub fmi: Vec<T>,
}

impl<T: Scalar> AsymptoticReport<T> {
    pub fn se(&self) -> Vec<T> {
        self.cov_beta.diag().into_iter().map(T::sqrt).collect()
    }

    pub fn se_complete(&self) -> Vec<T> {
        self.cov_beta_complete
            .diag()
            .into_iter()
            .map(T::sqrt)
            .collect()
    }

    pub fn information_condition_number(&self) -> Result<T, AsymptoticsError> {
        Ok(sym_eigen(&self.information.matrix)?.condition_number())
    }
}

/// Complete-data covariance `σ² (n E[(1,x)(1,x)′])⁻¹` of the OLS coefficients.
pub fn complete_data_cov_beta<T: Scalar>(
    m: &MomentStructure<T>,
    n_total: T,
) -> Result<SymMatrix<T>, AsymptoticsError> {
    let model = regression_from_moments(m)?;
    let a_inv = Cholesky::factor(&m.omega().design_block())?.inverse();
    Ok(a_inv.scale(model.sigma2 / n_total))
}

pub fn report<T: Scalar>(
    m: &MomentStructure<T>,
    d: &Design,
    n_total: T,
) -> Result<AsymptoticReport<T>, AsymptoticsError> {
    check_dims(m, d)?;
    report_for_blocks(m, &design_blocks(d)?, n_total).map_err(|e| match e {
        AsymptoticsError::SingularInformation { .. } => AsymptoticsError::SingularInformation {
            uncovered: d.validate_estimability().uncovered_pairs,
        },
        other => other,
    })
}

/// [`report`] for arbitrary observed-variable groups. When every group
/// observes all variables there is no missing information.
pub fn report_for_blocks<T: Scalar>(
    m: &MomentStructure<T>,
    blocks: &[ObservedBlock<T>],
    n_total: T,
) -> Result<AsymptoticReport<T>, AsymptoticsError> {
    let info = information_for_blocks(m, blocks, n_total)?;
    let cov_omega = cov_omega(&info)?;
    let grad = grad_beta(m)?;
    let cov_beta = grad.sandwich(&cov_omega);
    let cov_beta_complete = complete_data_cov_beta(m, n_total)?;
    let complete = blocks
        .iter()
        .all(|b| b.administered.len() == m.p() + 1 || b.fraction == T::zero());
    let fmi = if complete {
        vec![T::zero(); m.p() + 1]
    } else {
        cov_beta
            .diag()
            .into_iter()
            .zip(cov_beta_complete.diag())
            .map(|(missing, complete)| {
                let f = T::one() - complete / missing;
                // Round-off below zero only; genuine negatives are left visible.
                if f < T::zero() && f > -T::of(1e-9) {
                    T::zero()
                } else {
                    f
                }
            })
            .collect()
    };
    Ok(AsymptoticReport {
        n_total,
        information: info,
        cov_omega,
        grad_beta: grad,
        cov_beta,
        cov_beta_complete,
        fmi,
    })
}

/// JSON view of an [`AsymptoticReport`].
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub n_total: f64,
    pub coefficients: Vec<String>,
    pub cov_beta: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub cov_beta_complete: Vec<Vec<f64>>,
    pub se_complete: Vec<f64>,
    pub fmi: Vec<f64>,
    pub information_condition_number: f64,
}

impl ReportSummary {
    pub fn new<T: Scalar>(r: &AsymptoticReport<T>, d: &Design) -> Result<Self, AsymptoticsError> {
        let to_f = |v: Vec<T>| v.into_iter().map(T::to_f64_lossy).collect::<Vec<_>>();
        let rows = |s: &SymMatrix<T>| {
            s.to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(T::to_f64_lossy).collect())
                .collect()
        };
        let coefficients = std::iter::once("(intercept)".to_string())
            .chain(d.variables().iter().cloned())
            .collect();
        Ok(Self {
            n_total: r.n_total.to_f64_lossy(),
            coefficients,
            cov_beta: rows(&r.cov_beta),
            se: to_f(r.se()),
            cov_beta_complete: rows(&r.cov_beta_complete),
            se_complete: to_f(r.se_complete()),
            fmi: to_f(r.fmi.clone()),
            information_condition_number: r.information_condition_number()?.to_f64_lossy(),
        })
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed-data log-likelihood of `data` under the normal model with
/// moments `m`, each row contributing the density of its administered
/// variables. Rows must carry form labels matching their observed cells.
pub fn loglik(
    data: &Dataset,
    m: &MomentStructure<f64>,
    d: &Design,
) -> Result<f64, AsymptoticsError> {
    check_dims(m, d)?;
    if data.p() != d.p() {
        return Err(AsymptoticsError::Data(format!(
            "dataset has {} regressors, design has {}",
            data.p(),
            d.p()
        )));
    }
    let labels = data
        .forms()
        .ok_or_else(|| AsymptoticsError::Data("rows carry no form labels".into()))?;
    let mut per_form = Vec::with_capacity(d.form_count());
    for k in 0..d.form_count() {
        let idx = d.administered(k)?;
        let chol = Cholesky::factor(&m.sigma().submatrix(&idx))?;
        let mean: Vec<f64> = idx.iter().map(|&i| m.mu()[i]).collect();
        per_form.push((idx, chol, mean));
    }
    let mut total = 0.0;
    let mut resid = Vec::new();
    for (i, &k) in labels.iter().enumerate() {
        let (idx, chol, mean) = per_form
            .get(k)
            .ok_or_else(|| AsymptoticsError::Data(format!("row {i} has unknown form {k}")))?;
        let observed = (0..data.width()).filter(|&j| data.is_observed(i, j));
        if !observed.eq(idx.iter().copied()) {
            return Err(AsymptoticsError::Data(format!(
                "row {i}: observed cells do not match form {k}"
            )));
        }
        resid.clear();
        resid.extend(idx.iter().zip(mean).map(|(&j, &mu)| data.get(i, j) - mu));
        total += -0.5 * (idx.len() as f64 * LN_2PI + chol.log_det() + chol.inv_quad_form(&resid));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{builtin_bigfive, complete_design, design1, design2};
    use crate::moments::{big_five_covariance, big_five_model, build_moments, RegressionModel};

    fn bigfive_moments() -> MomentStructure<f64> {
        build_moments(&[0.0; 5], &big_five_covariance(), &big_five_model()).unwrap()
    }

    fn identity_moments(p: usize) -> MomentStructure<f64> {
        MomentStructure::new(vec![0.0; p + 1], SymMatrix::<f64>::identity(p + 1)).unwrap()
    }

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn tau_complete_is_full_inverse() {
        let m = bigfive_moments();
        let d = complete_design(names(5), "y");
        let t = tau(&m, &d, 0).unwrap();
        let inv = crate::numerics::spd_inverse(m.sigma()).unwrap();
        assert!(t.matrix.max_abs_diff(&inv) < 1e-14);
    }

    #[test]
    fn tau_identity_design2_form1() {
        let t = tau(&identity_moments(3), &design2(), 0).unwrap();
        assert_eq!(t.matrix, SymMatrix::diagonal(&[0.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn tau_bigfive_form1_matches_block_inverse() {
        let m = bigfive_moments();
        let t = tau(&m, &builtin_bigfive(), 0).unwrap();
        let block = m.sigma().submatrix(&[0, 1, 5]);
        let inv = crate::numerics::spd_inverse(&block).unwrap();
        for (a, &i) in [0usize, 1, 5].iter().enumerate() {
            for (b, &j) in [0usize, 1, 5].iter().enumerate() {
                assert!((t.matrix[(i, j)] - inv[(a, b)]).abs() < 1e-14);
            }
        }
        for i in 2..5 {
            for j in 0..6 {
                assert_eq!(t.matrix[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn information_identity_complete() {
        let d = complete_design(names(2), "y");
        let info = information(&identity_moments(2), &d, 2.0).unwrap();
        let idx = info.index;
        let s11 = idx.index_of(1, 1).unwrap();
        let s12 = idx.index_of(1, 2).unwrap();
        let m1 = idx.index_of(0, 1).unwrap();
        assert_eq!(info.matrix[(s11, s11)], 1.0);
        assert_eq!(info.matrix[(s12, s12)], 2.0);
        assert_eq!(info.matrix[(m1, m1)], 2.0);
        assert_eq!(info.matrix[(m1, s11)], 0.0);
    }

    #[test]
    fn design1_information_has_zero_row_and_is_singular() {
        let m = identity_moments(3);
        let info = information(&m, &design1(), 100.0).unwrap();
        let row = info.index.index_of(1, 2).unwrap();
        assert!((0..info.matrix.dim()).all(|j| info.matrix[(row, j)] == 0.0));
        assert!(matches!(
            cov_omega(&info),
            Err(AsymptoticsError::SingularInformation { .. })
        ));
        match report(&m, &design1(), 100.0) {
            Err(AsymptoticsError::SingularInformation { uncovered }) => {
                assert!(uncovered.contains(&("x1".into(), "x2".into())));
            }
            other => panic!("expected singular information, got {other:?}"),
        }
    }

    #[test]
    fn complete_design_cov_omega_known_values() {
        let n = 50.0;
        let sigma = SymMatrix::<f64>::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.5, 0.4],
            vec![0.1, 0.4, 1.0],
        ])
        .unwrap();
        let m = MomentStructure::new(vec![0.0; 3], sigma.clone()).unwrap();
        let d = complete_design(names(2), "y");
        let v = cov_omega(&information(&m, &d, n).unwrap()).unwrap();
        let idx = VechIndex::new(2);
        for s in 1..=3 {
            let i = idx.index_of(0, s).unwrap();
            assert!((v[(i, i)] - sigma[(s - 1, s - 1)] / n).abs() < 1e-14);
            let i = idx.index_of(s, s).unwrap();
            let expected = 2.0 * sigma[(s - 1, s - 1)].powi(2) / n;
            assert!((v[(i, i)] - expected).abs() < 1e-13);
        }
        let i = idx.index_of(0, 1).unwrap();
        let identity_v = cov_omega(&information(&identity_moments(2), &d, n).unwrap()).unwrap();
        assert!((identity_v[(i, i)] - 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn grad_beta_intercept_column_is_first_column_of_inverse() {
        let m = bigfive_moments();
        let g = grad_beta_raw(&m).unwrap();
        let col = VechIndex::new(5).index_of(0, 6).unwrap();
        let a_inv = crate::numerics::spd_inverse(&m.omega().design_block()).unwrap();
        for r in 0..6 {
            assert!((g[(r, col)] - a_inv[(r, 0)]).abs() < 1e-15);
        }
        let yy = VechIndex::new(5).index_of(6, 6).unwrap();
        assert!((0..6).all(|r| g[(r, yy)] == 0.0));
    }

    #[test]
    fn grad_beta_zero_slopes() {
        let model = RegressionModel::new(0.0, vec![0.0; 5], 1.0).unwrap();
        let m = build_moments(&[0.0; 5], &big_five_covariance(), &model).unwrap();
        let g = grad_beta(&m).unwrap();
        let idx = VechIndex::new(5);
        for j in 1..=5 {
            let col = idx.index_of(j, j).unwrap();
            assert!((0..6).all(|r| g[(r, col)] == 0.0));
        }
    }

    #[test]
    fn bigfive_anchor() {
        let r = report(&bigfive_moments(), &builtin_bigfive(), 1000.0).unwrap();
        let se = r.se();
        let expected = [0.0791, 0.0856, 0.0926, 0.0824, 0.0832];
        for (got, want) in se[1..].iter().zip(expected) {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
        assert!((r.fmi[1] - 0.736).abs() < 0.01);
    }

    #[test]
    fn complete_design_has_no_missing_information() {
        let m = bigfive_moments();
        let d = complete_design(names(5), "y");
        let r = report(&m, &d, 1000.0).unwrap();
        assert!(r.cov_beta.max_abs_diff(&r.cov_beta_complete) < 1e-10);
        assert!(r.fmi.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn loglik_at_mode() {
        let d = design2();
        let data = Dataset::from_parts(
            names(3).into_iter().chain(["y".to_string()]).collect(),
            vec![f64::NAN, 0.0, 0.0, 0.0],
            vec![false, true, true, true],
            Some(vec![0]),
        )
        .unwrap();
        let ll = loglik(&data, &identity_moments(3), &d).unwrap();
        assert!((ll + 1.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn loglik_rejects_mismatched_rows() {
        let data = Dataset::from_parts(
            names(3).into_iter().chain(["y".to_string()]).collect(),
            vec![1.0, 0.0, 0.0, 0.0],
            vec![true; 4],
            Some(vec![0]),
        )
        .unwrap();
        assert!(matches!(
            loglik(&data, &identity_moments(3), &design2()),
            Err(AsymptoticsError::Data(_))
        ));
    }
}
