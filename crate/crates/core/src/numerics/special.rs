//! Distribution functions used by power calculations and Rubin pooling.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::erf;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::NumericsError;

/// Bound on the Poisson weight left out of the noncentral series.
const SERIES_TOLERANCE: f64 = 1e-17;

/// Degrees of freedom above which t quantiles come from the Cornish–Fisher
/// expansion around the normal; statrs' inversion loses accuracy there.
const T_EXPANSION_LIMIT: f64 = 1e4;

fn check_probability(p: f64) -> Result<(), NumericsError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(NumericsError::Domain(format!(
            "probability {p} is outside (0, 1)"
        )))
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> Result<f64, NumericsError> {
    check_probability(p)?;
    Ok(-std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p))
}

/// Central chi-square CDF via the regularized lower incomplete gamma function.
pub fn chisq_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * df, 0.5 * x)
    }
}

pub fn chisq_quantile(p: f64, df: f64) -> Result<f64, NumericsError> {
    check_probability(p)?;
    let dist = ChiSquared::new(df).map_err(|e| NumericsError::Domain(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

/// Noncentral chi-square CDF as a Poisson(λ/2) mixture of central CDFs with
/// `df + 2j` degrees of freedom. Terms are accumulated outward from the
/// Poisson mode in both directions until a geometric bound on the
/// remaining Poisson weight falls below the tolerance.
pub fn noncentral_chisq_cdf(x: f64, df: u32, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "noncentrality must be nonnegative");
    let k = f64::from(df);
    if lambda == 0.0 {
        return chisq_cdf(x, k);
    }
    if x <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * lambda;
    let log_weight = |j: f64| -half + j * half.ln() - ln_gamma(j + 1.0);
    let mode = half.floor();
    let mut total = 0.0;

    // Upward: the tail beyond j is at most w·r/(1−r) with r = (λ/2)/(j+1).
    let mut j = mode;
    loop {
        let w = log_weight(j).exp();
        total += w * chisq_cdf(x, k + 2.0 * j);
        let r = half / (j + 1.0);
        if r < 1.0 && w * r / (1.0 - r) < SERIES_TOLERANCE {
            break;
        }
        j += 1.0;
    }
    // Downward: the tail below j is at most w·r/(1−r) with r = j/(λ/2).
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = log_weight(j).exp();
        total += w * chisq_cdf(x, k + 2.0 * j);
        let r = j / half;
        if r < 1.0 && w * r / (1.0 - r) < SERIES_TOLERANCE {
            break;
        }
        j -= 1.0;
    }
    total.clamp(0.0, 1.0)
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_cdf(x);
    }
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .cdf(x)
}

pub fn t_quantile(df: f64, p: f64) -> Result<f64, NumericsError> {
    check_probability(p)?;
    if !(df > 0.0) {
        return Err(NumericsError::Domain(format!(
            "degrees of freedom {df} must be positive"
        )));
    }
    let z = normal_quantile(p)?;
    if df >= T_EXPANSION_LIMIT {
        // Terms through 1/df³; the remainder is O(df⁻⁴).
        let z2 = z * z;
        let z3 = z2 * z;
        let z5 = z3 * z2;
        let z7 = z5 * z2;
        let g1 = (z3 + z) / 4.0;
        let g2 = (5.0 * z5 + 16.0 * z3 + 3.0 * z) / 96.0;
        let g3 = (3.0 * z7 + 19.0 * z5 + 17.0 * z3 - 15.0 * z) / 384.0;
        return Ok(z + g1 / df + g2 / (df * df) + g3 / (df * df * df));
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| NumericsError::Domain(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}
