//! Estimators for regressions with missing regressors: complete-data OLS,
//! normal-theory maximum likelihood by EM, multiple imputation under the
//! normal model or by predictive mean matching, and Rubin's pooling rules.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{report_for_blocks, AsymptoticReport, AsymptoticsError, ObservedBlock};
use crate::data::{Dataset, Pattern};
use crate::moments::{regression_from_moments, MomentStructure, MomentsError};
use crate::numerics::{t_quantile, Cholesky, NumericsError, RngStream, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error(
        "EM did not converge in {iterations} iterations (last relative change {last_change:e})"
    )]
    NonConvergence { iterations: usize, last_change: f64 },
    #[error("column {column} has {observed} observed values, fewer than the {required} donors requested")]
    InsufficientDonors {
        column: String,
        observed: usize,
        required: usize,
    },
    #[error("invalid input: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Complete,
    Em,
    MiMvn,
    MiPmm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Complete => "complete",
            Method::Em => "em",
            Method::MiMvn => "mi-mvn",
            Method::MiPmm => "mi-pmm",
        })
    }
}

/// Point estimates and standard errors for `(β₀, β₁, …, β_p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub method: Method,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Standard errors in coefficient order, intercept first.
    pub se: Vec<f64>,
}

impl FitResult {
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.beta0)
            .chain(self.beta.iter().copied())
            .collect()
    }
}

/// Ordinary least squares on a fully observed dataset. Standard errors use
/// the unbiased residual variance with `n − p − 1` degrees of freedom.
pub fn ols(data: &Dataset) -> Result<FitResult, EstimatorError> {
    if data.has_missing() {
        return Err(EstimatorError::Domain(
            "OLS needs a fully observed dataset".into(),
        ));
    }
    let p = data.p();
    let n = data.n();
    if n <= p + 1 {
        return Err(EstimatorError::Domain(format!(
            "{n} rows are too few for {} coefficients",
            p + 1
        )));
    }
    let rows = (0..n).map(|i| data.row(i));
    let (coef, rss, xtx) = least_squares(rows, p, |r| r[p], |r, k| r[k])?;
    let s2 = rss / (n - p - 1) as f64;
    let inv = xtx.inverse();
    let se = inv.diag().into_iter().map(|v| (s2 * v).sqrt()).collect();
    Ok(FitResult {
        method: Method::Complete,
        beta0: coef[0],
        beta: coef[1..].to_vec(),
        sigma2: s2,
        se,
    })
}

/// Least squares with an intercept and `k` predictors read by `x(row, j)`.
/// Returns coefficients, the residual sum of squares and the Cholesky
/// factor of `X′X`.
fn least_squares<'a, I, FY, FX>(
    rows: I,
    k: usize,
    y: FY,
    x: FX,
) -> Result<(Vec<f64>, f64, Cholesky<f64>), EstimatorError>
where
    I: Iterator<Item = &'a [f64]> + Clone,
    FY: Fn(&[f64]) -> f64,
    FX: Fn(&[f64], usize) -> f64,
{
    let width = k + 1;
    let mut xtx = vec![0.0; width * width];
    let mut xty = vec![0.0; width];
    let mut z = vec![0.0; width];
    for row in rows.clone() {
        z[0] = 1.0;
        for j in 0..k {
            z[j + 1] = x(row, j);
        }
        let yv = y(row);
        for a in 0..width {
            xty[a] += z[a] * yv;
            for b in a..width {
                xtx[a * width + b] += z[a] * z[b];
            }
        }
    }
    let gram = SymMatrix::from_fn(width, |a, b| xtx[a * width + b]);
    let chol = Cholesky::factor(&gram).map_err(|_| EstimatorError::RankDeficient)?;
    let coef = chol.solve(&xty);
    let mut rss = 0.0;
    for row in rows {
        let fitted = coef[0] + (0..k).map(|j| coef[j + 1] * x(row, j)).sum::<f64>();
        let r = y(row) - fitted;
        rss += r * r;
    }
    Ok((coef, rss, chol))
}

/// Relative log-likelihood change below which EM stops.
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERATIONS: usize = 500;

/// Maximum likelihood fit of the normal model by EM.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub moments: MomentStructure<f64>,
    pub fit: FitResult,
    /// Observed-data log-likelihood at the start of each iteration, ending
    /// with the value at the returned estimate.
    pub loglik: Vec<f64>,
    pub iterations: usize,
    /// Asymptotic report at the estimate with the observed pattern counts.
    pub report: AsymptoticReport<f64>,
}

/// Observed-data sufficient statistics for one missingness pattern, in
/// coordinates shifted by the available-case means.
struct PatternStats {
    observed: Vec<usize>,
    missing: Vec<usize>,
    count: f64,
    sum: Vec<f64>,
    /// Row-major `|O| × |O|` sum of outer products.
    cross: Vec<f64>,
}

struct EmProblem {
    width: usize,
    n: f64,
    shift: Vec<f64>,
    patterns: Vec<PatternStats>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl EmProblem {
    fn new(data: &Dataset, patterns: &[Pattern]) -> Result<Self, EstimatorError> {
        let w = data.width();
        let mut shift = vec![0.0; w];
        for (j, s) in shift.iter_mut().enumerate() {
            let (total, count) = (0..data.n())
                .filter_map(|i| data.value(i, j))
                .fold((0.0, 0usize), |(t, c), v| (t + v, c + 1));
            if count == 0 {
                return Err(EstimatorError::Domain(format!(
                    "column {} has no observed values",
                    data.names()[j]
                )));
            }
            *s = total / count as f64;
        }
        let patterns = patterns
            .iter()
            .map(|pat| {
                let o = pat.observed.len();
                let mut sum = vec![0.0; o];
                let mut cross = vec![0.0; o * o];
                let mut z = vec![0.0; o];
                for &i in &pat.rows {
                    for (a, &j) in pat.observed.iter().enumerate() {
                        z[a] = data.get(i, j) - shift[j];
                    }
                    for a in 0..o {
                        sum[a] += z[a];
                        for b in a..o {
                            cross[a * o + b] += z[a] * z[b];
                        }
                    }
                }
                for a in 0..o {
                    for b in 0..a {
                        cross[a * o + b] = cross[b * o + a];
                    }
                }
                PatternStats {
                    observed: pat.observed.clone(),
                    missing: pat.missing.clone(),
                    count: pat.rows.len() as f64,
                    sum,
                    cross,
                }
            })
            .collect();
        Ok(Self {
            width: w,
            n: data.n() as f64,
            shift,
            patterns,
        })
    }

    /// Available-case means and variances with zero covariances.
    fn start(&self) -> (Vec<f64>, SymMatrix<f64>) {
        let w = self.width;
        let mut total = vec![0.0; w];
        let mut squares = vec![0.0; w];
        let mut count = vec![0.0; w];
        for pat in &self.patterns {
            let o = pat.observed.len();
            for (a, &j) in pat.observed.iter().enumerate() {
                total[j] += pat.sum[a];
                squares[j] += pat.cross[a * o + a];
                count[j] += pat.count;
            }
        }
        let mu: Vec<f64> = (0..w).map(|j| total[j] / count[j]).collect();
        let var: Vec<f64> = (0..w)
            .map(|j| squares[j] / count[j] - mu[j] * mu[j])
            .collect();
        (mu, SymMatrix::diagonal(&var))
    }

    /// One E-step: observed-data log-likelihood at `(mu, sigma)` and the
    /// expected complete-data first and second moment sums.
    fn e_step(
        &self,
        mu: &[f64],
        sigma: &SymMatrix<f64>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>), EstimatorError> {
        let w = self.width;
        let mut t1 = vec![0.0; w];
        let mut t2 = vec![0.0; w * w];
        let mut ll = 0.0;
        for pat in &self.patterns {
            let obs = &pat.observed;
            let mis = &pat.missing;
            let o = obs.len();
            let n = pat.count;
            let s = &pat.sum;
            let ss = &pat.cross;
            let chol = Cholesky::factor(&sigma.submatrix(obs))?;
            let inv = chol.inverse();
            let mu_o: Vec<f64> = obs.iter().map(|&j| mu[j]).collect();

            // tr(Σ_OO⁻¹ Σᵢ (xᵢ − μ)(xᵢ − μ)′)
            let mut quad = 0.0;
            for a in 0..o {
                for b in 0..o {
                    let q = ss[a * o + b] - s[a] * mu_o[b] - mu_o[a] * s[b] + n * mu_o[a] * mu_o[b];
                    quad += inv[(a, b)] * q;
                }
            }
            ll -= 0.5 * (n * (o as f64 * LN_2PI + chol.log_det()) + quad);

            for (a, &ja) in obs.iter().enumerate() {
                t1[ja] += s[a];
                for (b, &jb) in obs.iter().enumerate() {
                    t2[ja * w + jb] += ss[a * o + b];
                }
            }
            if mis.is_empty() {
                continue;
            }
            let m = mis.len();
            // B = Σ_MO Σ_OO⁻¹, C = Σ_MM − B Σ_OM, x̂_M = a + B x_O.
            let mut bmat = vec![0.0; m * o];
            for (r, &jm) in mis.iter().enumerate() {
                for c in 0..o {
                    bmat[r * o + c] = (0..o).map(|k| sigma[(jm, obs[k])] * inv[(k, c)]).sum();
                }
            }
            let mut cond = vec![0.0; m * m];
            for (r1, &j1) in mis.iter().enumerate() {
                for (r2, &j2) in mis.iter().enumerate() {
                    let adj: f64 = (0..o).map(|k| bmat[r1 * o + k] * sigma[(obs[k], j2)]).sum();
                    cond[r1 * m + r2] = sigma[(j1, j2)] - adj;
                }
            }
            let intercept: Vec<f64> = mis
                .iter()
                .enumerate()
                .map(|(r, &jm)| mu[jm] - (0..o).map(|k| bmat[r * o + k] * mu_o[k]).sum::<f64>())
                .collect();
            // B s and B SS
            let bs: Vec<f64> = (0..m)
                .map(|r| (0..o).map(|k| bmat[r * o + k] * s[k]).sum())
                .collect();
            let mut bss = vec![0.0; m * o];
            for r in 0..m {
                for c in 0..o {
                    bss[r * o + c] = (0..o).map(|k| bmat[r * o + k] * ss[k * o + c]).sum();
                }
            }
            for (r, &jm) in mis.iter().enumerate() {
                t1[jm] += n * intercept[r] + bs[r];
                for (c, &jo) in obs.iter().enumerate() {
                    let v = intercept[r] * s[c] + bss[r * o + c];
                    t2[jm * w + jo] += v;
                    t2[jo * w + jm] += v;
                }
                for (r2, &jm2) in mis.iter().enumerate() {
                    let bssb: f64 = (0..o).map(|k| bss[r * o + k] * bmat[r2 * o + k]).sum();
                    t2[jm * w + jm2] += n * intercept[r] * intercept[r2]
                        + intercept[r] * bs[r2]
                        + bs[r] * intercept[r2]
                        + bssb
                        + n * cond[r * m + r2];
                }
            }
        }
        Ok((ll, t1, t2))
    }

    fn m_step(&self, t1: &[f64], t2: &[f64]) -> (Vec<f64>, SymMatrix<f64>) {
        let w = self.width;
        let mu: Vec<f64> = t1.iter().map(|v| v / self.n).collect();
        let sigma = SymMatrix::from_fn(w, |a, b| t2[a * w + b] / self.n - mu[a] * mu[b]);
        (mu, sigma)
    }

    /// Runs EM to convergence; returns shifted-coordinate estimates and the
    /// log-likelihood trace.
    fn solve(&self) -> Result<(Vec<f64>, SymMatrix<f64>, Vec<f64>), EstimatorError> {
        let (mut mu, mut sigma) = self.start();
        let mut trace: Vec<f64> = Vec::new();
        let mut last_change = f64::INFINITY;
        for _ in 0..=EM_MAX_ITERATIONS {
            let (ll, t1, t2) = self.e_step(&mu, &sigma)?;
            if let Some(&prev) = trace.last() {
                last_change = (ll - prev).abs() / f64::abs(prev).max(f64::MIN_POSITIVE);
                trace.push(ll);
                if last_change < EM_TOLERANCE {
                    return Ok((mu, sigma, trace));
                }
            } else {
                trace.push(ll);
            }
            (mu, sigma) = self.m_step(&t1, &t2);
        }
        Err(EstimatorError::NonConvergence {
            iterations: EM_MAX_ITERATIONS,
            last_change,
        })
    }
}

/// Maximum likelihood estimates of the normal model from incomplete data by
/// EM, with `β̂` from the fitted moments and standard errors from the
/// expected information at the estimate under the observed pattern counts.
pub fn em_mvn(data: &Dataset) -> Result<EmFit, EstimatorError> {
    let patterns = data.patterns();
    let (moments, loglik) = em_moments(data, &patterns)?;
    let blocks: Vec<ObservedBlock<f64>> = patterns
        .iter()
        .map(|pat| ObservedBlock {
            administered: pat.observed.clone(),
            fraction: pat.rows.len() as f64 / data.n() as f64,
        })
        .collect();
    let report = report_for_blocks(&moments, &blocks, data.n() as f64)?;
    let model = regression_from_moments(&moments)?;
    let fit = FitResult {
        method: Method::Em,
        beta0: model.beta0,
        beta: model.beta,
        sigma2: model.sigma2,
        se: report.se(),
    };
    Ok(EmFit {
        moments,
        fit,
        iterations: loglik.len() - 1,
        loglik,
        report,
    })
}

fn em_moments(
    data: &Dataset,
    patterns: &[Pattern],
) -> Result<(MomentStructure<f64>, Vec<f64>), EstimatorError> {
    let problem = EmProblem::new(data, patterns)?;
    let (mu, sigma, trace) = problem.solve()?;
    let mu = mu.iter().zip(&problem.shift).map(|(m, s)| m + s).collect();
    Ok((MomentStructure::new(mu, sigma)?, trace))
}

/// Bootstrap resamples tried per imputation before giving up.
const BOOTSTRAP_ATTEMPTS: usize = 20;

/// `m` completed datasets under the normal model. Each imputation draws its
/// parameters by running EM on a bootstrap resample of the rows, then fills
/// every missing cell from its conditional normal distribution given the
/// row's observed cells. Resamples on which EM fails are redrawn.
pub fn mi_mvn(
    data: &Dataset,
    m: usize,
    stream: &mut RngStream,
) -> Result<Vec<Dataset>, EstimatorError> {
    if !data.has_missing() {
        return Ok(vec![data.clone(); m]);
    }
    let patterns = data.patterns();
    let n = data.n();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut attempt = 0;
        let params = loop {
            attempt += 1;
            let rows: Vec<usize> = (0..n).map(|_| stream.index(n)).collect();
            let boot = data.select_rows(&rows);
            match em_moments(&boot, &boot.patterns()) {
                Ok((moments, _)) => break moments,
                Err(e) if attempt >= BOOTSTRAP_ATTEMPTS => return Err(e),
                Err(_) => continue,
            }
        };
        out.push(impute_conditional(data, &patterns, &params, stream)?);
    }
    Ok(out)
}

fn impute_conditional(
    data: &Dataset,
    patterns: &[Pattern],
    params: &MomentStructure<f64>,
    stream: &mut RngStream,
) -> Result<Dataset, EstimatorError> {
    let mut completed = data.clone();
    let mu = params.mu();
    let sigma = params.sigma();
    for pat in patterns.iter().filter(|p| !p.missing.is_empty()) {
        let obs = &pat.observed;
        let mis = &pat.missing;
        let o = obs.len();
        let m = mis.len();
        let inv = Cholesky::factor(&sigma.submatrix(obs))?.inverse();
        let mut bmat = vec![0.0; m * o];
        for (r, &jm) in mis.iter().enumerate() {
            for c in 0..o {
                bmat[r * o + c] = (0..o).map(|k| sigma[(jm, obs[k])] * inv[(k, c)]).sum();
            }
        }
        let cond = SymMatrix::from_fn(m, |r1, r2| {
            sigma[(mis[r1], mis[r2])]
                - (0..o)
                    .map(|k| bmat[r1 * o + k] * sigma[(obs[k], mis[r2])])
                    .sum::<f64>()
        });
        let chol = Cholesky::factor(&cond)?;
        let lower = chol.lower();
        let mut z = vec![0.0; m];
        let mut dev = vec![0.0; o];
        for &i in &pat.rows {
            for (k, &j) in obs.iter().enumerate() {
                dev[k] = data.get(i, j) - mu[j];
            }
            for zr in z.iter_mut() {
                *zr = stream.std_normal();
            }
            for (r, &jm) in mis.iter().enumerate() {
                let mean = mu[jm] + (0..o).map(|k| bmat[r * o + k] * dev[k]).sum::<f64>();
                let noise: f64 = (0..=r).map(|k| lower[(r, k)] * z[k]).sum();
                completed.fill(i, jm, mean + noise);
            }
        }
    }
    Ok(completed)
}

pub const PMM_DONORS: usize = 5;
pub const PMM_CYCLES: usize = 10;

/// `m` completed datasets by chained predictive mean matching. Each chain
/// starts from random draws of observed values and then, for `cycles`
/// rounds, regresses every incomplete regressor on all other columns
/// (observed rows only), draws the coefficients from their posterior, and
/// gives each missing cell the observed value of one of its `k_donors`
/// nearest donors, chosen uniformly. Donors are scored with the fitted
/// coefficients and recipients with the drawn ones. The outcome is never
/// imputed.
pub fn mi_pmm(
    data: &Dataset,
    m: usize,
    k_donors: usize,
    cycles: usize,
    stream: &mut RngStream,
) -> Result<Vec<Dataset>, EstimatorError> {
    if k_donors == 0 {
        return Err(EstimatorError::Domain(
            "at least one donor is required".into(),
        ));
    }
    let n = data.n();
    let w = data.width();
    let targets: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..data.p())
        .filter_map(|j| {
            let (donors, recipients): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| data.is_observed(i, j));
            (!recipients.is_empty()).then_some((j, donors, recipients))
        })
        .collect();
    for (j, donors, _) in &targets {
        if donors.len() < k_donors {
            return Err(EstimatorError::InsufficientDonors {
                column: data.names()[*j].clone(),
                observed: donors.len(),
                required: k_donors,
            });
        }
    }

    let mut out = Vec::with_capacity(m);
    let mut pred = vec![0.0; n];
    let mut chosen = Vec::new();
    for _ in 0..m {
        let mut values: Vec<f64> = (0..n * w).map(|c| data.get(c / w, c % w)).collect();
        for (j, donors, recipients) in &targets {
            for &r in recipients {
                let d = donors[stream.index(donors.len())];
                values[r * w + j] = data.get(d, *j);
            }
        }
        for _ in 0..cycles {
            for (j, donors, recipients) in &targets {
                let j = *j;
                let others = |row: &[f64], k: usize| if k < j { row[k] } else { row[k + 1] };
                let rows = donors.iter().map(|&i| &values[i * w..(i + 1) * w]);
                let (coef, rss, chol) = least_squares(rows, w - 1, |r| r[j], others)?;
                let drawn = posterior_draw(&coef, rss, donors.len(), &chol, stream)?;
                let predict = |c: &[f64], row: &[f64]| {
                    c[0] + (0..w - 1).map(|k| c[k + 1] * others(row, k)).sum::<f64>()
                };
                for &i in donors {
                    pred[i] = predict(&coef, &values[i * w..(i + 1) * w]);
                }
                for &i in recipients {
                    pred[i] = predict(&drawn, &values[i * w..(i + 1) * w]);
                }
                let mut sorted: Vec<usize> = donors.clone();
                sorted.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(a.cmp(&b)));
                let keys: Vec<f64> = sorted.iter().map(|&i| pred[i]).collect();
                chosen.clear();
                for &r in recipients {
                    let near = nearest(&keys, pred[r], k_donors);
                    let d = sorted[near[stream.index(near.len())]];
                    chosen.push(data.get(d, j));
                }
                for (&r, &v) in recipients.iter().zip(&chosen) {
                    values[r * w + j] = v;
                }
            }
        }
        let mut completed = data.clone();
        for (j, _, recipients) in &targets {
            for &r in recipients {
                completed.fill(r, *j, values[r * w + j]);
            }
        }
        out.push(completed);
    }
    Ok(out)
}

/// Regression coefficients drawn from their posterior under a flat prior:
/// `σ*² = RSS/χ²_{n−k}` and `β* ~ N(β̂, σ*² (XᵀX)⁻¹)`.
fn posterior_draw(
    coef: &[f64],
    rss: f64,
    n: usize,
    chol: &Cholesky<f64>,
    stream: &mut RngStream,
) -> Result<Vec<f64>, EstimatorError> {
    let k = coef.len();
    if n <= k {
        return Err(EstimatorError::RankDeficient);
    }
    let chi2: f64 = (0..n - k).map(|_| stream.std_normal().powi(2)).sum();
    let sigma = (rss / chi2).sqrt();
    // Solve Lᵀ v = z so that v has covariance (L Lᵀ)⁻¹.
    let lower = chol.lower();
    let z: Vec<f64> = (0..k).map(|_| stream.std_normal()).collect();
    let mut v = vec![0.0; k];
    for a in (0..k).rev() {
        let s: f64 = ((a + 1)..k).map(|b| lower[(b, a)] * v[b]).sum();
        v[a] = (z[a] - s) / lower[(a, a)];
    }
    Ok(coef.iter().zip(&v).map(|(c, d)| c + sigma * d).collect())
}

/// Positions of the `k` entries of sorted `keys` closest to `x`; ties prefer
/// the lower position.
fn nearest(keys: &[f64], x: f64, k: usize) -> Vec<usize> {
    let k = k.min(keys.len());
    let split = keys.partition_point(|&v| v < x);
    let (mut lo, mut hi) = (split, split);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let take_low = match (lo > 0, hi < keys.len()) {
            (true, true) => x - keys[lo - 1] <= keys[hi] - x,
            (true, false) => true,
            (false, _) => false,
        };
        if take_low {
            lo -= 1;
            out.push(lo);
        } else {
            out.push(hi);
            hi += 1;
        }
    }
    out
}

/// Rubin's rules for `M` completed-data fits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledResult {
    pub m: usize,
    pub estimates: Vec<f64>,
    pub within: Vec<f64>,
    pub between: Vec<f64>,
    pub total: Vec<f64>,
    pub df: Vec<f64>,
    pub fmi: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

impl PooledResult {
    pub fn se(&self) -> Vec<f64> {
        self.total.iter().map(|t| t.sqrt()).collect()
    }
}

/// Pools completed-data fits: `Q̄` the mean estimate, `W` the mean squared
/// standard error, `B` the between-imputation variance and
/// `T = W + (1 + 1/M) B`. Degrees of freedom follow Barnard and Rubin with
/// complete-data degrees of freedom `complete_df`; the reported fraction of
/// missing information is `(1 + 1/M) B / T`. Intervals are 95%.
pub fn rubin_pool(fits: &[FitResult], complete_df: f64) -> Result<PooledResult, EstimatorError> {
    let m = fits.len();
    if m < 2 {
        return Err(EstimatorError::Domain(format!(
            "pooling needs at least two imputations, got {m}"
        )));
    }
    let width = fits[0].se.len();
    if fits
        .iter()
        .any(|f| f.se.len() != width || f.beta.len() + 1 != width)
    {
        return Err(EstimatorError::Domain(
            "fits have different coefficient layouts".into(),
        ));
    }
    if !(complete_df > 0.0) {
        return Err(EstimatorError::Domain(format!(
            "complete-data degrees of freedom {complete_df} must be positive"
        )));
    }
    let mf = m as f64;
    let coefs: Vec<Vec<f64>> = fits.iter().map(FitResult::coefficients).collect();
    let mut res = PooledResult {
        m,
        estimates: Vec::with_capacity(width),
        within: Vec::with_capacity(width),
        between: Vec::with_capacity(width),
        total: Vec::with_capacity(width),
        df: Vec::with_capacity(width),
        fmi: Vec::with_capacity(width),
        ci_lower: Vec::with_capacity(width),
        ci_upper: Vec::with_capacity(width),
    };
    for j in 0..width {
        let qbar = coefs.iter().map(|c| c[j]).sum::<f64>() / mf;
        let w = fits.iter().map(|f| f.se[j] * f.se[j]).sum::<f64>() / mf;
        let b = coefs.iter().map(|c| (c[j] - qbar).powi(2)).sum::<f64>() / (mf - 1.0);
        let t = w + (1.0 + 1.0 / mf) * b;
        let gamma = if t > 0.0 {
            (1.0 + 1.0 / mf) * b / t
        } else {
            0.0
        };
        let nu_obs = (complete_df + 1.0) / (complete_df + 3.0) * complete_df * (1.0 - gamma);
        let df = if gamma > 0.0 {
            let nu_old = (mf - 1.0) / (gamma * gamma);
            1.0 / (1.0 / nu_old + 1.0 / nu_obs)
        } else {
            nu_obs
        };
        let half = t_quantile(df, 0.975)? * t.sqrt();
        res.estimates.push(qbar);
        res.within.push(w);
        res.between.push(b);
        res.total.push(t);
        res.df.push(df);
        res.fmi.push(gamma);
        res.ci_lower.push(qbar - half);
        res.ci_upper.push(qbar + half);
    }
    Ok(res)
}

/// OLS on every completed dataset.
pub fn analyze_completed(datasets: &[Dataset]) -> Result<Vec<FitResult>, EstimatorError> {
    datasets.iter().map(ols).collect()
}
