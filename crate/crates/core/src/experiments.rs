//! Monte Carlo drivers: an analytic exploration of sample sizes and missing
//! information over random slope vectors, and a microdata simulation
//! comparing complete-data OLS, EM and two multiple-imputation methods
//! under the built-in ten-form design.
//!
//! Every draw or replicate uses its own random stream derived from the
//! seed and its index, and results are assembled in index order, so output
//! does not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticsError};
use crate::data::{DataError, Dataset};
use crate::design::{builtin_bigfive, Design, DesignError, BIG_FIVE_NAMES};
use crate::estimators::{
    analyze_completed, em_mvn, mi_mvn, mi_pmm, ols, rubin_pool, EstimatorError, FitResult,
    PooledResult, PMM_CYCLES, PMM_DONORS,
};
use crate::moments::{
    big_five_covariance, big_five_model, build_moments, sigma2_for_r2, MomentsError,
    RegressionModel,
};
use crate::numerics::{sym_eigen, t_quantile, NumericsError, RngStream, SymMatrix};
use crate::power::{
    self, overall_test, r2_increase_single, r2_increase_uniform, CovarianceKind, PowerError,
    PowerSpec,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("allocation cannot be met exactly: {0}")]
    Allocation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Order statistics of a sample. Quantiles interpolate linearly between
/// order statistics (`h = (n − 1) q`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub p05: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&v, p);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p05: q(0.05),
            p10: q(0.10),
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            p90: q(0.90),
            p95: q(0.95),
            max: v[v.len() - 1],
        })
    }
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn default_draws() -> usize {
    1000
}
fn default_r2() -> f64 {
    0.15
}
fn default_delta() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    power::DEFAULT_ALPHA
}
fn default_power() -> f64 {
    power::DEFAULT_POWER
}
fn default_n_reference() -> u64 {
    1000
}
fn default_seed() -> u64 {
    20240101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_r2")]
    pub r2: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    /// Sample size at which reported standard errors are evaluated. The
    /// fractions of missing information do not depend on it.
    #[serde(default = "default_n_reference")]
    pub n_reference: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            r2: default_r2(),
            delta: default_delta(),
            alpha: default_alpha(),
            power: default_power(),
            n_reference: default_n_reference(),
            seed: default_seed(),
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.draws == 0 {
            return Err(ExperimentError::Config("draws must be positive".into()));
        }
        if !(self.r2 > 0.0 && self.delta >= 0.0 && self.r2 + self.delta < 1.0) {
            return Err(ExperimentError::Config(format!(
                "need 0 < r2 and r2 + delta < 1 (r2 = {}, delta = {})",
                self.r2, self.delta
            )));
        }
        if self.n_reference == 0 {
            return Err(ExperimentError::Config(
                "n_reference must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one sample-size calculation within a draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizePair {
    /// Under the matrix sampling design.
    pub matrix_sampled: Option<u64>,
    /// With every regressor observed.
    pub complete: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploreRecord {
    pub draw: usize,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Per-observation variances of `(β̂₀, β̂)`, complete data.
    pub var_complete: Vec<f64>,
    /// Per-observation variances of `(β̂₀, β̂)` under the design.
    pub var_matrix_sampled: Vec<f64>,
    pub fmi: Vec<f64>,
    pub n_overall: SizePair,
    pub n_uniform: SizePair,
    pub n_single: Vec<SizePair>,
    /// Problems met in this draw; the affected sizes are `None`.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploreSummary {
    pub draws: usize,
    pub n_reference: u64,
    pub n_overall: Option<Summary>,
    pub n_overall_complete: Option<Summary>,
    pub n_uniform: Option<Summary>,
    pub n_uniform_complete: Option<Summary>,
    pub n_single: Vec<Option<Summary>>,
    pub n_single_failures: Vec<usize>,
    /// Distribution of the FMI for the intercept and each slope.
    pub fmi: Vec<Option<Summary>>,
    /// All slope FMIs pooled over coefficients and draws.
    pub fmi_slopes: Option<Summary>,
    pub fmi_slopes_share_in_60_90: f64,
    /// Draws in which the overall test needs more observations than the
    /// uniform R² increase.
    pub overall_exceeds_uniform: usize,
    pub se_at_reference: Vec<Option<Summary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploreReport {
    pub config: ExploreConfig,
    pub records: Vec<ExploreRecord>,
    pub summary: ExploreSummary,
}

/// The exploration on the built-in five-trait population and design.
pub fn explore(config: &ExploreConfig) -> Result<ExploreReport, ExperimentError> {
    explore_with(
        config,
        &builtin_bigfive(),
        &[0.0; 5],
        &big_five_covariance(),
    )
}

/// For each draw: slopes from `N(0, I)`, σ² giving the configured R²,
/// per-observation coefficient variances with and without missingness,
/// sample sizes for the overall test, for a uniform R² increase and for
/// an R² increase through each single slope, and the FMI of every
/// coefficient.
pub fn explore_with(
    config: &ExploreConfig,
    design: &Design,
    mu_x: &[f64],
    sigma_xx: &SymMatrix<f64>,
) -> Result<ExploreReport, ExperimentError> {
    config.validate()?;
    if design.p() != mu_x.len() || sigma_xx.dim() != mu_x.len() {
        return Err(ExperimentError::Config(
            "design, means and covariance disagree on p".into(),
        ));
    }
    let records = (0..config.draws)
        .into_par_iter()
        .map(|d| explore_draw(config, design, mu_x, sigma_xx, d))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize_explore(config, &records);
    Ok(ExploreReport {
        config: config.clone(),
        records,
        summary,
    })
}

fn explore_draw(
    config: &ExploreConfig,
    design: &Design,
    mu_x: &[f64],
    sigma_xx: &SymMatrix<f64>,
    draw: usize,
) -> Result<ExploreRecord, ExperimentError> {
    let p = mu_x.len();
    let mut stream = RngStream::new(config.seed, draw as u64);
    let beta: Vec<f64> = (0..p).map(|_| stream.std_normal()).collect();
    let sigma2 = sigma2_for_r2(&beta, sigma_xx, config.r2)?;
    let base = RegressionModel::new(0.0, beta.clone(), sigma2)?;
    let m = build_moments(mu_x, sigma_xx, &base)?;
    let rep = asymptotics::report(&m, design, 1.0)?;
    let mut notes = Vec::new();

    let mut sizes = |spec: Result<PowerSpec, PowerError>, label: &str| -> SizePair {
        let spec = match spec {
            Ok(s) => s,
            Err(e) => {
                notes.push(format!("{label}: {e}"));
                return SizePair {
                    matrix_sampled: None,
                    complete: None,
                };
            }
        };
        let mut run = |kind| match power::plan(&spec, mu_x, sigma_xx, design, kind) {
            Ok(r) => Some(r.n_total),
            Err(e) => {
                notes.push(format!("{label}: {e}"));
                None
            }
        };
        SizePair {
            matrix_sampled: run(CovarianceKind::MatrixSampled),
            complete: run(CovarianceKind::Complete),
        }
    };

    let n_overall = sizes(
        PowerSpec::new(overall_test(p), base.clone(), config.alpha, config.power),
        "overall",
    );
    let n_uniform = sizes(
        r2_increase_uniform(&base, sigma_xx, config.delta, config.alpha, config.power),
        "uniform",
    );
    let n_single = (0..p)
        .map(|j| {
            sizes(
                r2_increase_single(&base, sigma_xx, config.delta, j, config.alpha, config.power),
                &format!("single {}", j + 1),
            )
        })
        .collect();

    Ok(ExploreRecord {
        draw,
        beta,
        sigma2,
        var_complete: rep.cov_beta_complete.diag(),
        var_matrix_sampled: rep.cov_beta.diag(),
        fmi: rep.fmi,
        n_overall,
        n_uniform,
        n_single,
        notes,
    })
}

fn summarize_explore(config: &ExploreConfig, records: &[ExploreRecord]) -> ExploreSummary {
    let sizes = |f: &dyn Fn(&ExploreRecord) -> Option<u64>| {
        Summary::of(
            &records
                .iter()
                .filter_map(f)
                .map(|n| n as f64)
                .collect::<Vec<_>>(),
        )
    };
    let p = records.first().map_or(0, |r| r.beta.len());
    let slopes: Vec<f64> = records
        .iter()
        .flat_map(|r| r.fmi[1..].iter().copied())
        .collect();
    let in_band = slopes.iter().filter(|&&f| (0.6..=0.9).contains(&f)).count();
    let n_ref = config.n_reference as f64;
    ExploreSummary {
        draws: records.len(),
        n_reference: config.n_reference,
        n_overall: sizes(&|r| r.n_overall.matrix_sampled),
        n_overall_complete: sizes(&|r| r.n_overall.complete),
        n_uniform: sizes(&|r| r.n_uniform.matrix_sampled),
        n_uniform_complete: sizes(&|r| r.n_uniform.complete),
        n_single: (0..p)
            .map(|j| sizes(&|r| r.n_single[j].matrix_sampled))
            .collect(),
        n_single_failures: (0..p)
            .map(|j| {
                records
                    .iter()
                    .filter(|r| r.n_single[j].matrix_sampled.is_none())
                    .count()
            })
            .collect(),
        fmi: (0..=p)
            .map(|j| Summary::of(&records.iter().map(|r| r.fmi[j]).collect::<Vec<_>>()))
            .collect(),
        fmi_slopes: Summary::of(&slopes),
        fmi_slopes_share_in_60_90: if slopes.is_empty() {
            0.0
        } else {
            in_band as f64 / slopes.len() as f64
        },
        overall_exceeds_uniform: records
            .iter()
            .filter(
                |r| match (r.n_overall.matrix_sampled, r.n_uniform.matrix_sampled) {
                    (Some(a), Some(b)) => a > b,
                    _ => false,
                },
            )
            .count(),
        se_at_reference: (0..=p)
            .map(|j| {
                Summary::of(
                    &records
                        .iter()
                        .map(|r| (r.var_matrix_sampled[j] / n_ref).sqrt())
                        .collect::<Vec<_>>(),
                )
            })
            .collect(),
    }
}

fn opt(v: Option<u64>) -> String {
    v.map(|n| n.to_string()).unwrap_or_default()
}

/// One row per draw; see `docs/reports.md` for the columns.
pub fn write_explore_csv<W: Write>(report: &ExploreReport, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let p = report.records.first().map_or(0, |r| r.beta.len());
    let mut header = vec!["draw".to_string()];
    header.extend((1..=p).map(|j| format!("beta{j}")));
    header.push("sigma2".into());
    for prefix in ["var_complete", "var_ms", "fmi"] {
        header.extend((0..=p).map(|j| format!("{prefix}{j}")));
    }
    header.extend(
        [
            "n_overall",
            "n_overall_complete",
            "n_uniform",
            "n_uniform_complete",
        ]
        .map(String::from),
    );
    for j in 1..=p {
        header.push(format!("n_single{j}"));
        header.push(format!("n_single{j}_complete"));
    }
    header.push("notes".into());
    w.write_record(&header)?;
    for r in &report.records {
        let mut row = vec![r.draw.to_string()];
        row.extend(r.beta.iter().map(f64::to_string));
        row.push(r.sigma2.to_string());
        for v in [&r.var_complete, &r.var_matrix_sampled, &r.fmi] {
            row.extend(v.iter().map(f64::to_string));
        }
        row.push(opt(r.n_overall.matrix_sampled));
        row.push(opt(r.n_overall.complete));
        row.push(opt(r.n_uniform.matrix_sampled));
        row.push(opt(r.n_uniform.complete));
        for s in &r.n_single {
            row.push(opt(s.matrix_sampled));
            row.push(opt(s.complete));
        }
        row.push(r.notes.join("; "));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Eigenvectors of the trait covariance scaled by `√λ`, columns in
/// descending eigenvalue order, each signed so its largest-magnitude entry
/// is positive.
fn factor_loadings() -> Result<[[f64; 5]; 5], ExperimentError> {
    let eig = sym_eigen(&big_five_covariance::<f64>())?;
    let mut load = [[0.0; 5]; 5];
    for j in 0..5 {
        let col = eig.vectors.column(j);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        let scale = eig.values[j].sqrt();
        for i in 0..5 {
            load[i][j] = sign * col[i] * scale;
        }
    }
    Ok(load)
}

/// Regression slopes of the simulated population.
pub const SIM_BETA: [f64; 5] = [0.3, 0.0, 0.0, 0.3, 0.0];

/// Five non-normal trait scores with the built-in covariance and an outcome
/// `y = 0.3 x₁ + 0.3 x₄ + ε`. The principal components are a centered
/// exponential, a random-signed centered exponential and three standard
/// normals, combined through the eigendecomposition of the covariance.
pub fn generate_microdata(n: usize, stream: &mut RngStream) -> Result<Dataset, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Config("n must be positive".into()));
    }
    let load = factor_loadings()?;
    let sd = crate::moments::BIG_FIVE_SIGMA2.sqrt();
    let mut values = Vec::with_capacity(n * 6);
    let mut f = [0.0; 5];
    for _ in 0..n {
        f[0] = -stream.uniform_open_closed().ln() - 1.0;
        let sign = if stream.bernoulli(0.5) { 1.0 } else { -1.0 };
        f[1] = sign * (-stream.uniform_open_closed().ln() - 1.0);
        for fj in &mut f[2..] {
            *fj = stream.std_normal();
        }
        let mut y = 0.0;
        for i in 0..5 {
            let x: f64 = (0..5).map(|j| load[i][j] * f[j]).sum();
            values.push(x);
            y += SIM_BETA[i] * x;
        }
        values.push(y + sd * stream.std_normal());
    }
    let names = BIG_FIVE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(["y".to_string()])
        .collect();
    Ok(Dataset::from_parts(names, values, vec![true; n * 6], None)?)
}

/// Assigns rows to forms by a random permutation with exact per-form
/// counts and masks every regressor a row's form does not administer.
pub fn apply_design(
    data: &Dataset,
    design: &Design,
    stream: &mut RngStream,
) -> Result<Dataset, ExperimentError> {
    if data.p() != design.p() {
        return Err(ExperimentError::Config(format!(
            "dataset has {} regressors, design has {}",
            data.p(),
            design.p()
        )));
    }
    let n = data.n();
    let mut counts = Vec::with_capacity(design.form_count());
    for f in design.forms() {
        let exact = f.fraction * n as f64;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-6 {
            return Err(ExperimentError::Allocation(format!(
                "form `{}` would get {exact} of {n} rows",
                f.name
            )));
        }
        counts.push(rounded as usize);
    }
    if counts.iter().sum::<usize>() != n {
        return Err(ExperimentError::Allocation(format!(
            "form counts sum to {}, not {n}",
            counts.iter().sum::<usize>()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, stream.index(i + 1));
    }
    let mut labels = vec![0; n];
    let mut pos = 0;
    for (k, &c) in counts.iter().enumerate() {
        for &row in &order[pos..pos + c] {
            labels[row] = k;
        }
        pos += c;
    }
    let mut out = data.clone();
    for (i, &k) in labels.iter().enumerate() {
        let items = &design.forms()[k].items;
        for j in (0..data.p()).filter(|j| !items.contains(j)) {
            out.mask(i, j);
        }
    }
    out.set_forms(labels);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMethod {
    Complete,
    Em,
    MiMvn,
    MiPmm,
}

fn default_n() -> usize {
    1000
}
fn default_reps() -> usize {
    1200
}
fn default_m_small() -> usize {
    5
}
fn default_m_large() -> usize {
    50
}
fn default_methods() -> Vec<SimMethod> {
    vec![
        SimMethod::Complete,
        SimMethod::Em,
        SimMethod::MiMvn,
        SimMethod::MiPmm,
    ]
}
fn default_donors() -> usize {
    PMM_DONORS
}
fn default_cycles() -> usize {
    PMM_CYCLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_m_small")]
    pub m_small: usize,
    #[serde(default = "default_m_large")]
    pub m_large: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<SimMethod>,
    #[serde(default = "default_donors")]
    pub pmm_donors: usize,
    #[serde(default = "default_cycles")]
    pub pmm_cycles: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            reps: default_reps(),
            m_small: default_m_small(),
            m_large: default_m_large(),
            methods: default_methods(),
            pmm_donors: default_donors(),
            pmm_cycles: default_cycles(),
            seed: default_seed(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let forms = builtin_bigfive().form_count();
        if self.n == 0 || self.n % forms != 0 {
            return Err(ExperimentError::Config(format!(
                "n = {} must be a positive multiple of the {forms} forms",
                self.n
            )));
        }
        if self.reps == 0 {
            return Err(ExperimentError::Config("reps must be positive".into()));
        }
        if self.m_small < 2 || self.m_large < self.m_small {
            return Err(ExperimentError::Config(format!(
                "need 2 ≤ m_small ≤ m_large (got {} and {})",
                self.m_small, self.m_large
            )));
        }
        Ok(())
    }

    fn runs(&self, m: SimMethod) -> bool {
        self.methods.contains(&m)
    }
}

/// Estimators reported by the simulation. MI methods appear once per
/// number of imputations pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Complete,
    Em,
    MiMvnSmall,
    MiMvnLarge,
    MiPmmSmall,
    MiPmmLarge,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Complete,
        Estimator::Em,
        Estimator::MiMvnSmall,
        Estimator::MiMvnLarge,
        Estimator::MiPmmSmall,
        Estimator::MiPmmLarge,
    ];

    pub fn label(self, config: &SimConfig) -> String {
        match self {
            Estimator::Complete => "complete".into(),
            Estimator::Em => "em".into(),
            Estimator::MiMvnSmall => format!("mi-mvn-{}", config.m_small),
            Estimator::MiMvnLarge => format!("mi-mvn-{}", config.m_large),
            Estimator::MiPmmSmall => format!("mi-pmm-{}", config.m_small),
            Estimator::MiPmmLarge => format!("mi-pmm-{}", config.m_large),
        }
    }
}

/// One estimator's result in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRecord {
    pub replicate: usize,
    pub estimator: Estimator,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    /// Reported fraction of missing information (MI only).
    pub fmi: Option<Vec<f64>>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimFailure {
    pub replicate: usize,
    pub method: SimMethod,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub truth: f64,
    pub mean: f64,
    /// 95% interval for the Monte Carlo mean.
    pub mean_ci: [f64; 2],
    pub sd: f64,
    pub coverage: f64,
    pub se: Option<Summary>,
    /// Share of replicates with `|β̂ − β| > 3 ×` the analytic standard error.
    pub tail_share: f64,
    pub reported_fmi: Option<Summary>,
    /// `1 − Var(complete)/Var(method)` over replicates where both succeeded.
    pub empirical_fmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub label: String,
    pub replicates: usize,
    pub coefficients: Vec<CoefficientSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub reps: usize,
    pub failures: usize,
    /// Asymptotic standard errors at the true parameters under the design.
    pub analytic_se: Vec<f64>,
    pub analytic_fmi: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub records: Vec<SimRecord>,
    pub failures: Vec<SimFailure>,
    pub summary: SimSummary,
}

impl SimReport {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.summary.estimators.iter().find(|s| s.estimator == e)
    }
}

/// Stream index for one stage of one replicate.
fn stage_stream(seed: u64, replicate: usize, stage: u64) -> RngStream {
    RngStream::new(seed, ((replicate as u64) << 3) | stage)
}

const STAGE_DATA: u64 = 0;
const STAGE_DESIGN: u64 = 1;
const STAGE_MI_MVN: u64 = 2;
const STAGE_MI_PMM: u64 = 3;

/// Runs the microdata simulation on the built-in population and design.
/// Replicate failures are recorded and excluded from the summaries.
pub fn simulate(config: &SimConfig) -> Result<SimReport, ExperimentError> {
    config.validate()?;
    let design = builtin_bigfive();
    let truth_model: RegressionModel<f64> = big_five_model();
    let truth = truth_model.coefficients();
    let moments = build_moments(&[0.0; 5], &big_five_covariance(), &truth_model)?;
    let analytic = asymptotics::report(&moments, &design, config.n as f64)?;

    let per_rep: Vec<(Vec<SimRecord>, Vec<SimFailure>)> = (0..config.reps)
        .into_par_iter()
        .map(|r| simulate_replicate(config, &design, &truth, r))
        .collect::<Result<_, _>>()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rec, fail) in per_rep {
        records.extend(rec);
        failures.extend(fail);
    }
    let summary = summarize_sim(config, &records, failures.len(), &truth, &analytic)?;
    Ok(SimReport {
        config: config.clone(),
        records,
        failures,
        summary,
    })
}

fn simulate_replicate(
    config: &SimConfig,
    design: &Design,
    truth: &[f64],
    r: usize,
) -> Result<(Vec<SimRecord>, Vec<SimFailure>), ExperimentError> {
    let _ = truth;
    let full = generate_microdata(config.n, &mut stage_stream(config.seed, r, STAGE_DATA))?;
    let masked = apply_design(
        &full,
        design,
        &mut stage_stream(config.seed, r, STAGE_DESIGN),
    )?;
    let complete_df = (config.n - 6) as f64;
    let z = t_quantile(complete_df, 0.975)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut fail = |method, e: &dyn std::fmt::Display| {
        failures.push(SimFailure {
            replicate: r,
            method,
            reason: e.to_string(),
        })
    };

    let fixed = |estimator, fit: &FitResult, crit: f64| {
        let est = fit.coefficients();
        SimRecord {
            replicate: r,
            estimator,
            ci_lower: est.iter().zip(&fit.se).map(|(b, s)| b - crit * s).collect(),
            ci_upper: est.iter().zip(&fit.se).map(|(b, s)| b + crit * s).collect(),
            estimates: est,
            se: fit.se.clone(),
            fmi: None,
        }
    };
    let pooled = |estimator, p: PooledResult| SimRecord {
        replicate: r,
        estimator,
        se: p.se(),
        estimates: p.estimates,
        fmi: Some(p.fmi),
        ci_lower: p.ci_lower,
        ci_upper: p.ci_upper,
    };

    // The complete-data fit is the reference for empirical FMI and always runs.
    match ols(&full) {
        Ok(fit) => records.push(fixed(Estimator::Complete, &fit, z)),
        Err(e) => fail(SimMethod::Complete, &e),
    }
    if config.runs(SimMethod::Em) {
        match em_mvn(&masked) {
            Ok(fit) => records.push(fixed(Estimator::Em, &fit.fit, 1.959_963_984_540_054)),
            Err(e) => fail(SimMethod::Em, &e),
        }
    }
    let mut run_mi = |method, small, large, imputations: Result<Vec<Dataset>, EstimatorError>| {
        let result = imputations.and_then(|sets| {
            let fits = analyze_completed(&sets)?;
            let s = rubin_pool(&fits[..config.m_small], complete_df)?;
            let l = rubin_pool(&fits, complete_df)?;
            Ok((s, l))
        });
        match result {
            Ok((s, l)) => {
                records.push(pooled(small, s));
                records.push(pooled(large, l));
            }
            Err(e) => fail(method, &e),
        }
    };
    if config.runs(SimMethod::MiMvn) {
        let mut s = stage_stream(config.seed, r, STAGE_MI_MVN);
        run_mi(
            SimMethod::MiMvn,
            Estimator::MiMvnSmall,
            Estimator::MiMvnLarge,
            mi_mvn(&masked, config.m_large, &mut s),
        );
    }
    if config.runs(SimMethod::MiPmm) {
        let mut s = stage_stream(config.seed, r, STAGE_MI_PMM);
        run_mi(
            SimMethod::MiPmm,
            Estimator::MiPmmSmall,
            Estimator::MiPmmLarge,
            mi_pmm(
                &masked,
                config.m_large,
                config.pmm_donors,
                config.pmm_cycles,
                &mut s,
            ),
        );
    }
    Ok((records, failures))
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn summarize_sim(
    config: &SimConfig,
    records: &[SimRecord],
    failures: usize,
    truth: &[f64],
    analytic: &asymptotics::AsymptoticReport<f64>,
) -> Result<SimSummary, ExperimentError> {
    let analytic_se = analytic.se();
    let width = truth.len();
    let complete: std::collections::BTreeMap<usize, &SimRecord> = records
        .iter()
        .filter(|r| r.estimator == Estimator::Complete)
        .map(|r| (r.replicate, r))
        .collect();
    let mut estimators = Vec::new();
    for e in Estimator::ALL {
        let rows: Vec<&SimRecord> = records.iter().filter(|r| r.estimator == e).collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len();
        let mut coefficients = Vec::with_capacity(width);
        for j in 0..width {
            let est: Vec<f64> = rows.iter().map(|r| r.estimates[j]).collect();
            let mean = est.iter().sum::<f64>() / k as f64;
            let sd = if k > 1 {
                sample_variance(&est).sqrt()
            } else {
                f64::NAN
            };
            let half = if k > 1 {
                t_quantile((k - 1) as f64, 0.975)? * sd / (k as f64).sqrt()
            } else {
                f64::NAN
            };
            let covered = rows
                .iter()
                .filter(|r| r.ci_lower[j] <= truth[j] && truth[j] <= r.ci_upper[j])
                .count();
            let tail = est
                .iter()
                .filter(|b| (*b - truth[j]).abs() > 3.0 * analytic_se[j])
                .count();
            let reported: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.fmi.as_ref().map(|f| f[j]))
                .collect();
            let paired: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| {
                    complete
                        .get(&r.replicate)
                        .map(|c| (c.estimates[j], r.estimates[j]))
                })
                .collect();
            let empirical_fmi = (e != Estimator::Complete && paired.len() > 1).then(|| {
                let (c, m): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
                1.0 - sample_variance(&c) / sample_variance(&m)
            });
            coefficients.push(CoefficientSummary {
                truth: truth[j],
                mean,
                mean_ci: [mean - half, mean + half],
                sd,
                coverage: covered as f64 / k as f64,
                se: Summary::of(&rows.iter().map(|r| r.se[j]).collect::<Vec<_>>()),
                tail_share: tail as f64 / k as f64,
                reported_fmi: Summary::of(&reported),
                empirical_fmi,
            });
        }
        estimators.push(EstimatorSummary {
            estimator: e,
            label: e.label(config),
            replicates: k,
            coefficients,
        });
    }
    Ok(SimSummary {
        reps: config.reps,
        failures,
        analytic_se,
        analytic_fmi: analytic.fmi.clone(),
        estimators,
    })
}

/// One row per replicate and estimator; see `docs/reports.md`.
pub fn write_sim_csv<W: Write>(report: &SimReport, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let width = report.summary.analytic_se.len();
    let mut header = vec!["replicate".to_string(), "estimator".to_string()];
    for prefix in ["b", "se", "fmi", "ci_lo", "ci_hi"] {
        header.extend((0..width).map(|j| format!("{prefix}{j}")));
    }
    w.write_record(&header)?;
    for r in &report.records {
        let mut row = vec![r.replicate.to_string(), r.estimator.label(&report.config)];
        row.extend(r.estimates.iter().map(f64::to_string));
        row.extend(r.se.iter().map(f64::to_string));
        match &r.fmi {
            Some(f) => row.extend(f.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), width)),
        }
        row.extend(r.ci_lower.iter().map(f64::to_string));
        row.extend(r.ci_upper.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Failed replicate/method pairs.
pub fn write_failures_csv<W: Write>(report: &SimReport, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "method", "reason"])?;
    for f in &report.failures {
        let method = serde_json::to_value(f.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        w.write_record([f.replicate.to_string(), method, f.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::complete_design;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        let s = Summary::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 2.0, 3.0, 2.0));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn loadings_reproduce_covariance() {
        let load = factor_loadings().unwrap();
        let target = big_five_covariance::<f64>();
        for a in 0..5 {
            for b in 0..5 {
                let v: f64 = (0..5).map(|j| load[a][j] * load[b][j]).sum();
                assert!((v - target[(a, b)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_design_exact_counts() {
        let data = generate_microdata(1000, &mut RngStream::new(1, 0)).unwrap();
        let masked = apply_design(&data, &builtin_bigfive(), &mut RngStream::new(1, 1)).unwrap();
        for j in 0..5 {
            let seen = (0..1000).filter(|&i| masked.is_observed(i, j)).count();
            assert_eq!(seen, 400);
            for k in (j + 1)..5 {
                let both = (0..1000)
                    .filter(|&i| masked.is_observed(i, j) && masked.is_observed(i, k))
                    .count();
                assert_eq!(both, 100);
            }
        }
        assert!((0..1000).all(|i| masked.is_observed(i, 5)));
        let labels = masked.forms().unwrap();
        for k in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 100);
        }

        let names = BIG_FIVE_NAMES.iter().map(|s| s.to_string()).collect();
        let full = apply_design(
            &data,
            &complete_design(names, "y"),
            &mut RngStream::new(1, 1),
        )
        .unwrap();
        assert!(!full.has_missing());
        assert!(matches!(
            apply_design(
                &generate_microdata(15, &mut RngStream::new(1, 0)).unwrap(),
                &builtin_bigfive(),
                &mut RngStream::new(1, 1)
            ),
            Err(ExperimentError::Allocation(_))
        ));
    }

    #[test]
    fn explore_small_run_is_deterministic() {
        let config = ExploreConfig {
            draws: 8,
            ..ExploreConfig::default()
        };
        let a = explore(&config).unwrap();
        let b = explore(&config).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            assert!(r.notes.is_empty(), "{:?}", r.notes);
            assert!(r.n_overall.matrix_sampled.unwrap() <= r.n_uniform.matrix_sampled.unwrap());
            assert!(r.n_uniform.complete.unwrap() <= r.n_uniform.matrix_sampled.unwrap());
            assert!(r.fmi[1..].iter().all(|&f| f > 0.0 && f < 1.0));
        }
        let mut csv = Vec::new();
        write_explore_csv(&a, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }

    #[test]
    fn simulate_tiny_run() {
        let config = SimConfig {
            reps: 2,
            m_large: 6,
            m_small: 3,
            pmm_cycles: 2,
            ..SimConfig::default()
        };
        let rep = simulate(&config).unwrap();
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        assert_eq!(rep.records.len(), 2 * 6);
        assert_eq!(rep.summary.estimators.len(), 6);
        assert_eq!(
            rep.estimator(Estimator::MiPmmLarge).unwrap().label,
            "mi-pmm-6"
        );
        let mut csv = Vec::new();
        write_sim_csv(&rep, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 13);
    }
}
