use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use matrixpower::asymptotics::{self, ReportSummary};
use matrixpower::design::{builtin_bigfive, parse_design, DesignDocument};
use matrixpower::experiments::{
    self, write_explore_csv, write_failures_csv, write_sim_csv, ExploreConfig, SimConfig,
};
use matrixpower::moments::{parse_model, ModelSpec};
use matrixpower::power::{self, CovarianceKind, HypothesisKind, PowerRequest};
use matrixpower::Design;

mod error;

use error::CliError;

const SEED_ENV: &str = "MATRIXPOWER_SEED";
const DEFAULT_SEED: u64 = 20240101;

#[derive(Debug, Parser)]
#[command(
    name = "matrixpower",
    version,
    about = "Power analysis and sample-size planning for regressions under matrix sampling designs"
)]
struct Cli {
    /// Seed for every random stream; falls back to MATRIXPOWER_SEED.
    #[arg(long, global = true, env = SEED_ENV)]
    seed: Option<u64>,
    /// Worker threads for the experiment drivers (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory. Results and a run manifest are written there;
    /// without it results go to stdout and the manifest to stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that every variable pair is observed together on some form.
    Validate {
        /// Design JSON file.
        design: Option<PathBuf>,
        /// Use the built-in ten-form five-trait design.
        #[arg(long, conflicts_with = "design")]
        bigfive: bool,
    },
    /// Asymptotic covariance, standard errors and FMI of the coefficients.
    Asymptotics {
        #[command(flatten)]
        inputs: Inputs,
        /// Total sample size.
        #[arg(long, default_value_t = 1000.0)]
        n: f64,
    },
    /// Power of a Wald test at a given sample size.
    Power {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        hypothesis: HypothesisArgs,
        /// Total sample size.
        #[arg(long)]
        n: f64,
    },
    /// Smallest total sample size reaching the target power.
    Samplesize {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        hypothesis: HypothesisArgs,
        /// Also report the closed-form z-test size (single constraint only).
        #[arg(long)]
        oracle: bool,
    },
    /// Sample sizes and FMI over random slope vectors.
    Explore {
        /// Config JSON, or a manifest from an earlier run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Microdata comparison of complete-data, EM and MI estimators.
    Simulate {
        /// Config JSON, or a manifest from an earlier run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    /// Design JSON file.
    #[arg(long, required_unless_present = "bigfive")]
    design: Option<PathBuf>,
    /// Model JSON file.
    #[arg(long, required_unless_present = "bigfive")]
    model: Option<PathBuf>,
    /// Use the built-in five-trait design and population.
    #[arg(long, conflicts_with_all = ["design", "model"])]
    bigfive: bool,
}

#[derive(Debug, Args)]
struct HypothesisArgs {
    /// Power request JSON; flags given alongside override its fields.
    #[arg(long)]
    request: Option<PathBuf>,
    /// overall, coef, r2-uniform, r2-single or custom-r.
    #[arg(long, value_parser = parse_kebab::<HypothesisKind>)]
    hypothesis: Option<HypothesisKind>,
    /// Slope index, 1-based.
    #[arg(long)]
    coefficient: Option<usize>,
    /// Null value for a single coefficient.
    #[arg(long)]
    value: Option<f64>,
    /// R² increase.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    power: Option<f64>,
    /// matrix-sampled or complete.
    #[arg(long, value_parser = parse_kebab::<CovarianceKind>)]
    covariance: Option<CovarianceKind>,
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Provenance written next to every output.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    seed: u64,
    version: String,
    started: String,
    finished: String,
    outputs: Vec<PathBuf>,
}

fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_inputs(inputs: &Inputs) -> Result<(Design, ModelSpec), CliError> {
    if inputs.bigfive {
        return Ok((builtin_bigfive(), ModelSpec::bigfive()));
    }
    let (Some(d), Some(m)) = (&inputs.design, &inputs.model) else {
        return Err(CliError::Usage("--design and --model are required".into()));
    };
    let design = parse_design(&read(d)?)?;
    let model = parse_model(&read(m)?)?;
    if design.p() != model.model.p() {
        return Err(CliError::Usage(format!(
            "design has {} regressors but the model has {}",
            design.p(),
            model.model.p()
        )));
    }
    Ok((design, model))
}

fn inputs_config(design: &Design, model: &ModelSpec) -> Value {
    let doc: DesignDocument = design.to_document();
    json!({ "design": doc, "model": model.to_document() })
}

fn build_request(args: &HypothesisArgs) -> Result<PowerRequest, CliError> {
    let mut request = match &args.request {
        Some(path) => serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => PowerRequest::new(args.hypothesis.unwrap_or(HypothesisKind::Overall)),
    };
    if let Some(h) = args.hypothesis {
        request.hypothesis = h;
    }
    if args.coefficient.is_some() {
        request.coefficient = args.coefficient;
    }
    if args.value.is_some() {
        request.value = args.value;
    }
    if args.delta.is_some() {
        request.delta = args.delta;
    }
    if let Some(kind) = args.covariance {
        request.covariance = kind;
    }
    request.alpha = args.alpha.unwrap_or(request.alpha);
    request.power = args.power.unwrap_or(request.power);
    Ok(request)
}

/// Reads an experiment config, unwrapping the `config` field of a manifest.
fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<Option<T>, CliError> {
    let Some(path) = path else {
        return Ok(None);
    };
    let mut value: Value = serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if value.get("command").is_some() {
        value = value["config"].take();
    }
    serde_json::from_value(value)
        .map(Some)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Destination for the files of one run.
struct Sink {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Sink {
    fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        match &self.dir {
            Some(d) => {
                let path = d.join(name);
                fs::write(&path, text)?;
                self.written.push(path);
            }
            None => io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn file(
        &mut self,
        name: &str,
        write: impl FnOnce(fs::File) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --out".into()))?;
        let path = dir.join(name);
        write(fs::File::create(&path)?)?;
        self.written.push(path);
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = self.written;
        manifest.finished = timestamp();
        match &self.dir {
            Some(d) => {
                let mut text = serde_json::to_string_pretty(&manifest)?;
                text.push('\n');
                fs::write(d.join("manifest.json"), text)?;
            }
            None => eprintln!("{}", serde_json::to_string(&manifest)?),
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let started = timestamp();
    let mut sink = Sink::new(cli.out.clone())?;
    let manifest = |command: &str, config: Value| RunManifest {
        command: command.into(),
        config,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        started: started.clone(),
        finished: String::new(),
        outputs: Vec::new(),
    };

    match &cli.command {
        Command::Validate { design, bigfive } => {
            let d = match (design, bigfive) {
                (_, true) => builtin_bigfive(),
                (Some(path), false) => parse_design(&read(path)?)?,
                (None, false) => {
                    return Err(CliError::Usage("give a design file or --bigfive".into()))
                }
            };
            let report = d.validate_estimability();
            sink.json("validate.json", &report)?;
            let m = manifest("validate", json!({ "design": d.to_document() }));
            sink.finish(m)?;
            if report.singular {
                let pairs: Vec<String> = report
                    .uncovered_pairs
                    .iter()
                    .map(|(a, b)| format!("({a},{b})"))
                    .collect();
                eprintln!(
                    "design is not estimable; uncovered pairs: {}",
                    pairs.join(" ")
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Asymptotics { inputs, n } => {
            let (design, model) = load_inputs(inputs)?;
            if !(*n > 0.0) {
                return Err(CliError::Usage(format!("--n {n} must be positive")));
            }
            let report = asymptotics::report(&model.moments()?, &design, *n)?;
            sink.json("asymptotics.json", &ReportSummary::new(&report, &design)?)?;
            let mut config = inputs_config(&design, &model);
            config["n"] = json!(n);
            sink.finish(manifest("asymptotics", config))?;
        }
        Command::Power {
            inputs,
            hypothesis,
            n,
        } => {
            let (design, model) = load_inputs(inputs)?;
            let request = build_request(hypothesis)?;
            let spec = request.to_spec(&model.model, &model.sigma_xx)?;
            let cov = power::unit_cov_beta(
                &model.mu_x,
                &model.sigma_xx,
                &spec.alternative,
                &design,
                request.covariance,
            )?;
            let pw = power::wald_power(&spec.hypothesis, &spec.alternative, &cov, *n, spec.alpha)?;
            let lambda = power::noncentrality(&spec.hypothesis, &spec.alternative, &cov, *n)?;
            sink.json(
                "power.json",
                &json!({
                    "hypothesis": request.hypothesis,
                    "constraints": spec.hypothesis.q(),
                    "alpha": spec.alpha,
                    "n_total": n,
                    "noncentrality": lambda,
                    "power": pw,
                    "alternative": spec.alternative,
                }),
            )?;
            let mut config = inputs_config(&design, &model);
            config["request"] = serde_json::to_value(&request)?;
            config["n"] = json!(n);
            sink.finish(manifest("power", config))?;
        }
        Command::Samplesize {
            inputs,
            hypothesis,
            oracle,
        } => {
            let (design, model) = load_inputs(inputs)?;
            let request = build_request(hypothesis)?;
            let spec = request.to_spec(&model.model, &model.sigma_xx)?;
            let cov = power::unit_cov_beta(
                &model.mu_x,
                &model.sigma_xx,
                &spec.alternative,
                &design,
                request.covariance,
            )?;
            let result = power::sample_size(&spec, &cov, &design.allocation())?;
            let mut out = json!({
                "hypothesis": request.hypothesis,
                "constraints": spec.hypothesis.q(),
                "alpha": spec.alpha,
                "power": spec.target_power,
                "alternative": spec.alternative,
                "result": result,
            });
            if *oracle {
                if spec.hypothesis.q() != 1 {
                    return Err(CliError::Usage(
                        "--oracle needs a single-constraint hypothesis".into(),
                    ));
                }
                let row = spec.hypothesis.constraints().row(0);
                let v = cov.quad_form(&row);
                let effect = spec.discrepancy()?[0];
                let n_z = power::z_test_sample_size(v, effect, spec.alpha, spec.target_power)?;
                out["oracle"] =
                    json!({ "z_test_n": n_z, "wald_n_continuous": result.n_continuous });
            }
            sink.json("samplesize.json", &out)?;
            let mut config = inputs_config(&design, &model);
            config["request"] = serde_json::to_value(&request)?;
            config["oracle"] = json!(oracle);
            sink.finish(manifest("samplesize", config))?;
        }
        Command::Explore { config, draws } => {
            let mut cfg: ExploreConfig = load_config(config.as_deref())?.unwrap_or_default();
            if config.is_none() || cli.seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(d) = draws {
                cfg.draws = *d;
            }
            let report = experiments::explore(&cfg)?;
            sink.file("explore.csv", |f| Ok(write_explore_csv(&report, f)?))?;
            sink.json("explore_summary.json", &report.summary)?;
            let mut m = manifest("explore", serde_json::to_value(&cfg)?);
            m.seed = cfg.seed;
            sink.finish(m)?;
        }
        Command::Simulate { config, reps } => {
            let mut cfg: SimConfig = load_config(config.as_deref())?.unwrap_or_default();
            if config.is_none() || cli.seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(r) = reps {
                cfg.reps = *r;
            }
            let report = experiments::simulate(&cfg)?;
            sink.file("simulate.csv", |f| Ok(write_sim_csv(&report, f)?))?;
            sink.file("failures.csv", |f| Ok(write_failures_csv(&report, f)?))?;
            sink.json("simulate_summary.json", &report.summary)?;
            let mut m = manifest("simulate", serde_json::to_value(&cfg)?);
            m.seed = cfg.seed;
            sink.finish(m)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
