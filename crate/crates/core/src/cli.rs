//! Command-line driver: scenario export, transport, training, entanglement
//! reports and bound certification.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    check_all, check_gs_entanglement_cap, check_gs_implies_cc, write_reports_csv, AssumptionParams, BoundId, BoundReport,
    DEFAULT_KL_BINS,
};
use crate::entangle::{oracle_upper_bound_with, EntanglementReport};
use crate::error::{Error, Result};
use crate::gaussian::{verify_cross_term, verify_scaled_decomposition, GaussianPair, DEFAULT_MC_SAMPLES};
use crate::measures::{EmpiricalJoint, LossSpec, MeasureFile};
use crate::ot::{wasserstein_ground, OtMethod};
use crate::scenarios::{generate, Scenario, ShiftConfig};
use crate::train::{fit, write_history_csv, FitResult, Model, ModelKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BOUND_VIOLATED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Environment variable holding the log level.
pub const LOG_ENV: &str = "ENTANGLE_OT_LOG";

#[derive(Debug, Parser)]
#[command(name = "entangle-ot", version, about = "Optimal transport and entanglement diagnostics for domain adaptation")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file, or directory for `train`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Slack tolerance for bound verdicts.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Worker threads for independent seeds.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ground {
    Euclidean,
    SquaredEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Sinkhorn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wasserstein distance between two measure files; --out writes the coupling.
    Ot {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = Ground::Euclidean)]
        ground: Ground,
        /// Order of the distance.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        /// Entropic regularization for --method sinkhorn.
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Certify every bound on a scenario and model; exits 1 on a violation.
    Verify {
        /// Also run the Gaussian checks on a random pair.
        #[arg(long)]
        gaussian: bool,
    },
    /// Train a classifier and write its history and parameters.
    Train,
    /// One-shot entanglement report for a model on a scenario.
    Entangle,
    /// Gaussian scaled-covariance decomposition and cross-term checks.
    Gaussian {
        #[arg(long, default_value_t = 2)]
        dim_x: usize,
        #[arg(long, default_value_t = 2)]
        dim_y: usize,
        #[arg(long, default_value_t = 1.5)]
        scale: f64,
    },
    /// Export a generated scenario as JSON.
    Gen,
}

/// Contents of `--config`; each command reads the fields it needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<ShiftConfig>,
    /// Labeled measure files used instead of `scenario`.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Model JSON; a seeded random model of `model_kind` is used when absent.
    pub model: Option<PathBuf>,
    pub model_kind: Option<ModelKind>,
    pub train: Option<TrainConfig>,
    /// Seeds for `train`; runs are independent and spread over `--jobs`.
    pub seeds: Option<Vec<u64>>,
    /// Bound ids to report; all when absent.
    pub bounds: Option<Vec<BoundId>>,
    pub assumptions: Option<AssumptionParams>,
    pub loss: Option<LossSpec>,
    pub ot_method: Option<OtMethod>,
    pub kl_bins: Option<usize>,
    pub tolerance: Option<f64>,
    pub gaussian: Option<GaussianPair>,
    pub samples: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        if let Some(s) = &config.scenario {
            s.validate()?;
        }
        if let Some(a) = &config.assumptions {
            a.validate()?;
        }
        if let Some(g) = &config.gaussian {
            g.validate()?;
        }
        if config.kl_bins == Some(0) {
            return Err(Error::ConfigInvalid("kl_bins must be positive".into()));
        }
        Ok(config)
    }
}

/// Outcome of one command, mapped to an exit code.
enum Outcome {
    Ok,
    Violated,
    Diverged,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver(_) | Error::QuadratureNotConverged | Error::NotSpd => EXIT_SOLVER,
        Error::BoundViolated(_) | Error::SandwichViolated(_) | Error::ChainViolation { .. } => EXIT_BOUND_VIOLATED,
        _ => EXIT_USAGE,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::Violated) => EXIT_BOUND_VIOLATED,
        Ok(Outcome::Diverged) => EXIT_DIVERGED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let config = match &cli.config {
        Some(path) => RunConfig::from_json(&read(path)?)?,
        None => RunConfig::default(),
    };
    if cli.jobs == 0 {
        return Err(Error::ConfigInvalid("--jobs must be positive".into()));
    }
    match &cli.command {
        Command::Ot {
            source,
            target,
            ground,
            alpha,
            method,
            epsilon,
        } => cmd_ot(cli, source, target, *ground, *alpha, *method, *epsilon),
        Command::Verify { gaussian } => cmd_verify(cli, &config, *gaussian),
        Command::Train => cmd_train(cli, &config),
        Command::Entangle => cmd_entangle(cli, &config),
        Command::Gaussian { dim_x, dim_y, scale } => cmd_gaussian(cli, &config, *dim_x, *dim_y, *scale),
        Command::Gen => cmd_gen(cli, &config),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Writes to `--out` when given, standard output otherwise.
fn emit(out: Option<&Path>, body: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, body)?,
        None => std::io::stdout().write_all(body)?,
    }
    Ok(())
}

fn cmd_ot(cli: &Cli, source: &Path, target: &Path, ground: Ground, alpha: f64, method: Method, epsilon: f64) -> Result<Outcome> {
    let mu = MeasureFile::from_json(&read(source)?)?.into_measure()?;
    let nu = MeasureFile::from_json(&read(target)?)?.into_measure()?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch("measures live in different dimensions".into()));
    }
    let method = match method {
        Method::Exact => OtMethod::Exact,
        Method::Sinkhorn => OtMethod::Sinkhorn { epsilon },
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let value = match ground {
        Ground::Euclidean => wasserstein_ground(&mu, &nu, |a: &[f64], b: &[f64]| sq(a, b).sqrt(), alpha, method)?,
        Ground::SquaredEuclidean => wasserstein_ground(&mu, &nu, sq, alpha, method)?,
    };
    if let Some(path) = &cli.out {
        let cost = crate::ot::CostMatrix::pairwise(mu.points(), nu.points(), |a, b| match ground {
            Ground::Euclidean => sq(a, b).sqrt(),
            Ground::SquaredEuclidean => sq(a, b),
        })?;
        let plan = crate::ot::transport(mu.weights(), nu.weights(), &cost.powf(alpha), method)?;
        fs::write(path, serde_json::to_string_pretty(&plan)?)?;
    }
    match cli.format {
        Format::Csv => println!("{value:?}"),
        Format::Json => println!("{}", serde_json::json!({ "value": value, "alpha": alpha })),
    }
    Ok(Outcome::Ok)
}

/// Source, target and the optional chain, from the scenario or measure files.
fn load_data(seed: Option<u64>, config: &RunConfig) -> Result<Scenario> {
    if let Some(s) = &config.scenario {
        let mut s = s.clone();
        if let Some(seed) = seed {
            s.seed = seed;
        }
        return generate(&s);
    }
    match (&config.source, &config.target) {
        (Some(p), Some(q)) => Ok(Scenario {
            source: MeasureFile::from_json(&read(p)?)?.into_joint()?,
            target: MeasureFile::from_json(&read(q)?)?.into_joint()?,
            chain: None,
        }),
        _ => Err(Error::ConfigInvalid("config needs `scenario` or both `source` and `target`".into())),
    }
}

fn load_model(cli: &Cli, config: &RunConfig, data: &EmpiricalJoint) -> Result<Model> {
    match &config.model {
        Some(path) => {
            let model = Model::from_json(&read(path)?)?;
            if model.input_dim != data.dim() || model.num_classes != data.num_classes() {
                return Err(Error::DimensionMismatch("model shape does not match the data".into()));
            }
            Ok(model)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            Model::init(config.model_kind.unwrap_or_default(), data.dim(), data.num_classes(), &mut rng)
        }
    }
}

fn write_reports(cli: &Cli, reports: &[BoundReport]) -> Result<()> {
    let mut buf = Vec::new();
    match cli.format {
        Format::Csv => write_reports_csv(reports, &mut buf)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, reports)?;
            buf.push(b'\n');
        }
    }
    emit(cli.out.as_deref(), &buf)
}

fn verdict(reports: &[BoundReport]) -> Outcome {
    if reports.iter().any(|r| r.failed()) {
        Outcome::Violated
    } else {
        Outcome::Ok
    }
}

fn tolerance(cli: &Cli, config: &RunConfig) -> Option<f64> {
    cli.tolerance.or(config.tolerance)
}

fn cmd_verify(cli: &Cli, config: &RunConfig, gaussian: bool) -> Result<Outcome> {
    let data = load_data(cli.seed, config)?;
    let model = load_model(cli, config, &data.source)?;
    let loss = config.loss.clone().unwrap_or_else(LossSpec::euclidean);
    let mut reports = check_all(&data.source, &data.target, &model, &loss, config.kl_bins.unwrap_or(DEFAULT_KL_BINS))?;
    if let Some(chain) = &data.chain {
        let params = config.assumptions.unwrap_or_default();
        reports.push(check_gs_implies_cc(chain, &model, &loss, &params)?);
        reports.push(check_gs_entanglement_cap(chain, &model, &loss, &params)?);
    }
    if gaussian || config.gaussian.is_some() {
        reports.extend(gaussian_reports(cli, config, 2, 2, 1.5)?);
    }
    finish_reports(cli, config, reports)
}

fn finish_reports(cli: &Cli, config: &RunConfig, mut reports: Vec<BoundReport>) -> Result<Outcome> {
    if let Some(ids) = &config.bounds {
        reports.retain(|r| ids.contains(&r.bound_id));
    }
    if let Some(tol) = tolerance(cli, config) {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(Error::ConfigInvalid("tolerance must be finite and nonnegative".into()));
        }
        reports = reports.into_iter().map(|r| r.with_tolerance(tol)).collect();
    }
    write_reports(cli, &reports)?;
    for r in reports.iter().filter(|r| r.failed()) {
        log::warn!("{} violated: lhs {:e} rhs {:e} ({})", r.bound_id, r.lhs, r.rhs, r.context);
    }
    Ok(verdict(&reports))
}

fn gaussian_reports(cli: &Cli, config: &RunConfig, dim_x: usize, dim_y: usize, scale: f64) -> Result<Vec<BoundReport>> {
    let seed = cli.seed.unwrap_or(0);
    let pair = match &config.gaussian {
        Some(p) => p.clone(),
        None => {
            if dim_x == 0 || dim_y == 0 || !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::ConfigInvalid("gaussian needs positive dimensions and scale".into()));
            }
            GaussianPair::random(dim_x, dim_y, scale, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    };
    let samples = config.samples.unwrap_or(DEFAULT_MC_SAMPLES);
    Ok(vec![
        verify_scaled_decomposition(&pair, samples, seed)?,
        verify_cross_term(&pair, 200, seed)?,
    ])
}

fn cmd_gaussian(cli: &Cli, config: &RunConfig, dim_x: usize, dim_y: usize, scale: f64) -> Result<Outcome> {
    let reports = gaussian_reports(cli, config, dim_x, dim_y, scale)?;
    finish_reports(cli, config, reports)
}

fn cmd_entangle(cli: &Cli, config: &RunConfig) -> Result<Outcome> {
    let data = load_data(cli.seed, config)?;
    let model = load_model(cli, config, &data.source)?;
    let loss = config.loss.clone().unwrap_or_else(LossSpec::euclidean);
    let method = config.ot_method.unwrap_or_default();
    let report = oracle_upper_bound_with(&data.source, &data.target, &model, &loss, method)?;
    let mut buf = Vec::new();
    match cli.format {
        Format::Csv => write_entanglement_csv(&report, &mut buf)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, &report)?;
            buf.push(b'\n');
        }
    }
    emit(cli.out.as_deref(), &buf)?;
    Ok(Outcome::Ok)
}

fn write_entanglement_csv(r: &EntanglementReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label_entanglement",
        "prediction_entanglement",
        "marginal_output_w1",
        "label_shift_w1",
        "source_risk",
        "target_risk",
        "oub",
        "wrr",
    ])?;
    w.write_record(
        [
            r.label_entanglement,
            r.prediction_entanglement,
            r.marginal_output_w1,
            r.label_shift_w1,
            r.source_risk,
            r.target_risk,
            r.oub,
            r.wrr,
        ]
        .map(|v| v.to_string()),
    )?;
    w.flush()?;
    Ok(())
}

/// Exported scenario: source, target and the chain stages when present.
#[derive(Debug, Serialize)]
struct ScenarioFile {
    source: MeasureFile,
    target: MeasureFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<ChainFile>,
}

#[derive(Debug, Serialize)]
struct ChainFile {
    stages: Vec<MeasureFile>,
    mixture: Vec<f64>,
    epsilon: f64,
    a: f64,
}

fn cmd_gen(cli: &Cli, config: &RunConfig) -> Result<Outcome> {
    if config.scenario.is_none() {
        return Err(Error::ConfigInvalid("gen needs a `scenario` in the config".into()));
    }
    let s = load_data(cli.seed, config)?;
    let file = ScenarioFile {
        source: MeasureFile::from(&s.source),
        target: MeasureFile::from(&s.target),
        chain: s.chain.as_ref().map(|c| ChainFile {
            stages: c.stages.iter().map(MeasureFile::from).collect(),
            mixture: c.mixture.clone(),
            epsilon: c.epsilon,
            a: c.a,
        }),
    };
    let mut buf = serde_json::to_vec_pretty(&file)?;
    buf.push(b'\n');
    emit(cli.out.as_deref(), &buf)?;
    Ok(Outcome::Ok)
}

/// Final-epoch row in the layout of the comparison tables.
fn summary_header() -> &'static str {
    "seed,objective,src_acc,tgt_acc,risk_p,risk_q,wrr,entangle_y,diverged"
}

fn summary_row(seed: u64, config: &TrainConfig, r: &FitResult) -> String {
    let objective = serde_json::to_value(config.objective)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
        .unwrap_or_default();
    match r.history.last() {
        Some(h) => format!(
            "{seed},{objective},{},{},{},{},{},{},{}",
            h.src_acc,
            h.tgt_acc,
            h.risk_p,
            h.risk_q,
            h.risk_p + h.w_marginal,
            h.entangle_y,
            r.diverged.is_some()
        ),
        None => format!("{seed},{objective},nan,nan,nan,nan,nan,nan,{}", r.diverged.is_some()),
    }
}

fn cmd_train(cli: &Cli, config: &RunConfig) -> Result<Outcome> {
    let train = config.train.clone().unwrap_or_default();
    let seeds: Vec<u64> = match (cli.seed, &config.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) if !list.is_empty() => list.clone(),
        _ => vec![train.seed],
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    let runs: Vec<Result<(u64, TrainConfig, FitResult)>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let data = load_data(Some(seed), config)?;
                let t = TrainConfig { seed, ..train.clone() };
                let r = fit(&data.source, &data.target, &t)?;
                Ok((seed, t, r))
            })
            .collect()
    });
    let runs: Vec<(u64, TrainConfig, FitResult)> = runs.into_iter().collect::<Result<_>>()?;

    let multi = runs.len() > 1;
    let mut summary = format!("{}\n", summary_header());
    for (seed, t, r) in &runs {
        summary.push_str(&summary_row(*seed, t, r));
        summary.push('\n');
    }
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (seed, _, r) in &runs {
                let suffix = if multi { format!("_seed{seed}") } else { String::new() };
                write_history_csv(&r.history, fs::File::create(dir.join(format!("history{suffix}.csv")))?)?;
                fs::write(dir.join(format!("model{suffix}.json")), serde_json::to_string_pretty(&r.model)?)?;
            }
            fs::write(dir.join("summary.csv"), &summary)?;
            print!("{summary}");
        }
        None => {
            let mut out = std::io::stdout().lock();
            for (_, _, r) in &runs {
                write_history_csv(&r.history, &mut out)?;
            }
            eprint!("{summary}");
        }
    }
    if runs.iter().any(|(_, _, r)| r.diverged.is_some()) {
        Ok(Outcome::Diverged)
    } else {
        Ok(Outcome::Ok)
    }
}
