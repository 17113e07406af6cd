//! `lss`: simulate, price and calibrate Lévy semistationary spot models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lss_core::calibration::{deseasonalize, empirical_acf, run_pipeline, PipelineConfig, PriceSeries};
use lss_core::forward::{ForwardState, ForwardSurface, PricingMeasure, PricingMode};
use lss_core::kernels::KernelSpec;
use lss_core::levy::{EsscherParams, LevyModel};
use lss_core::lss::{LssProcess, SimConfig};
use lss_core::options::{black76, price_option, FourierGrid, OptionSpec, Payoff};
use lss_core::spot::{Seasonality, SpotKind, SpotModel};
use lss_core::volatility::VolatilityModel;
use lss_core::LssError;

#[derive(Parser)]
#[command(name = "lss", version, about = "Levy semistationary models for energy spot prices")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "LSS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate spot paths and write them with summary statistics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward curve F_t(T) with its volatility.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// Comma-separated delivery times.
        #[arg(long, value_delimiter = ',', required = true)]
        maturities: Vec<f64>,
        #[command(flatten)]
        measure: MeasureArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Price a European option on a forward by Fourier inversion.
    PriceOption {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long = "type", value_enum, default_value_t = OptionKind::Call)]
        kind: OptionKind,
        #[arg(long)]
        strike: f64,
        /// Exercise time.
        #[arg(long)]
        exercise: f64,
        /// Delivery time of the underlying forward; defaults to the exercise time.
        #[arg(long)]
        maturity: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        #[command(flatten)]
        measure: MeasureArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the calibration pipeline on a price series.
    Calibrate {
        /// CSV with header date,price (or simulator output).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lags: Option<usize>,
        #[arg(long, default_value_t = 20)]
        robust_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove the seasonal trend from a price series.
    Deseasonalize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        robust_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args, Serialize)]
struct MeasureArgs {
    /// Market price of risk of the driver.
    #[arg(long)]
    theta: Option<f64>,
    /// Market price of risk of the volatility subordinator.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Grid of the sampled driver history.
    #[arg(long, default_value_t = 0.05)]
    history_dt: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Csv,
    Binary,
    Both,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Girsanov,
    Esscher,
}

/// Model file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    #[serde(default = "geometric")]
    kind: SpotKind,
    #[serde(default)]
    seasonality: Seasonality,
    #[serde(default)]
    mu: f64,
    kernel: KernelSpec,
    #[serde(default)]
    drift_kernel: Option<KernelSpec>,
    #[serde(default)]
    skew: f64,
    levy: LevyModel,
    #[serde(default = "unit_vol")]
    vol: VolatilityModel,
    #[serde(default)]
    measure: Option<MeasureConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureConfig {
    #[serde(default)]
    theta: f64,
    #[serde(default)]
    eta: f64,
    mode: Option<Mode>,
}

fn geometric() -> SpotKind {
    SpotKind::Geometric
}

fn unit_vol() -> VolatilityModel {
    VolatilityModel::Constant { c: 1.0 }
}

enum CliError {
    Config(String),
    Math(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Math(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Math(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<LssError> for CliError {
    fn from(e: LssError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else if matches!(e.root(), LssError::Io(_)) {
            CliError::Io(e.to_string())
        } else {
            CliError::Math(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Loaded {
    model: SpotModel,
    measure: Option<MeasureConfig>,
    hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Loaded> {
    let bytes = read(path)?;
    let cfg: ModelConfig =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let check = |r: lss_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
    check(cfg.kernel.validate())?;
    if let Some(q) = &cfg.drift_kernel {
        check(q.validate())?;
    }
    check(cfg.levy.validate())?;
    let model = SpotModel {
        kind: cfg.kind,
        seasonality: cfg.seasonality,
        core: LssProcess {
            mu: cfg.mu,
            g: cfg.kernel,
            q: cfg.drift_kernel,
            driver: cfg.levy,
            vol: cfg.vol,
            skew: cfg.skew,
        },
    };
    check(model.validate())?;
    Ok(Loaded { model, measure: cfg.measure, hash: sha256_hex(&bytes) })
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    input_sha256: &'a str,
    seed: Option<u64>,
    arguments: A,
}

fn manifest<'a, A: Serialize>(command: &'a str, hash: &'a str, seed: Option<u64>, arguments: A) -> Manifest<'a, A> {
    Manifest { command, version: env!("CARGO_PKG_VERSION"), input_sha256: hash, seed, arguments }
}

fn write_manifest<A: Serialize>(dir: &Path, command: &str, hash: &str, seed: Option<u64>, arguments: A) -> Result<()> {
    let m = manifest(command, hash, seed, arguments);
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct Summary {
    n_paths: usize,
    n_steps: usize,
    mean: f64,
    var: f64,
    /// Path-averaged autocorrelation at lags 0..=10 steps.
    acf: Vec<f64>,
    positivity_warning: bool,
}

fn summarize(paths: &[Vec<f64>], warn: bool) -> Summary {
    let n: usize = paths.iter().map(|p| p.len()).sum();
    let mean = paths.iter().flatten().sum::<f64>() / n as f64;
    let var = paths.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let lags = 10;
    let mut acf = vec![0.0; lags + 1];
    let mut used = 0;
    for p in paths {
        if let Ok(a) = empirical_acf(p, lags) {
            for (s, v) in acf.iter_mut().zip(a) {
                *s += v;
            }
            used += 1;
        }
    }
    if used == 0 {
        acf.clear();
    } else {
        acf.iter_mut().for_each(|v| *v /= used as f64);
    }
    Summary {
        n_paths: paths.len(),
        n_steps: paths.first().map_or(0, |p| p.len().saturating_sub(1)),
        mean,
        var,
        acf,
        positivity_warning: warn,
    }
}

#[derive(Serialize)]
struct SimulateArgs {
    paths: usize,
    dt: f64,
    horizon: f64,
    format: Format,
}

fn cmd_simulate(
    config: &Path,
    paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<()> {
    let loaded = load_model(config)?;
    let model = &loaded.model;
    let cfg = SimConfig::new(dt, horizon, paths, seed);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut sim = model.core.simulate(&cfg)?;
    let summary = summarize(&sim.paths, model.positivity_warning());
    for p in &mut sim.paths {
        *p = model.spot_path(&sim.times, p);
    }
    create_dir(out)?;
    if matches!(format, Format::Csv | Format::Both) {
        sim.write_csv(fs::File::create(out.join("paths.csv"))?)?;
    }
    if matches!(format, Format::Binary | Format::Both) {
        sim.write_binary(std::io::BufWriter::new(fs::File::create(out.join("paths.lssp"))?))?;
    }
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_manifest(out, "simulate", &loaded.hash, Some(seed), SimulateArgs { paths, dt, horizon, format })?;
    if summary.positivity_warning {
        eprintln!("warning: arithmetic model without positivity guarantee");
    }
    Ok(())
}

fn surface(loaded: Loaded, t: f64, m: &MeasureArgs) -> Result<ForwardSurface> {
    let from_file = loaded.measure.unwrap_or(MeasureConfig { theta: 0.0, eta: 0.0, mode: None });
    let esscher = EsscherParams { theta: m.theta.unwrap_or(from_file.theta), eta: m.eta.unwrap_or(from_file.eta) };
    let mode = match m.mode.or(from_file.mode) {
        Some(Mode::Girsanov) => PricingMode::BrownianGirsanov,
        Some(Mode::Esscher) => PricingMode::GeneralEsscher,
        None => match (&loaded.model.core.driver, loaded.model.kind) {
            (LevyModel::Brownian { drift, .. }, SpotKind::Geometric) if *drift == 0.0 => PricingMode::BrownianGirsanov,
            _ => PricingMode::GeneralEsscher,
        },
    };
    if !(m.history_dt > 0.0) {
        return Err(CliError::Config(format!("history-dt must be positive, got {}", m.history_dt)));
    }
    let state = ForwardState::sample(&loaded.model.core, t, m.history_dt, 1e-6, m.seed)?;
    ForwardSurface::new(loaded.model, PricingMeasure { esscher, mode }, state).map_err(|e| match e {
        LssError::Measure(_) | LssError::Strip { .. } => CliError::Math(e.to_string()),
        e => CliError::from(e),
    })
}

#[derive(Serialize)]
struct ForwardOutput {
    t: f64,
    spot: f64,
    mode: PricingMode,
    rows: usize,
}

fn cmd_forward(config: &Path, t: f64, maturities: &[f64], m: &MeasureArgs, out: &Path) -> Result<()> {
    let loaded = load_model(config)?;
    let hash = loaded.hash.clone();
    let g0 = loaded.model.core.g.value(0.0);
    let fs_ = surface(loaded, t, m)?;
    let curve = fs_.forward_curve(maturities)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["T", "F", "sigma_F", "samuelson"])?;
    for (mat, f, s) in &curve {
        // σ_F(t,T)/σ_F(t,t): the Samuelson damping g(T-t)/g(0+)
        let ratio = if g0.is_finite() && g0 != 0.0 { fs_.model.core.g.value(mat - t) / g0 } else { f64::NAN };
        w.write_record([mat.to_string(), f.to_string(), s.to_string(), ratio.to_string()])?;
    }
    w.flush()?;
    let m_path = out.with_extension("manifest.json");
    fs::write(m_path, serde_json::to_string_pretty(&manifest("forward", &hash, Some(m.seed), m))?)?;
    let report = ForwardOutput { t, spot: fs_.spot()?, mode: fs_.measure.mode, rows: curve.len() };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct OptionOutput<'a> {
    price: f64,
    error_estimate: f64,
    forward: f64,
    /// Black-76 at the model's integrated variance; constant volatility only.
    black76: Option<f64>,
    manifest: Manifest<'a, &'a MeasureArgs>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_price_option(
    config: &Path,
    t: f64,
    kind: OptionKind,
    strike: f64,
    exercise: f64,
    maturity: Option<f64>,
    rate: f64,
    alpha: f64,
    m: &MeasureArgs,
    out: Option<&Path>,
) -> Result<()> {
    let loaded = load_model(config)?;
    let hash = loaded.hash.clone();
    let fs_ = surface(loaded, t, m)?;
    let maturity = maturity.unwrap_or(exercise);
    let payoff = match kind {
        OptionKind::Call => Payoff::Call { strike },
        OptionKind::Put => Payoff::Put { strike },
    };
    let spec = OptionSpec { payoff, exercise, maturity, rate, damping_alpha: alpha };
    let p = price_option(&spec, &fs_, &FourierGrid::default())?;
    let forward = fs_.forward(maturity)?;
    let black = match fs_.model.core.vol {
        VolatilityModel::Constant { c } => {
            let g = &fs_.model.core.g;
            let var = fs_.model.core.driver.gaussian_variance()
                * c
                * g.integral_sq(maturity - exercise, maturity - t).map_err(CliError::from)?;
            let disc = (-rate * (exercise - t)).exp();
            Some(black76(forward, strike, var, disc, matches!(kind, OptionKind::Call)))
        }
        _ => None,
    };
    let o = OptionOutput {
        price: p.price,
        error_estimate: p.error_estimate,
        forward,
        black76: black,
        manifest: manifest("price-option", &hash, Some(m.seed), m),
    };
    let text = serde_json::to_string_pretty(&o)?;
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrateArgs {
    lags: Option<usize>,
    robust_iters: usize,
}

fn load_series(path: &Path) -> Result<(PriceSeries, String)> {
    let bytes = read(path)?;
    let s = PriceSeries::from_csv_reader(&bytes[..]).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((s, sha256_hex(&bytes)))
}

fn cmd_calibrate(data: &Path, lags: Option<usize>, robust_iters: usize, out: &Path) -> Result<()> {
    let (s, hash) = load_series(data)?;
    let report = run_pipeline(&s, &PipelineConfig { robust_iters, lags })?;
    create_dir(out)?;
    report.write(out)?;
    write_manifest(out, "calibrate", &hash, None, CalibrateArgs { lags, robust_iters })?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(top) = report.marginal_fits.first() {
        println!("top family: {} (symmetric={}), aic {:.3}", top.family_tag.name(), top.symmetric, top.aic);
    }
    Ok(())
}

fn cmd_deseasonalize(data: &Path, robust_iters: usize, out: &Path) -> Result<()> {
    let (s, hash) = load_series(data)?;
    let d = deseasonalize(&s, robust_iters)?;
    create_dir(out)?;
    fs::write(out.join("seasonality.json"), serde_json::to_string_pretty(&d.seasonality)?)?;
    let mut w = csv::Writer::from_path(out.join("residuals.csv"))?;
    w.write_record(["date", "t", "residual", "weight"])?;
    for i in 0..d.residuals.len() {
        w.write_record([
            s.timestamps[i].to_string(),
            d.times[i].to_string(),
            d.residuals[i].to_string(),
            d.weights[i].to_string(),
        ])?;
    }
    w.flush()?;
    write_manifest(out, "deseasonalize", &hash, None, CalibrateArgs { lags: None, robust_iters })?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { config, paths, dt, horizon, seed, format, out } => {
            cmd_simulate(&config, paths, dt, horizon, seed, format, &out)
        }
        Command::Forward { config, t, maturities, measure, out } => {
            cmd_forward(&config, t, &maturities, &measure, &out)
        }
        Command::PriceOption { config, t, kind, strike, exercise, maturity, rate, alpha, measure, out } => {
            cmd_price_option(&config, t, kind, strike, exercise, maturity, rate, alpha, &measure, out.as_deref())
        }
        Command::Calibrate { data, lags, robust_iters, out } => cmd_calibrate(&data, lags, robust_iters, &out),
        Command::Deseasonalize { data, robust_iters, out } => cmd_deseasonalize(&data, robust_iters, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
