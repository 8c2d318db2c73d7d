//! Command-line front end: data generation, training, identification,
//! retraining, surrogates, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
//! Failures are reported on stderr as one JSON line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    elastic_dataset_at, generate_elastic_dataset, load_dataset, meta_path, normalize, save_dataset, Bounds,
    DataError, DataMode, Dataset, GridSpec,
};
use crate::elasticity::{MaterialParams, ManufacturedSolution};
use crate::field::{Field, Problem};
use crate::loss::{LossError, LossScales, Physics};
use crate::networks::{Activation, ArchMode, FieldModel, NetworkArch, NetworkError};
use crate::plasticity::{ConsistencyMode, FlowCoefficient};
use crate::training::{
    self, gradient_check, input_derivative_check, Checkpoint, CheckpointError, LossContext,
    TrainingConfig, TrainingError, TrainingHistory, TrainingOutcome,
};

pub const SEED_ENV: &str = "ELASTINET_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Training(#[from] TrainingError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("max relative gradient error {error:e} exceeds {tolerance:e}")]
    GradCheck { error: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Training(e) if e.is_numerical() => 2,
            CliError::Loss(LossError::Autodiff(_)) | CliError::GradCheck { .. } => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Training(e) if e.is_numerical() => "numerical",
            CliError::Training(_) => "training",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Network(_) => "network",
            CliError::Loss(_) => "loss",
            CliError::Io { .. } => "io",
            CliError::GradCheck { .. } => "numerical",
        }
    }

    /// Single-line machine-readable form.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "elastinet", version, about = "Physics-informed networks for elasticity and plasticity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write manufactured elastic data on a grid.
    Generate(GenerateArgs),
    /// Train a model (solve or identify) from scratch.
    Train(TrainArgs),
    /// Continue training from a checkpoint on new data.
    Retrain(RetrainArgs),
    /// Train a model with the shear modulus as an extra input.
    Surrogate(SurrogateArgs),
    /// Evaluate a checkpoint on a grid.
    Eval(EvalArgs),
    /// Compare graph gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "elastic")]
    pub problem: String,
    #[arg(long, default_value = "100x100")]
    pub grid: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    #[arg(long = "Q", visible_alias = "q", default_value_t = 4.0)]
    pub q: f64,
    /// `force` (with body forces) or `stress`.
    #[arg(long, default_value = "force")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by the training commands. Precedence: defaults, then the
/// config file, then these flags, then `--set` overrides.
#[derive(Debug, Args, Default, Clone)]
pub struct TrainOpts {
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `solve` or `identify`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Hidden layers x neurons, e.g. `5x20`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    /// Comma-separated datasets, each generated with a different mu.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "100x100")]
    pub grid: String,
    /// Domain `x0,x1,y0,y1`; the unit square by default.
    #[arg(long)]
    pub bounds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Add closed-form fields and pointwise errors.
    #[arg(long)]
    pub exact: bool,
    #[arg(long = "Q", visible_alias = "q", default_value_t = 4.0)]
    pub q: f64,
    /// Lambda of the closed-form fields; the checkpoint's by default.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Shear modulus fed to surrogate models and used by the closed-form
    /// fields; the checkpoint's by default.
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "2x10")]
    pub arch: String,
    #[arg(long, default_value = "tanh")]
    pub activation: String,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

/// Fully resolved training settings, as written to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub arch: NetworkArch,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: NetworkArch::new(5, 20, Activation::Tanh),
            training: TrainingConfig::default(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>, CliError> {
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.training;
        match key {
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" | "epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "learning_rate" | "lr" => t.adam.learning_rate = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "epsilon" => t.adam.epsilon = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "mode" => t.mode = value.parse().map_err(usage)?,
            "normalize" => t.normalize = parse(key, value)?,
            "lambda0" => t.lambda0 = parse_optional(key, value)?,
            "mu0" => t.mu0 = parse_optional(key, value)?,
            "sigma_y0" => t.sigma_y0 = parse_optional(key, value)?,
            "term_every" => t.term_every = parse(key, value)?,
            "flow" => {
                t.plasticity.flow = match value {
                    "3/2" | "three_halves" => FlowCoefficient::ThreeHalves,
                    "2/3" | "two_thirds" => FlowCoefficient::TwoThirds,
                    _ => return Err(usage(format!("invalid flow coefficient `{value}` (expected 3/2|2/3)"))),
                }
            }
            "consistency" => {
                t.plasticity.consistency = match value {
                    "literal" => ConsistencyMode::Literal,
                    "clipped" => ConsistencyMode::Clipped,
                    _ => return Err(usage(format!("invalid consistency `{value}` (expected literal|clipped)"))),
                }
            }
            "arch" => {
                let mode = self.arch.mode;
                self.arch = NetworkArch::parse_shape(value, self.arch.activation)?.with_mode(mode);
            }
            "activation" => self.arch.activation = value.parse()?,
            "network_mode" => self.arch.mode = value.parse::<ArchMode>()?,
            _ => return Err(usage(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file. `#` starts a
    /// comment; values may be quoted.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
            self.apply(k.trim(), v.trim().trim_matches('"'))?;
        }
        Ok(())
    }

    /// Resolves settings from `opts`. The seed falls back to the
    /// environment variable when no other source sets it.
    pub fn resolve(opts: &TrainOpts, env_seed: Option<&str>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut given: Vec<String> = Vec::new();
        if let Some(path) = &opts.config {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            given.extend(text.lines().filter_map(|l| {
                let l = l.split('#').next().unwrap_or("");
                l.split_once('=').map(|(k, _)| k.trim().to_string())
            }));
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("mode", opts.mode.clone()),
            ("activation", opts.activation.clone()),
            ("arch", opts.arch.clone()),
            ("max_epochs", opts.max_epochs.map(|v| v.to_string())),
            ("patience", opts.patience.map(|v| v.to_string())),
            ("batch_size", opts.batch_size.map(|v| v.to_string())),
            ("learning_rate", opts.lr.map(|v| v.to_string())),
            ("seed", opts.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                given.push(k.to_string());
                cfg.apply(k, &v)?;
            }
        }
        for s in &opts.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("override `{s}` is not key=value")))?;
            given.push(k.trim().to_string());
            cfg.apply(k.trim(), v.trim())?;
        }
        let was_given = |k: &str| given.iter().any(|g| g == k);
        // A short run without an explicit patience stops on max_epochs.
        if !was_given("patience") && cfg.training.patience > cfg.training.max_epochs {
            cfg.training.patience = cfg.training.max_epochs;
        }
        if !was_given("seed") {
            if let Some(v) = env_seed {
                cfg.training.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
            }
        }
        cfg.training.validate()?;
        cfg.arch.validate()?;
        Ok(cfg)
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for p in paths {
        out.insert(p.display().to_string(), sha256_file(p)?);
        let meta = meta_path(p);
        if meta.exists() {
            out.insert(meta.display().to_string(), sha256_file(&meta)?);
        }
    }
    Ok(out)
}

/// Writes `manifest.json` describing a run: command line, resolved
/// settings, seed and SHA-256 of inputs and artifacts.
fn write_manifest(
    path: &Path,
    argv: &[String],
    config: Value,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    artifacts: &[PathBuf],
) -> Result<(), CliError> {
    let mut hashes = BTreeMap::new();
    for a in artifacts {
        let name = a.file_name().map_or_else(|| a.display().to_string(), |n| n.to_string_lossy().into());
        hashes.insert(name, sha256_file(a)?);
    }
    let manifest = json!({
        "tool": "elastinet",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "artifacts": hashes,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Parses `argv` (including the program name) and runs the command.
/// Output lines go to `out`. Returns the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn io::Write, err: &mut dyn io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = writeln!(err, "{}", usage(e.to_string().trim().to_string()).to_json_line());
                    1
                }
            };
        }
    };
    let text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(cli.command, &text, env_seed.as_deref(), out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json_line());
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn io::Write, value: Value) {
    let _ = writeln!(out, "{value}");
}

fn run(command: Command, argv: &[String], env_seed: Option<&str>, out: &mut dyn io::Write) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => generate(&a, argv, out),
        Command::Train(a) => train(&a, argv, env_seed, out),
        Command::Retrain(a) => retrain(&a, argv, env_seed, out),
        Command::Surrogate(a) => surrogate(&a, argv, env_seed, out),
        Command::Eval(a) => eval(&a, argv, out),
        Command::Gradcheck(a) => gradcheck(&a, env_seed, out),
    }
}

fn generate(a: &GenerateArgs, argv: &[String], out: &mut dyn io::Write) -> Result<(), CliError> {
    let problem: Problem = a.problem.parse().map_err(usage)?;
    if problem == Problem::Plastic {
        return Err(usage(
            "plastic data cannot be generated in closed form; load solver output with `train --data`",
        ));
    }
    let mode: DataMode = a.mode.parse().map_err(usage)?;
    let grid = GridSpec::parse(&a.grid)?;
    let d = generate_elastic_dataset(&grid, a.lambda, a.mu, a.q, mode)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_dataset(&d, &a.out)?;
    let meta = meta_path(&a.out);
    let manifest = a.out.with_extension("manifest.json");
    let config = json!({ "problem": "elastic", "grid": a.grid, "lambda": a.lambda, "mu": a.mu, "Q": a.q, "mode": a.mode });
    write_manifest(&manifest, argv, config, None, BTreeMap::new(), &[a.out.clone(), meta])?;
    emit(out, json!({ "points": d.len(), "data": a.out.display().to_string() }));
    Ok(())
}

fn must_exist(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    must_exist(path)?;
    Ok(load_dataset(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    must_exist(path)?;
    Ok(Checkpoint::load(path)?)
}

/// Writes history, checkpoint and manifest of a finished (or failed) run.
fn finish(
    dir: &Path,
    result: Result<TrainingOutcome, TrainingError>,
    argv: &[String],
    cfg: &RunConfig,
    inputs: BTreeMap<String, String>,
    out: &mut dyn io::Write,
) -> Result<(), CliError> {
    let history_path = dir.join("history.csv");
    let write_history = |h: &TrainingHistory| h.write_csv(&history_path).map_err(io_err(&history_path));
    let config = serde_json::to_value(cfg).expect("config serializes");
    let seed = Some(cfg.training.seed);
    let outcome = match result {
        Ok(o) => o,
        Err(TrainingError::NonFinite {
            what,
            epoch,
            batch,
            detail,
            history,
        }) => {
            write_history(&history)?;
            write_manifest(
                &dir.join("manifest.json"),
                argv,
                config,
                seed,
                inputs,
                &[history_path.clone()],
            )?;
            return Err(TrainingError::NonFinite {
                what,
                epoch,
                batch,
                detail,
                history,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    write_history(&outcome.history)?;
    let ckpt = dir.join("best.ckpt.json");
    outcome.checkpoint.save(&ckpt)?;
    write_manifest(&dir.join("manifest.json"), argv, config, seed, inputs, &[history_path, ckpt])?;
    let h = &outcome.history;
    let m = outcome.material();
    let mut summary = json!({
        "lambda": m.lambda,
        "best_loss": h.best_loss,
        "best_epoch": h.best_epoch,
        "epochs": h.epochs(),
        "initial_loss": h.initial_loss,
        "stop": h.stop,
    });
    // Surrogates take mu per row, so the stored value means nothing.
    if !outcome.checkpoint.inputs.iter().any(|i| i == "mu") {
        summary["mu"] = json!(m.mu);
    }
    if let Some(s) = m.sigma_y {
        summary["sigma_y"] = json!(s);
    }
    if let Some(r) = h.initial_loss_ratio {
        summary["initial_loss_ratio"] = json!(r);
        summary["scratch_initial_loss"] = json!(h.scratch_initial_loss);
    }
    emit(out, summary);
    Ok(())
}

fn train(a: &TrainArgs, argv: &[String], env_seed: Option<&str>, out: &mut dyn io::Write) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.opts, env_seed)?;
    let data = load(&a.data)?;
    create_dir(&a.out)?;
    let inputs = hash_inputs(&[&a.data])?;
    let result = training::fresh_model(&cfg.arch, &data, cfg.training.seed)
        .and_then(|model| training::train(model, &data, &cfg.training));
    finish(&a.out, result, argv, &cfg, inputs, out)
}

fn retrain(a: &RetrainArgs, argv: &[String], env_seed: Option<&str>, out: &mut dyn io::Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.init)?;
    // The architecture defaults to the checkpoint's; an explicit one is
    // checked against it.
    let mut opts = a.opts.clone();
    let mut base = vec![
        format!("arch={}x{}", ckpt.arch.layers, ckpt.arch.neurons),
        format!("activation={}", ckpt.arch.activation),
        format!("network_mode={}", mode_name(ckpt.arch.mode)),
        "mode=identify".to_string(),
    ];
    base.retain(|s| {
        let k = s.split('=').next().unwrap_or("");
        let flagged = match k {
            "arch" => opts.arch.is_some(),
            "activation" => opts.activation.is_some(),
            "mode" => opts.mode.is_some(),
            _ => false,
        };
        !flagged && !opts.set.iter().any(|o| o.split('=').next().map(str::trim) == Some(k))
    });
    base.append(&mut opts.set);
    opts.set = base;
    let cfg = RunConfig::resolve(&opts, env_seed)?;
    let data = load(&a.data)?;
    create_dir(&a.out)?;
    let inputs = hash_inputs(&[&a.init, &a.data])?;
    let result = training::retrain(&ckpt, &cfg.arch, &data, &cfg.training);
    finish(&a.out, result, argv, &cfg, inputs, out)
}

fn mode_name(mode: ArchMode) -> &'static str {
    match mode {
        ArchMode::Independent => "independent",
        ArchMode::Shared => "shared",
    }
}

fn surrogate(a: &SurrogateArgs, argv: &[String], env_seed: Option<&str>, out: &mut dyn io::Write) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.opts, env_seed)?;
    let datasets = a.data.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out)?;
    let paths: Vec<&Path> = a.data.iter().map(PathBuf::as_path).collect();
    let inputs = hash_inputs(&paths)?;
    let result = training::train_surrogate(&datasets, &cfg.arch, &cfg.training);
    finish(&a.out, result, argv, &cfg, inputs, out)
}

fn parse_bounds(s: &str) -> Result<Bounds, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| parse("bounds", p.trim()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, x1, y0, y1] if x1 > x0 && y1 > y0 => Ok(Bounds {
            x_min: x0,
            x_max: x1,
            y_min: y0,
            y_max: y1,
        }),
        _ => Err(usage(format!("bounds `{s}` are not x0,x1,y0,y1 with x0<x1, y0<y1"))),
    }
}

fn eval(a: &EvalArgs, argv: &[String], out: &mut dyn io::Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = ckpt.model()?;
    let mut grid = GridSpec::parse(&a.grid)?;
    if let Some(b) = &a.bounds {
        grid = grid.with_bounds(parse_bounds(b)?);
    }
    let surrogate = model.inputs().iter().any(|i| i == "mu");
    let mu_input = match (surrogate, a.mu) {
        (true, Some(mu)) => Some(mu),
        (true, None) => return Err(usage("this checkpoint takes mu as an input; pass --mu")),
        (false, _) => None,
    };
    let material = ckpt.material();
    let exact = if a.exact {
        if ckpt.problem != Problem::Elastic {
            return Err(usage("--exact is only available for elastic checkpoints"));
        }
        Some(ManufacturedSolution::new(
            a.lambda.unwrap_or(material.lambda),
            a.mu.unwrap_or(material.mu),
            a.q,
        ))
    } else {
        None
    };
    let scales = ckpt.normalization.clone().unwrap_or_default();
    let fields = model.fields().to_vec();
    let checked: Vec<Field> = fields
        .iter()
        .copied()
        .filter(|f| matches!(f, Field::Ux | Field::Uy | Field::Sxx | Field::Syy | Field::Sxy))
        .collect();

    let mut header: Vec<String> = vec!["x".into(), "y".into()];
    if surrogate {
        header.push("mu".into());
    }
    header.extend(fields.iter().map(|f| f.name().to_string()));
    if exact.is_some() {
        header.extend(checked.iter().map(|f| format!("exact_{f}")));
        header.extend(checked.iter().map(|f| format!("err_{f}")));
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Data(DataError::Csv(e)))?;
    w.write_record(&header).map_err(|e| CliError::Data(DataError::Csv(e)))?;
    let mut sq_err: BTreeMap<Field, (f64, f64)> = BTreeMap::new();
    let mut max_u = (f64::NEG_INFINITY, 0.0, 0.0);
    for (x, y) in crate::data::sample_grid(&grid)? {
        let mut input = vec![x, y];
        input.extend(mu_input);
        let pred: BTreeMap<Field, f64> = model
            .predict(&input)?
            .into_iter()
            .map(|(f, v)| (f, v * scales.scale(f)))
            .collect();
        let mut row: Vec<String> = input.iter().map(|v| format!("{v:.16e}")).collect();
        row.extend(fields.iter().map(|f| format!("{:.16e}", pred[f])));
        if let Some(sol) = &exact {
            let (ux, uy) = sol.displacement(x, y);
            let (sxx, syy, sxy) = sol.stress(x, y);
            let truth = |f: Field| match f {
                Field::Ux => ux,
                Field::Uy => uy,
                Field::Sxx => sxx,
                Field::Syy => syy,
                _ => sxy,
            };
            row.extend(checked.iter().map(|&f| format!("{:.16e}", truth(f))));
            row.extend(checked.iter().map(|&f| format!("{:.16e}", pred[&f] - truth(f))));
            for &f in &checked {
                let e = sq_err.entry(f).or_insert((0.0, 0.0));
                e.0 += (pred[&f] - truth(f)).powi(2);
                e.1 += truth(f).powi(2);
            }
            let mag = ux.hypot(uy);
            if mag > max_u.0 {
                let err = (pred[&Field::Ux] - ux).hypot(pred[&Field::Uy] - uy) / mag;
                max_u = (mag, err, 0.0);
            }
        }
        w.write_record(&row).map_err(|e| CliError::Data(DataError::Csv(e)))?;
    }
    w.flush().map_err(io_err(&a.out))?;
    drop(w);
    write_manifest(
        &a.out.with_extension("manifest.json"),
        argv,
        json!({ "grid": a.grid, "bounds": a.bounds, "exact": a.exact, "Q": a.q, "lambda": a.lambda, "mu": a.mu }),
        Some(ckpt.seed),
        hash_inputs(&[&a.ckpt])?,
        &[a.out.clone()],
    )?;
    let mut summary = json!({ "points": grid.len(), "out": a.out.display().to_string() });
    if exact.is_some() {
        let rel: BTreeMap<String, f64> = sq_err
            .iter()
            .map(|(f, (e, t))| (f.name().to_string(), (e / t.max(f64::MIN_POSITIVE)).sqrt()))
            .collect();
        summary["relative_l2_error"] = json!(rel);
        summary["max_displacement_point_error"] = json!(max_u.1);
    }
    emit(out, summary);
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, env_seed: Option<&str>, out: &mut dyn io::Write) -> Result<(), CliError> {
    let activation: Activation = a.activation.parse()?;
    let arch = NetworkArch::parse_shape(&a.arch, activation)?;
    if a.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    let seed = match (a.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
        (None, None) => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(f64, f64)> = (0..a.points).map(|_| (rng.gen(), rng.gen())).collect();
    let raw = elastic_dataset_at(&points, 1.0, 0.5, 4.0, DataMode::Force)?;
    let (data, record) = normalize(&raw)?;
    let scales = LossScales::from_record(&record);
    let model = FieldModel::build(Problem::Elastic.network_fields(), &arch, &data.input_names(), seed)?;
    let material = MaterialParams::fixed(rng.gen_range(0.5..2.0), rng.gen_range(0.25..1.0)).identify();
    let physics = Physics::Elastic;
    let ctx = LossContext {
        dataset: &data,
        scales: &scales,
        physics: &physics,
    };
    let rows: Vec<usize> = (0..data.len()).collect();
    let report = gradient_check(&model, &material, &ctx, &rows, a.step)?;
    let inputs: Vec<Vec<f64>> = points.iter().map(|&(x, y)| vec![x, y]).collect();
    let input_error = input_derivative_check(&model, &inputs, a.step)?;
    let worst = report.max_rel_error.max(input_error);
    emit(
        out,
        json!({
            "max_rel_error": worst,
            "parameter_gradient_error": report.max_rel_error,
            "input_derivative_error": input_error,
            "parameters": report.checked,
            "points": a.points,
            "seed": seed,
            "step": a.step,
        }),
    );
    if worst > a.tolerance {
        return Err(CliError::GradCheck {
            error: worst,
            tolerance: a.tolerance,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainMode;

    #[test]
    fn settings_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# demo\nmode = \"identify\"\npatience = 7\nmax_epochs=9\nlambda0 = 2.0\n").unwrap();
        let opts = TrainOpts {
            config: Some(path),
            patience: Some(8),
            set: vec!["patience=9".into(), "flow=2/3".into()],
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&opts, Some("41")).unwrap();
        assert_eq!(cfg.training.mode, TrainMode::Identify);
        assert_eq!(cfg.training.patience, 9);
        assert_eq!(cfg.training.lambda0, Some(2.0));
        assert_eq!(cfg.training.plasticity.flow, FlowCoefficient::TwoThirds);
        assert_eq!(cfg.training.seed, 41);
        let opts = TrainOpts {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(&opts, Some("41")).unwrap().training.seed, 3);
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply("nope", "1"), Err(CliError::Usage(_))));
        assert!(matches!(cfg.apply("patience", "x"), Err(CliError::Usage(_))));
        assert!(cfg.apply_text("just words").is_err());
        let opts = TrainOpts {
            patience: Some(20_000),
            ..Default::default()
        };
        let e = RunConfig::resolve(&opts, None).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn error_line_is_json() {
        let e = CliError::GradCheck {
            error: 1e-3,
            tolerance: 1e-6,
        };
        let v: Value = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["error"], "numerical");
        assert!(!e.to_json_line().contains('\n'));
    }
}
