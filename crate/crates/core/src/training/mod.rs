//! Adam training with shuffled mini-batches and early stopping, material
//! identification, checkpointing, transfer retraining and surrogate models.

mod adam;
mod checkpoint;
mod engine;
mod gradcheck;
mod history;

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{denormalize, normalize, normalize_with, DataError, Dataset, NormalizationRecord};
use crate::elasticity::{MaterialError, MaterialParam, MaterialParams};
use crate::field::{Field, Problem};
use crate::loss::{LossError, LossReport, LossScales, Physics, Term};
use crate::networks::{FieldModel, NetworkArch, NetworkError};
use crate::plasticity::PlasticityOptions;

pub use adam::{adam_step, AdamConfig, AdamError, Moments};
pub use checkpoint::{AdamState, Checkpoint, CheckpointError, LayerWeights, MaterialState, CHECKPOINT_VERSION};
pub use engine::{batch_loss_and_gradient, evaluate_loss, evaluate_rows, LossContext};
pub use gradcheck::{gradient_check, input_derivative_check, GradCheckReport};
pub use history::{EpochRecord, Failure, StopReason, TrainingHistory};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{0}")]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Material(#[from] MaterialError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("material parameter `{0}` is neither given nor recorded in the data")]
    UnknownMaterial(&'static str),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
        detail: String,
        history: Box<TrainingHistory>,
    },
    #[error("architecture mismatch:\n  checkpoint: {}\n  requested:  {}", checkpoint.join("; "), requested.join("; "))]
    ArchitectureMismatch {
        checkpoint: Vec<String>,
        requested: Vec<String>,
    },
    #[error("surrogate training needs at least two distinct mu values, got {0}")]
    DegenerateSurrogate(usize),
}

impl TrainingError {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainingError::NonFinite { .. })
            || matches!(self, TrainingError::Loss(LossError::Autodiff(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Material parameters are known and fixed.
    Solve,
    /// Material parameters are trained alongside the networks.
    Identify,
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solve" => Ok(TrainMode::Solve),
            "identify" => Ok(TrainMode::Identify),
            _ => Err(format!("unknown training mode `{s}` (expected solve|identify)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: TrainMode,
    /// Scale field columns by their max magnitude before training.
    pub normalize: bool,
    /// Initial or fixed values in physical units. Unset trainable values
    /// start at 1 in normalized units; unset fixed values come from the data.
    pub lambda0: Option<f64>,
    pub mu0: Option<f64>,
    pub sigma_y0: Option<f64>,
    pub plasticity: PlasticityOptions,
    /// Per-term losses are recorded every this many epochs.
    pub term_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 10_000,
            patience: 500,
            adam: AdamConfig::default(),
            seed: 0,
            mode: TrainMode::Solve,
            normalize: true,
            lambda0: None,
            mu0: None,
            sigma_y0: None,
            plasticity: PlasticityOptions::default(),
            term_every: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if self.term_every == 0 {
            return bad("term_every must be at least 1".into());
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is invalid", a.learning_rate));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(a.epsilon > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Result of a training run. The checkpoint holds the best-loss state.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub history: TrainingHistory,
    pub checkpoint: Checkpoint,
}

impl TrainingOutcome {
    pub fn material(&self) -> MaterialParams {
        self.checkpoint.material()
    }
}

/// Fills missing forces and applies normalization: `record` if given, the
/// dataset's own record if it has one, a fitted one if `fit` is set.
pub fn prepare_dataset(
    dataset: &Dataset,
    record: Option<&NormalizationRecord>,
    fit: bool,
) -> Result<(Dataset, LossScales), TrainingError> {
    let complete = dataset.column(Field::Fx).is_some() && dataset.column(Field::Fy).is_some();
    if complete && record.is_none() {
        if let Some(own) = &dataset.normalization {
            dataset.validate()?;
            let scales = LossScales::from_record(own);
            return Ok((dataset.clone(), scales));
        }
    }
    let own = dataset.normalization.clone();
    let physical = denormalize(dataset).with_recovered_forces()?;
    physical.validate()?;
    let record = record.cloned().or(own);
    let (data, scales) = match record {
        Some(r) => {
            let d = normalize_with(&physical, &r)?;
            (d, LossScales::from_record(&r))
        }
        None if fit => {
            let (d, r) = normalize(&physical)?;
            (d, LossScales::from_record(&r))
        }
        None => (physical, LossScales::identity()),
    };
    Ok((data, scales))
}

/// Material parameters at the start of training.
pub fn initial_material(
    problem: Problem,
    dataset: &Dataset,
    config: &TrainingConfig,
    scales: &LossScales,
) -> Result<MaterialParams, TrainingError> {
    let known = dataset.material;
    let pick = |given: Option<f64>, recorded: Option<f64>, name: &'static str, default: f64| match config.mode {
        TrainMode::Identify => Ok(given.unwrap_or(default)),
        TrainMode::Solve => given.or(recorded).ok_or(TrainingError::UnknownMaterial(name)),
    };
    let lambda = pick(config.lambda0, known.lambda, "lambda", scales.modulus())?;
    let mu = if dataset.mu.is_some() {
        // per-row input; the stored value only has to be admissible
        config.mu0.or(known.mu).unwrap_or(1.0)
    } else {
        pick(config.mu0, known.mu, "mu", scales.modulus())?
    };
    let mut m = MaterialParams::fixed(lambda, mu);
    if problem == Problem::Plastic {
        m.sigma_y = Some(pick(config.sigma_y0, known.sigma_y, "sigma_y", scales.stress)?);
    }
    if config.mode == TrainMode::Identify {
        m = m.identify();
    }
    m.validate()?;
    Ok(m)
}

fn param_name(model: &FieldModel, material: &[MaterialParam], index: usize) -> String {
    let offsets = model.param_offsets();
    let n_net = model.param_count();
    if index >= n_net {
        return material
            .get(index - n_net)
            .map_or_else(|| format!("parameter {index}"), |p| p.name().to_string());
    }
    let net = offsets.iter().rposition(|&o| o <= index).expect("offset 0 exists");
    let label = match model.arch().mode {
        crate::networks::ArchMode::Independent => model.fields()[net].name().to_string(),
        crate::networks::ArchMode::Shared => "shared".into(),
    };
    let mut local = index - offsets[net];
    for (l, layer) in model.networks()[net].layers().iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        if local < rows * cols {
            return format!("{label}.layer{l}.W[{},{}]", local / cols, local % cols);
        }
        local -= rows * cols;
        if local < rows {
            return format!("{label}.layer{l}.b[{local}]");
        }
        local -= rows;
    }
    format!("{label}[{index}]")
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial: f64) -> Self {
        Self {
            patience,
            best: initial,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records an epoch loss. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

struct Run<'a> {
    problem: Problem,
    data: &'a Dataset,
    scales: LossScales,
    physics: Physics,
    config: &'a TrainingConfig,
    record: Option<NormalizationRecord>,
}

fn material_report(material: &MaterialParams) -> [Option<f64>; 3] {
    let t = material.trainable;
    [
        t.lambda.then_some(material.lambda),
        t.mu.then_some(material.mu),
        if t.sigma_y { material.sigma_y } else { None },
    ]
}

fn run(
    ctx: &Run,
    mut model: FieldModel,
    mut material: MaterialParams,
    moments: Option<(Moments, u64)>,
) -> Result<TrainingOutcome, TrainingError> {
    let config = ctx.config;
    config.validate()?;
    let loss_ctx = LossContext {
        dataset: ctx.data,
        scales: &ctx.scales,
        physics: &ctx.physics,
    };
    let mat_order = material.trainable_params();
    let n_net = model.param_count();
    let mut params = model.flatten();
    params.extend(mat_order.iter().map(|&p| material.get(p) / p.scale(&ctx.scales)));
    let mut grad = vec![0.0; params.len()];
    let (mut moments, mut step) = moments.unwrap_or_else(|| (Moments::zeros(params.len()), 0));

    let mut tape = Tape::new();
    let started = Instant::now();
    let initial = evaluate_loss(&mut tape, &model, &material, &loss_ctx)?;
    let mut history = TrainingHistory::new(term_names(ctx.problem), initial.total);
    if !initial.total.is_finite() {
        return Err(TrainingError::NonFinite {
            what: "loss",
            epoch: 0,
            batch: 0,
            detail: format!("initial loss {}", initial.total),
            history: Box::new(history),
        });
    }
    history.initial_terms = Some(initial.terms.iter().map(|t| t.1).collect());
    let mut stopper = EarlyStopping::new(config.patience, initial.total);
    let mut best = (model.clone(), material, moments.clone(), step);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..ctx.data.len()).collect();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let report = batch_loss_and_gradient(&mut tape, &model, &material, &loss_ctx, rows, &mut grad);
            let fail = |history: &mut TrainingHistory, what: &'static str, detail: String| {
                history.failure = Some(Failure {
                    epoch,
                    batch: b,
                    message: detail.clone(),
                });
                TrainingError::NonFinite {
                    what,
                    epoch,
                    batch: b,
                    detail,
                    history: Box::new(history.clone()),
                }
            };
            let report = match report {
                Ok(r) => r,
                Err(LossError::Autodiff(e)) => return Err(fail(&mut history, "value", e.to_string())),
                Err(e) => return Err(e.into()),
            };
            if !report.total.is_finite() {
                return Err(fail(&mut history, "loss", format!("batch loss {}", report.total)));
            }
            step += 1;
            if let Err(e) = adam_step(&mut params, &grad, &mut moments, step, &config.adam) {
                let detail = match e {
                    AdamError::NonFinite { index, value } => format!(
                        "gradient of `{}` is {value}",
                        param_name(&model, &mat_order, index)
                    ),
                    other => other.to_string(),
                };
                return Err(fail(&mut history, "gradient", detail));
            }
            model.set_params(&params[..n_net])?;
            for (k, &p) in mat_order.iter().enumerate() {
                let theta = params[n_net + k];
                let old = material.get(p) / p.scale(&ctx.scales);
                if theta != old {
                    material.set(p, theta * p.scale(&ctx.scales));
                }
            }
        }
        let full = evaluate_loss(&mut tape, &model, &material, &loss_ctx)?;
        if !full.total.is_finite() {
            let detail = format!("epoch loss {}", full.total);
            history.failure = Some(Failure {
                epoch,
                batch: 0,
                message: detail.clone(),
            });
            return Err(TrainingError::NonFinite {
                what: "loss",
                epoch,
                batch: 0,
                detail,
                history: Box::new(history),
            });
        }
        let [lambda, mu, sigma_y] = material_report(&material);
        history.push(EpochRecord {
            epoch,
            total: full.total,
            terms: (epoch % config.term_every == 0).then(|| full.terms.iter().map(|t| t.1).collect()),
            lambda,
            mu,
            sigma_y,
            seconds: t0.elapsed().as_secs_f64(),
        });
        let (improved, halt) = stopper.update(epoch, full.total);
        if improved {
            best = (model.clone(), material, moments.clone(), step);
        }
        if halt {
            stop = StopReason::Patience;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.best_loss = stopper.best;
    history.stop = Some(stop);
    history.wall_seconds = started.elapsed().as_secs_f64();
    let (best_model, best_material, best_moments, best_step) = best;
    let checkpoint = Checkpoint::capture(
        ctx.problem,
        &best_model,
        &best_material,
        ctx.record.as_ref(),
        Some((&best_moments, best_step)),
        config.seed,
    );
    Ok(TrainingOutcome { history, checkpoint })
}

fn term_names(problem: Problem) -> Vec<String> {
    Term::all(problem).into_iter().map(Term::name).collect()
}

fn record_of(data: &Dataset) -> Option<NormalizationRecord> {
    data.normalization.clone()
}

/// Trains `model` on `dataset` from its current weights.
pub fn train(
    model: FieldModel,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<TrainingOutcome, TrainingError> {
    config.validate()?;
    let (data, scales) = prepare_dataset(dataset, None, config.normalize)?;
    let material = initial_material(data.problem, &data, config, &scales)?;
    train_with(model, material, &data, scales, config)
}

/// Trains on an already prepared dataset with explicit starting material.
pub fn train_with(
    model: FieldModel,
    material: MaterialParams,
    data: &Dataset,
    scales: LossScales,
    config: &TrainingConfig,
) -> Result<TrainingOutcome, TrainingError> {
    check_model(&model, data)?;
    let ctx = Run {
        problem: data.problem,
        data,
        scales,
        physics: Physics::for_problem(data.problem, config.plasticity),
        config,
        record: record_of(data),
    };
    run(&ctx, model, material, None)
}

fn check_model(model: &FieldModel, data: &Dataset) -> Result<(), TrainingError> {
    let want = data.input_names();
    if model.inputs() != want.as_slice() {
        return Err(TrainingError::Config(format!(
            "model inputs {:?} do not match dataset inputs {:?}",
            model.inputs(),
            want
        )));
    }
    for f in data.problem.network_fields() {
        if model.slot(*f).is_none() {
            return Err(LossError::MissingField(*f).into());
        }
    }
    Ok(())
}

/// Builds a fresh model for `dataset` with the configured seed.
pub fn fresh_model(arch: &NetworkArch, dataset: &Dataset, seed: u64) -> Result<FieldModel, TrainingError> {
    Ok(FieldModel::build(
        dataset.problem.network_fields(),
        arch,
        &dataset.input_names(),
        seed,
    )?)
}

/// Loss of a checkpoint's best state on a dataset, in that checkpoint's
/// normalization.
pub fn checkpoint_loss(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<LossReport, TrainingError> {
    let (data, scales) = prepare_dataset(dataset, checkpoint.normalization.as_ref(), false)?;
    let model = checkpoint.model()?;
    let physics = Physics::for_problem(data.problem, config.plasticity);
    let ctx = LossContext {
        dataset: &data,
        scales: &scales,
        physics: &physics,
    };
    Ok(evaluate_loss(&mut Tape::new(), &model, &checkpoint.material(), &ctx)?)
}

/// Continues training from `checkpoint` on a new dataset, reusing the
/// checkpoint's normalization. The history records the initial loss relative
/// to a freshly initialized model (seeded with `config.seed`) on the same data.
pub fn retrain(
    checkpoint: &Checkpoint,
    arch: &NetworkArch,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<TrainingOutcome, TrainingError> {
    config.validate()?;
    let model = checkpoint.model()?;
    let fresh = fresh_model(arch, dataset, config.seed)?;
    let (a, b) = (model.describe_shapes(), fresh.describe_shapes());
    if a != b || checkpoint.arch.activation != arch.activation || checkpoint.arch.mode != arch.mode {
        return Err(TrainingError::ArchitectureMismatch {
            checkpoint: label_arch(&checkpoint.arch, a),
            requested: label_arch(arch, b),
        });
    }
    let (data, scales) = prepare_dataset(dataset, checkpoint.normalization.as_ref(), config.normalize)?;
    let mut material = checkpoint.material();
    if config.mode == TrainMode::Identify {
        material = material.identify();
    }
    let scratch_material = initial_material(data.problem, &data, config, &scales)?;
    let physics = Physics::for_problem(data.problem, config.plasticity);
    let ctx = LossContext {
        dataset: &data,
        scales: &scales,
        physics: &physics,
    };
    let scratch = evaluate_loss(&mut Tape::new(), &fresh, &scratch_material, &ctx)?;

    check_model(&model, &data)?;
    let n = model.param_count() + material.trainable_params().len();
    let moments = Some(checkpoint.moments(n)).filter(|(_, step)| *step > 0);
    let run_ctx = Run {
        problem: data.problem,
        data: &data,
        scales,
        physics,
        config,
        record: record_of(&data),
    };
    let mut out = run(&run_ctx, model, material, moments)?;
    out.history.scratch_initial_loss = Some(scratch.total);
    out.history.initial_loss_ratio = Some(out.history.initial_loss / scratch.total);
    Ok(out)
}

fn label_arch(arch: &NetworkArch, shapes: Vec<String>) -> Vec<String> {
    let mut v = vec![format!(
        "{}x{} {} {:?}",
        arch.layers, arch.neurons, arch.activation, arch.mode
    )];
    v.extend(shapes);
    v
}

/// Trains a model with `(x, y, mu)` inputs on datasets generated with
/// different shear moduli. Material parameters stay fixed.
pub fn train_surrogate(
    datasets: &[Dataset],
    arch: &NetworkArch,
    config: &TrainingConfig,
) -> Result<TrainingOutcome, TrainingError> {
    config.validate()?;
    let parts = datasets
        .iter()
        .map(|d| Ok(denormalize(d).with_recovered_forces()?))
        .collect::<Result<Vec<_>, TrainingError>>()?;
    let combined = Dataset::concat_with_mu(&parts)?;
    let distinct = combined.distinct_mu();
    if distinct.len() < 2 {
        return Err(TrainingError::DegenerateSurrogate(distinct.len()));
    }
    let config = TrainingConfig {
        mode: TrainMode::Solve,
        ..config.clone()
    };
    let model = fresh_model(arch, &combined, config.seed)?;
    train(model, &combined, &config)
}
