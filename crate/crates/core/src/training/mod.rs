//! Per-batch phase updates, optimizers, early stopping and the epoch loop.

mod adam;
mod data;
mod losses;
mod phases;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use adam::{Adam, OptimizerSpec};
pub use data::PreparedDataset;
pub use losses::{
    classification_loss, classification_loss_grad, discriminator_loss, discriminator_loss_grad,
    generator_loss, generator_loss_grad, one_hot, reconstruction_loss, reconstruction_loss_grad,
    ReconstructionMode, PROB_FLOOR,
};
pub use phases::{
    phase_gradients, train_batch, train_batch_classifier, train_batch_observed, GradTargets,
    GroupGrads, LossContext, Optimizers, Phase, PhaseInputs, PhaseLosses, PhaseObserver,
};

use crate::dataset::{compute_class_weights, ClassWeights, FoldSpec, WeightScheme};
use crate::evaluation::{evaluate, MetricsReport};
use crate::model::{Checkpoint, Model, ModelError, RngState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training split is empty")]
    EmptyTrainingSplit,
    #[error("validation split is empty")]
    EmptyValidationSplit,
    #[error("{phase} loss is not finite ({value})")]
    NonFinite { phase: Phase, value: f64 },
    #[error("training diverged at epoch {epoch}, batch {batch}: {phase} loss is {value}")]
    Divergence {
        epoch: usize,
        batch: usize,
        phase: Phase,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Reconstruction, regularization and classification phases.
    #[default]
    Adversarial,
    /// Classification phase only; decoder and discriminator are never touched.
    ClassifierOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub class_weight_scheme: WeightScheme,
    pub seed: u64,
    pub reconstruction_mode: ReconstructionMode,
    pub optimizer: OptimizerSpec,
    /// Random rotation and flip of training images each epoch.
    pub augment: bool,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 50,
            early_stop_patience: 10,
            class_weight_scheme: WeightScheme::None,
            seed: 0,
            reconstruction_mode: ReconstructionMode::PerPixel,
            optimizer: OptimizerSpec::default(),
            augment: true,
            mode: TrainMode::Adversarial,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.early_stop_patience < 1 {
            return Err(TrainError::InvalidConfig("early_stop_patience must be at least 1".into()));
        }
        self.optimizer.validate().map_err(TrainError::InvalidConfig)
    }
}

/// Stops once validation accuracy has not strictly improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    /// 1-based epoch of the best value.
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the accuracy for a finished epoch; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        if self.best.is_none_or(|b| accuracy > b) {
            self.best = Some(accuracy);
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub epoch: usize,
    pub batch: usize,
    pub losses: PhaseLosses,
}

/// Result of [`train`]. The model passed in holds the best-epoch weights afterwards.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub mode: TrainMode,
    pub optimizers: Optimizers,
    pub stopping: EarlyStopping,
    pub class_weights: ClassWeights,
    /// Mean losses per epoch. Phases not run in the chosen mode stay zero.
    pub loss_history: Vec<PhaseLosses>,
    pub batch_losses: Vec<BatchLoss>,
    pub validation: Vec<MetricsReport>,
    /// Shuffled training record order of each epoch; batches are consecutive chunks.
    pub epoch_orders: Vec<Vec<usize>>,
}

impl TrainState {
    pub fn best_accuracy(&self) -> f64 {
        self.stopping.best.unwrap_or(0.0)
    }

    pub fn best_epoch(&self) -> usize {
        self.stopping.best_epoch
    }

    /// Mean discriminator loss per epoch.
    pub fn discriminator_history(&self) -> Vec<f64> {
        self.loss_history.iter().map(|l| l.l2).collect()
    }
}

/// Where a run writes its artifacts and what it echoes into `run.json`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub config_echo: serde_json::Value,
}

/// Training and validation record indices for one held-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub fold: Option<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    pub fn from_folds(data: &PreparedDataset, folds: &FoldSpec, fold: usize) -> Self {
        Self {
            fold: Some(fold),
            train: folds.training(&data.manifest, fold),
            validation: folds.held_out(&data.manifest, fold),
        }
    }
}

struct Writers {
    dir: PathBuf,
    losses: fs::File,
    val: fs::File,
}

impl Writers {
    fn create(dir: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let open = |name: &str, header: &str| -> Result<fs::File, TrainError> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            writeln!(f, "{header}").map_err(|e| io_err(&path, e))?;
            Ok(f)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            losses: open("losses.csv", "epoch,batch,L1,L2,L3,L4")?,
            val: open("val_metrics.csv", "epoch,accuracy,macro_precision,macro_recall")?,
        })
    }

    fn loss_row(&mut self, row: &BatchLoss, mode: TrainMode) -> Result<(), TrainError> {
        let l = row.losses;
        let line = match mode {
            TrainMode::Adversarial => format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                row.epoch, row.batch, l.l1, l.l2, l.l3, l.l4
            ),
            TrainMode::ClassifierOnly => format!("{},{},,,,{:.6}", row.epoch, row.batch, l.l4),
        };
        writeln!(self.losses, "{line}").map_err(|e| io_err(&self.dir.join("losses.csv"), e))
    }

    fn val_row(&mut self, epoch: usize, m: &MetricsReport) -> Result<(), TrainError> {
        writeln!(
            self.val,
            "{epoch},{:.6},{:.6},{:.6}",
            m.accuracy, m.macro_precision, m.macro_recall
        )
        .map_err(|e| io_err(&self.dir.join("val_metrics.csv"), e))
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).expect("json value");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHUFFLE_STREAM: u64 = 1;
const PRIOR_STREAM: u64 = 2;

/// Epoch loop with validation after every epoch and early stopping on accuracy.
///
/// On return `model` holds the weights of the best epoch. With `output` set,
/// writes `losses.csv`, `val_metrics.csv`, `ckpt_best`, `ckpt_last` and `run.json`.
pub fn train(
    model: &mut Model,
    data: &PreparedDataset,
    split: &Split,
    config: &TrainConfig,
    output: Option<&RunOutput>,
) -> Result<TrainState, TrainError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainingSplit);
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptyValidationSplit);
    }
    if data.num_classes() != model.config().num_classes {
        return Err(TrainError::Shape(format!(
            "dataset has {} classes but the model has {}",
            data.num_classes(),
            model.config().num_classes
        )));
    }
    let class_weights = compute_class_weights(&data.manifest, config.class_weight_scheme)
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let ctx = LossContext {
        reconstruction: config.reconstruction_mode,
        weights: class_weights.clone(),
    };

    let mut writers = match output {
        Some(out) => {
            let mut w = Writers::create(&out.dir)?;
            write_json(
                &w.dir.join("run.json"),
                &json!({
                    "config": out.config_echo,
                    "train": config,
                    "model": model.config(),
                    "preprocess": data.preprocess,
                    "fold": split.fold,
                    "train_records": split.train.len(),
                    "validation_records": split.validation.len(),
                    "class_weights": class_weights,
                    "seeds": {
                        "train": config.seed,
                        "model": model.config().seed,
                        "shuffle_stream": SHUFFLE_STREAM,
                        "prior_stream": PRIOR_STREAM,
                    },
                }),
            )?;
            w.losses.flush().map_err(|e| io_err(&out.dir, e))?;
            Some(w)
        }
        None => None,
    };

    let mut optimizers = Optimizers::new(model, config.optimizer);
    let mut stopping = EarlyStopping::new(config.early_stop_patience);
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut prior_rng = stream_rng(config.seed, PRIOR_STREAM);
    let mut order = split.train.clone();
    let mut best_model = model.clone();
    let mut state_epoch = 0;
    let mut loss_history = Vec::new();
    let mut batch_losses = Vec::new();
    let mut validation = Vec::new();
    let mut epoch_orders = Vec::new();

    let checkpoint = |model: &Model, epoch: usize, shuffle: &ChaCha8Rng, prior: &ChaCha8Rng, metadata| {
        let mut ckpt = Checkpoint::from_model(model, epoch);
        ckpt.config_echo = output.map_or(serde_json::Value::Null, |o| o.config_echo.clone());
        ckpt.rng_states.insert("shuffle".into(), RngState::capture(shuffle));
        ckpt.rng_states.insert("prior".into(), RngState::capture(prior));
        ckpt.metadata = metadata;
        ckpt
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        epoch_orders.push(order.clone());
        let mut epoch_losses = Vec::new();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let augment_key = config.augment.then_some((config.seed, epoch));
            let images = data.batch(chunk, augment_key)?;
            let labels = data.labels(chunk);
            let result = match config.mode {
                TrainMode::Adversarial => {
                    train_batch(model, &images, &labels, &mut optimizers, &ctx, &mut prior_rng)
                }
                TrainMode::ClassifierOnly => {
                    train_batch_classifier(model, &images, &labels, &mut optimizers, &ctx)
                        .map(|l4| PhaseLosses { l4, ..PhaseLosses::default() })
                }
            };
            let losses = match result {
                Ok(l) => l,
                Err(TrainError::NonFinite { phase, value }) => {
                    if let Some(w) = &writers {
                        let dump = json!({
                            "epoch": epoch,
                            "batch": b + 1,
                            "phase": phase,
                            "value": value.to_string(),
                            "batch_ids": chunk.iter().map(|&i| &data.manifest.records[i].id).collect::<Vec<_>>(),
                            "previous_losses": epoch_losses.last(),
                        });
                        write_json(&w.dir.join("divergence.json"), &dump)?;
                        checkpoint(model, epoch, &shuffle_rng, &prior_rng, dump).save(&w.dir.join("ckpt_diverged"))?;
                    }
                    return Err(TrainError::Divergence { epoch, batch: b + 1, phase, value });
                }
                Err(e) => return Err(e),
            };
            let row = BatchLoss { epoch, batch: b + 1, losses };
            if let Some(w) = &mut writers {
                w.loss_row(&row, config.mode)?;
            }
            batch_losses.push(row);
            epoch_losses.push(losses);
        }
        loss_history.push(PhaseLosses::mean(&epoch_losses));

        let mut metrics = evaluate(model, data, &split.validation, config.batch_size)
            .map_err(|e| TrainError::Evaluation(e.to_string()))?;
        metrics.fold_id = split.fold;
        let improved = stopping.observe(epoch, metrics.accuracy);
        log::info!(
            "epoch {epoch}: L1 {:.4} L2 {:.4} L3 {:.4} L4 {:.4} val acc {:.4}",
            loss_history[epoch - 1].l1,
            loss_history[epoch - 1].l2,
            loss_history[epoch - 1].l3,
            loss_history[epoch - 1].l4,
            metrics.accuracy
        );
        if let Some(w) = &mut writers {
            w.val_row(epoch, &metrics)?;
            let meta = json!({ "val_accuracy": metrics.accuracy, "fold": split.fold, "mode": config.mode });
            if improved {
                checkpoint(model, epoch, &shuffle_rng, &prior_rng, meta.clone()).save(&w.dir.join("ckpt_best"))?;
            }
            checkpoint(model, epoch, &shuffle_rng, &prior_rng, meta).save(&w.dir.join("ckpt_last"))?;
        }
        if improved {
            best_model = model.clone();
        }
        validation.push(metrics);
        state_epoch = epoch;
        if stopping.should_stop() {
            break;
        }
    }

    *model = best_model;
    Ok(TrainState {
        epoch: state_epoch,
        mode: config.mode,
        optimizers,
        stopping,
        class_weights,
        loss_history,
        batch_losses,
        validation,
        epoch_orders,
    })
}
