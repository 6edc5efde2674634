//! Classification metrics, cross-validation, the classifier-only baseline and the
//! discriminator equilibrium summary.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::FoldSpec;
use crate::model::{FeatureMap, Matrix, Model, ModelConfig, ModelError};
use crate::training::{train, PreparedDataset, RunOutput, Split, TrainConfig, TrainError, TrainMode, TrainState};

/// Discriminator loss when both branches output `[0.5, 0.5]`.
pub const EQUILIBRIUM_LOSS: f64 = 2.0 * std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{predictions} predictions for {truths} labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("loss history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_csv(&self) -> String {
        let c = self.num_classes();
        let mut out = String::from("true\\pred");
        for j in 0..c {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Recall of each class.
    pub per_class_accuracy: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub fold_id: Option<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict_from_probs(c: &Matrix) -> Vec<usize> {
    c.iter_rows().map(argmax).collect()
}

/// Class predictions from the categorical head.
pub fn predict(model: &Model, images: &FeatureMap) -> Result<Vec<usize>, EvalError> {
    Ok(predict_from_probs(&model.encode(images)?.c))
}

pub fn compute_metrics(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<MetricsReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for label in [p, t] {
            if label >= num_classes {
                return Err(EvalError::LabelOutOfRange { label, num_classes });
            }
        }
        counts[t][p] += 1;
    }
    let confusion = ConfusionMatrix { counts };
    let mut recalls = Vec::with_capacity(num_classes);
    let mut precisions = Vec::new();
    for k in 0..num_classes {
        let tp = confusion.counts[k][k] as f64;
        let actual: usize = confusion.counts[k].iter().sum();
        let predicted: usize = confusion.counts.iter().map(|r| r[k]).sum();
        recalls.push(if actual == 0 { 0.0 } else { tp / actual as f64 });
        match (predicted, actual) {
            (0, 0) => {}
            (0, _) => precisions.push(0.0),
            _ => precisions.push(tp / predicted as f64),
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(MetricsReport {
        accuracy: confusion.trace() as f64 / confusion.total() as f64,
        macro_precision: mean(&precisions),
        macro_recall: mean(&recalls),
        per_class_accuracy: recalls,
        confusion,
        fold_id: None,
    })
}

/// Frozen-model metrics on the given records, without augmentation.
pub fn evaluate(model: &Model, data: &PreparedDataset, indices: &[usize], batch_size: usize) -> Result<MetricsReport, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let images = data.batch(chunk, None).map_err(|e| EvalError::Train(Box::new(e)))?;
        predictions.extend(predict(model, &images)?);
    }
    compute_metrics(&predictions, &data.labels(indices), data.num_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricSummary,
    /// Sample standard deviation across folds (zero for a single fold).
    pub std: MetricSummary,
}

impl CrossValResult {
    pub fn from_reports(folds: Vec<MetricsReport>) -> Result<Self, EvalError> {
        if folds.is_empty() {
            return Err(EvalError::Empty);
        }
        let stats = |f: fn(&MetricsReport) -> f64| {
            let n = folds.len() as f64;
            let mean = folds.iter().map(f).sum::<f64>() / n;
            let var = if folds.len() < 2 {
                0.0
            } else {
                folds.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
            };
            (mean, var.sqrt())
        };
        let (acc, acc_sd) = stats(|r| r.accuracy);
        let (prec, prec_sd) = stats(|r| r.macro_precision);
        let (rec, rec_sd) = stats(|r| r.macro_recall);
        Ok(Self {
            folds,
            mean: MetricSummary { accuracy: acc, macro_precision: prec, macro_recall: rec },
            std: MetricSummary { accuracy: acc_sd, macro_precision: prec_sd, macro_recall: rec_sd },
        })
    }
}

/// Per-fold model seed so folds start from different but reproducible weights.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    rng.next_u64()
}

/// One trained fold.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub model: Model,
    pub state: TrainState,
    pub report: MetricsReport,
}

/// Trains on every fold but `fold` and evaluates the best checkpoint on `fold`.
pub fn run_fold(
    data: &PreparedDataset,
    folds: &FoldSpec,
    fold: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    output: Option<&RunOutput>,
) -> Result<FoldRun, EvalError> {
    let annotate = |e: TrainError| EvalError::Fold { fold, source: Box::new(e) };
    let config = ModelConfig {
        seed: fold_seed(model_config.seed, fold),
        ..model_config.clone()
    };
    let mut model = Model::new(config).map_err(|e| annotate(e.into()))?;
    let split = Split::from_folds(data, folds, fold);
    let state = train(&mut model, data, &split, train_config, output).map_err(annotate)?;
    let mut report = evaluate(&model, data, &split.validation, train_config.batch_size)?;
    report.fold_id = Some(fold);
    Ok(FoldRun { model, state, report })
}

/// k-fold cross-validation. With `out_dir`, each fold writes to `fold{f}/` and
/// the summary files land in `out_dir`.
pub fn cross_validate(
    data: &PreparedDataset,
    folds: &FoldSpec,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    out_dir: Option<&Path>,
    config_echo: &serde_json::Value,
) -> Result<CrossValResult, EvalError> {
    let mut reports = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let output = out_dir.map(|d| RunOutput {
            dir: d.join(format!("fold{fold}")),
            config_echo: config_echo.clone(),
        });
        let run = run_fold(data, folds, fold, model_config, train_config, output.as_ref())?;
        if let Some(d) = out_dir {
            write_text(&d.join(format!("confusion_fold{fold}.csv")), &run.report.confusion.to_csv())?;
        }
        reports.push(run.report);
    }
    let result = CrossValResult::from_reports(reports)?;
    if let Some(d) = out_dir {
        write_cv_summary(&d.join("cv_summary.json"), &result)?;
    }
    Ok(result)
}

/// Same folds, data, optimizer and stopping rule, but only the classification
/// phase runs, so the decoder and discriminator never influence the encoder.
pub fn train_baseline(
    data: &PreparedDataset,
    folds: &FoldSpec,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    out_dir: Option<&Path>,
    config_echo: &serde_json::Value,
) -> Result<CrossValResult, EvalError> {
    let config = TrainConfig {
        mode: TrainMode::ClassifierOnly,
        ..train_config.clone()
    };
    cross_validate(data, folds, model_config, &config, out_dir, config_echo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub epochs: usize,
    /// Number of final epochs averaged.
    pub window: usize,
    pub mean: f64,
    pub std: f64,
    pub reference: f64,
    pub distance: f64,
}

/// Summarizes the final quarter (rounded up, at least one epoch) of a per-epoch
/// discriminator loss history.
pub fn equilibrium_report(history: &[f64]) -> Result<EquilibriumReport, EvalError> {
    if history.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let window = history.len().div_ceil(4).max(1);
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let std = (tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64).sqrt();
    Ok(EquilibriumReport {
        epochs: history.len(),
        window,
        mean,
        std,
        reference: EQUILIBRIUM_LOSS,
        distance: (mean - EQUILIBRIUM_LOSS).abs(),
    })
}

/// Rounds to six decimal places for serialized reports.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn metrics_json(m: &MetricsReport) -> serde_json::Value {
    json!({
        "fold": m.fold_id,
        "accuracy": round6(m.accuracy),
        "macro_precision": round6(m.macro_precision),
        "macro_recall": round6(m.macro_recall),
        "per_class_accuracy": m.per_class_accuracy.iter().map(|&v| round6(v)).collect::<Vec<_>>(),
        "confusion": m.confusion.counts,
    })
}

fn summary_json(s: &MetricSummary) -> serde_json::Value {
    json!({
        "accuracy": round6(s.accuracy),
        "macro_precision": round6(s.macro_precision),
        "macro_recall": round6(s.macro_recall),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_metrics(path: &Path, report: &MetricsReport, split: &str) -> Result<(), EvalError> {
    let mut v = metrics_json(report);
    v["split"] = json!(split);
    write_text(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))
}

pub fn write_cv_summary(path: &Path, result: &CrossValResult) -> Result<(), EvalError> {
    let v = json!({
        "folds": result.folds.iter().map(metrics_json).collect::<Vec<_>>(),
        "mean": summary_json(&result.mean),
        "std": summary_json(&result.std),
    });
    write_text(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))
}

pub fn write_equilibrium(path: &Path, report: &EquilibriumReport) -> Result<(), EvalError> {
    let v = json!({
        "epochs": report.epochs,
        "window": report.window,
        "mean": round6(report.mean),
        "std": round6(report.std),
        "reference": round6(report.reference),
        "distance": round6(report.distance),
    });
    write_text(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))
}
