use std::path::{Path, PathBuf};

use aae_core::evaluation::{evaluate, write_metrics};
use aae_core::model::Checkpoint;
use aae_core::training::PreparedDataset;

use super::{ensure_dir, folds_for, resolve_manifest, write_file};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Train,
    All,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Validation => "validation",
            EvalSplit::Train => "train",
            EvalSplit::All => "all",
        }
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: Option<PathBuf>,
    pub split: EvalSplit,
}

/// Frozen-model evaluation. Without `--config` the run config comes from the
/// checkpoint's echo; the held-out fold comes from its metadata.
pub fn run(config: Option<RunConfig>, args: EvalArgs, out: Option<&Path>) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut config = match config {
        Some(c) => c,
        None if ckpt.config_echo.is_null() => {
            return Err(CliError::Config("checkpoint carries no config; pass --config".into()));
        }
        None => serde_json::from_value(ckpt.config_echo.clone())
            .map_err(|e| CliError::Config(format!("checkpoint config echo: {e}")))?,
    };
    let model = ckpt.to_model()?;
    let mc = model.config();
    if mc.input_side != config.preprocess.side {
        return Err(CliError::Config(format!(
            "checkpoint expects {}px inputs but preprocess.side is {}",
            mc.input_side, config.preprocess.side
        )));
    }
    let manifest = resolve_manifest(&mut config, args.manifest)?;
    if manifest.num_classes != mc.num_classes {
        return Err(CliError::Config(format!(
            "checkpoint has {} classes but the manifest has {}",
            mc.num_classes, manifest.num_classes
        )));
    }
    let folds = folds_for(&manifest, &config)?;
    let fold = ckpt.metadata.get("fold").and_then(|f| f.as_u64()).map_or(config.eval.fold, |f| f as usize);
    let data = PreparedDataset::load(manifest, &config.preprocess)?;
    let indices = match args.split {
        EvalSplit::Validation => folds.held_out(&data.manifest, fold),
        EvalSplit::Train => folds.training(&data.manifest, fold),
        EvalSplit::All => (0..data.len()).collect(),
    };
    let mut report = evaluate(&model, &data, &indices, config.train.batch_size)?;
    report.fold_id = Some(fold);

    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => args.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    ensure_dir(&dir)?;
    let name = args.split.name();
    write_metrics(&dir.join(format!("metrics_{name}.json")), &report, name)?;
    write_file(&dir.join(format!("confusion_{name}.csv")), &report.confusion.to_csv())?;
    println!(
        "{name}: accuracy {:.6} macro_precision {:.6} macro_recall {:.6} ({} samples)",
        report.accuracy,
        report.macro_precision,
        report.macro_recall,
        report.confusion.total()
    );
    Ok(())
}
