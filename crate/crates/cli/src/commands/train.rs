use std::path::{Path, PathBuf};

use aae_core::dataset::WeightScheme;
use aae_core::evaluation::{
    cross_validate, equilibrium_report, run_fold, write_equilibrium, write_metrics, EQUILIBRIUM_LOSS,
};
use aae_core::training::{PreparedDataset, RunOutput, TrainMode};
use serde_json::json;

use super::{folds_for, resolve_manifest, write_file, write_json};
use super::report::discriminator_history;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Default)]
pub struct TrainArgs {
    pub manifest: Option<PathBuf>,
    pub cv: bool,
    pub baseline: bool,
    pub fold: Option<usize>,
    pub folds: Option<usize>,
    pub weight_scheme: Option<WeightScheme>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub no_augment: bool,
}

pub fn apply(config: &mut RunConfig, args: &TrainArgs) {
    if args.baseline {
        config.train.mode = TrainMode::ClassifierOnly;
    }
    if let Some(f) = args.fold {
        config.eval.fold = f;
    }
    if let Some(k) = args.folds {
        config.eval.folds = k;
    }
    if let Some(s) = args.weight_scheme {
        config.train.class_weight_scheme = s;
    }
    if let Some(lr) = args.lr {
        config.train.optimizer.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(e) = args.max_epochs {
        config.train.max_epochs = e;
    }
    if let Some(p) = args.patience {
        config.train.early_stop_patience = p;
    }
    if args.no_augment {
        config.train.augment = false;
    }
}

pub fn run(mut config: RunConfig, args: TrainArgs, out: &Path) -> Result<(), CliError> {
    apply(&mut config, &args);
    config.validate()?;
    let manifest = resolve_manifest(&mut config, args.manifest)?;
    if manifest.num_classes != config.model.num_classes {
        return Err(CliError::Config(format!(
            "manifest has {} classes but model.num_classes is {}",
            manifest.num_classes, config.model.num_classes
        )));
    }
    let folds = folds_for(&manifest, &config)?;
    if !args.cv && config.eval.fold >= folds.k {
        return Err(CliError::Config(format!("fold {} is out of range for {} folds", config.eval.fold, folds.k)));
    }
    log::info!("preparing {} images", manifest.len());
    let data = PreparedDataset::load(manifest, &config.preprocess)?;
    let echo = config.echo();
    let adversarial = config.train.mode == TrainMode::Adversarial;

    if args.cv {
        let result = cross_validate(&data, &folds, &config.model, &config.train, Some(out), &echo)?;
        write_json(&out.join("run.json"), &json!({ "config": echo, "cv": true, "folds": folds.k }))?;
        if adversarial {
            for f in 0..folds.k {
                let dir = out.join(format!("fold{f}"));
                let history = discriminator_history(&dir.join("losses.csv"))?;
                if let Ok(report) = equilibrium_report(&history) {
                    write_equilibrium(&dir.join("equilibrium.json"), &report)?;
                }
            }
        }
        log::info!(
            "{}-fold accuracy {:.4} ± {:.4}",
            folds.k,
            result.mean.accuracy,
            result.std.accuracy
        );
        return Ok(());
    }

    let fold = config.eval.fold;
    let output = RunOutput { dir: out.to_path_buf(), config_echo: echo };
    let run = run_fold(&data, &folds, fold, &config.model, &config.train, Some(&output))?;
    write_metrics(&out.join("metrics_validation.json"), &run.report, "validation")?;
    write_file(&out.join("confusion_validation.csv"), &run.report.confusion.to_csv())?;
    if adversarial {
        if let Ok(report) = equilibrium_report(&run.state.discriminator_history()) {
            write_equilibrium(&out.join("equilibrium.json"), &report)?;
            log::info!(
                "discriminator loss over the last {} epochs: {:.4} (reference {:.4})",
                report.window,
                report.mean,
                EQUILIBRIUM_LOSS
            );
        }
    }
    log::info!(
        "fold {fold}: best epoch {} of {}, validation accuracy {:.4}",
        run.state.best_epoch(),
        run.state.epoch,
        run.report.accuracy
    );
    Ok(())
}
