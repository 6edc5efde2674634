use std::fs;
use std::path::Path;

use aae_core::dataset::{generate_synthetic, load_manifest, stratified_kfold, SynthConfig};
use aae_core::evaluation::{cross_validate, evaluate, run_fold, train_baseline, CrossValResult};
use aae_core::model::{Checkpoint, Model, ModelConfig};
use aae_core::preprocess::PreprocessConfig;
use aae_core::training::{
    train, OptimizerSpec, PreparedDataset, RunOutput, Split, TrainConfig, TrainError, TrainMode,
};

const SIDE: usize = 32;

fn preprocess() -> PreprocessConfig {
    PreprocessConfig { side: SIDE, ..PreprocessConfig::default() }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        input_side: SIDE,
        latent_length: 4,
        num_classes: 3,
        widths: vec![4, 8],
        seed: 3,
        ..ModelConfig::default()
    }
}

fn train_config(max_epochs: usize) -> TrainConfig {
    TrainConfig { max_epochs, seed: 11, ..TrainConfig::default() }
}

fn dataset(dir: &Path, count: usize) -> PreparedDataset {
    let config = SynthConfig { image_size: 48, seed: 5, ..SynthConfig::default() };
    generate_synthetic(&config, count, dir).unwrap();
    let manifest = load_manifest(&dir.join("manifest.csv")).unwrap();
    PreparedDataset::load(manifest, &preprocess()).unwrap()
}

fn read_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn one_epoch_run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 45);
    let folds = stratified_kfold(&data.manifest, 3, 1).unwrap();
    let split = Split::from_folds(&data, &folds, 0);
    let out = RunOutput { dir: tmp.path().join("run"), config_echo: serde_json::json!({"tag": "one"}) };
    let config = TrainConfig { early_stop_patience: 50, ..train_config(1) };

    let mut model = Model::new(model_config()).unwrap();
    let state = train(&mut model, &data, &split, &config, Some(&out)).unwrap();
    assert_eq!(state.epoch, 1);
    assert_eq!(state.validation.len(), 1);

    let batches = split.train.len().div_ceil(config.batch_size);
    let losses = read_lines(&out.dir.join("losses.csv"));
    assert_eq!(losses[0], "epoch,batch,L1,L2,L3,L4");
    assert_eq!(losses.len(), 1 + batches);
    let val = read_lines(&out.dir.join("val_metrics.csv"));
    assert_eq!(val.len(), 2);
    for name in ["ckpt_best", "ckpt_last", "run.json"] {
        assert!(out.dir.join(name).exists(), "{name} missing");
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["tag"], "one");
    assert_eq!(run["seeds"]["train"], 11);

    // The saved best checkpoint reproduces the logged validation accuracy.
    let ckpt = Checkpoint::load(&out.dir.join("ckpt_best")).unwrap();
    let restored = ckpt.to_model().unwrap();
    let report = evaluate(&restored, &data, &split.validation, 8).unwrap();
    assert_eq!(report.accuracy, state.best_accuracy());
    assert_eq!(ckpt.metadata["val_accuracy"].as_f64().unwrap(), state.best_accuracy());
    assert!(ckpt.rng_states.contains_key("shuffle") && ckpt.rng_states.contains_key("prior"));
}

#[test]
fn same_seed_same_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), 30);
    let folds = stratified_kfold(&data.manifest, 3, 2).unwrap();
    let split = Split::from_folds(&data, &folds, 1);
    let run = || {
        let mut model = Model::new(model_config()).unwrap();
        let state = train(&mut model, &data, &split, &train_config(2), None).unwrap();
        (state.batch_losses, model)
    };
    let (a, model_a) = run();
    let (b, model_b) = run();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(model_a.encoder.params(), model_b.encoder.params());
}

#[test]
fn cross_validation_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 30);
    let folds = stratified_kfold(&data.manifest, 3, 3).unwrap();
    let out = tmp.path().join("cv");
    let result = cross_validate(&data, &folds, &model_config(), &train_config(1), Some(&out), &serde_json::Value::Null).unwrap();
    assert_eq!(result.folds.len(), 3);
    let mean = result.folds.iter().map(|r| r.accuracy).sum::<f64>() / 3.0;
    assert!((result.mean.accuracy - mean).abs() < 1e-9);
    for f in 0..3 {
        assert_eq!(result.folds[f].fold_id, Some(f));
        assert!(out.join(format!("fold{f}/losses.csv")).exists());
        assert!(out.join(format!("confusion_fold{f}.csv")).exists());
    }
    assert!(out.join("cv_summary.json").exists());
}

#[test]
fn untrained_baseline_is_at_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), 150);
    let folds = stratified_kfold(&data.manifest, 5, 4).unwrap();
    let result: CrossValResult =
        train_baseline(&data, &folds, &model_config(), &train_config(0), None, &serde_json::Value::Null).unwrap();
    let correct: usize = result.folds.iter().map(|r| r.confusion.trace()).sum();
    let total: usize = result.folds.iter().map(|r| r.confusion.total()).sum();
    assert_eq!(total, 150);
    let p = 1.0 / 3.0;
    let acc = correct as f64 / total as f64;
    let tolerance = 3.0 * (p * (1.0 - p) / total as f64).sqrt();
    assert!((acc - p).abs() <= tolerance, "accuracy {acc} outside {p} ± {tolerance}");
}

#[test]
fn baseline_and_proposed_see_the_same_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), 30);
    let folds = stratified_kfold(&data.manifest, 3, 5).unwrap();
    let proposed = run_fold(&data, &folds, 2, &model_config(), &train_config(2), None).unwrap();
    let config = TrainConfig { mode: TrainMode::ClassifierOnly, ..train_config(2) };
    let baseline = run_fold(&data, &folds, 2, &model_config(), &config, None).unwrap();
    assert_eq!(proposed.state.epoch_orders, baseline.state.epoch_orders);
    assert!(baseline.state.batch_losses.iter().all(|b| b.losses.l2 == 0.0 && b.losses.l4 > 0.0));
}

#[test]
fn empty_splits_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), 9);
    let mut model = Model::new(model_config()).unwrap();
    let empty_train = Split { fold: None, train: vec![], validation: vec![0, 1] };
    assert!(matches!(
        train(&mut model, &data, &empty_train, &train_config(1), None),
        Err(TrainError::EmptyTrainingSplit)
    ));
    let empty_val = Split { fold: None, train: vec![0, 1], validation: vec![] };
    assert!(matches!(
        train(&mut model, &data, &empty_val, &train_config(1), None),
        Err(TrainError::EmptyValidationSplit)
    ));
}

#[test]
fn divergence_is_reported_and_dumped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 12);
    let split = Split { fold: None, train: (0..9).collect(), validation: (9..12).collect() };
    let config = TrainConfig {
        optimizer: OptimizerSpec { learning_rate: 1e200, ..OptimizerSpec::default() },
        ..train_config(3)
    };
    let out = RunOutput { dir: tmp.path().join("run"), config_echo: serde_json::Value::Null };
    let mut model = Model::new(model_config()).unwrap();
    let err = train(&mut model, &data, &split, &config, Some(&out)).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { .. }), "{err}");
    assert!(out.dir.join("divergence.json").exists());
    assert!(out.dir.join("ckpt_diverged").exists());
}
