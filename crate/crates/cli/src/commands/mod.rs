pub mod eval;
pub mod gen_data;
pub mod preprocess;
pub mod report;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use aae_core::dataset::{load_manifest, stratified_kfold, DatasetManifest, FoldSpec};

use crate::config::RunConfig;
use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    write_file(path, &(serde_json::to_string_pretty(value).expect("json") + "\n"))
}

/// Manifest from `--manifest` or `data.manifest`, recorded back into the config
/// as an absolute path so the echo is self-contained.
pub fn resolve_manifest(config: &mut RunConfig, flag: Option<PathBuf>) -> Result<DatasetManifest, CliError> {
    let path = flag
        .or_else(|| config.data.manifest.clone())
        .ok_or_else(|| CliError::Config("no manifest: pass --manifest or set data.manifest".into()))?;
    let path = fs::canonicalize(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest = load_manifest(&path)?;
    config.data.manifest = Some(path);
    Ok(manifest)
}

/// Fold column of the manifest when present, else a seeded stratified split.
pub fn folds_for(manifest: &DatasetManifest, config: &RunConfig) -> Result<FoldSpec, CliError> {
    match FoldSpec::from_manifest(manifest) {
        Some(folds) => Ok(folds),
        None => Ok(stratified_kfold(manifest, config.eval.folds, config.seed)?),
    }
}
