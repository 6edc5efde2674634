//! Append-only JSON-lines registry of CLI runs in the workspace root.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const REGISTRY_FILE: &str = "runs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    pub out: Option<PathBuf>,
    pub artifacts: Vec<String>,
}

/// Workspace root: `AAE_WORKSPACE` if set, else the current directory.
pub fn workspace_root() -> PathBuf {
    std::env::var_os("AAE_WORKSPACE").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

pub fn read_entries(root: &Path) -> Vec<RegistryEntry> {
    let Ok(text) = fs::read_to_string(root.join(REGISTRY_FILE)) else {
        return Vec::new();
    };
    text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}

/// Timestamp plus a short hash of the config echo, made unique against the registry.
pub fn new_run_id(root: &Path, config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    let hash: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    let base = format!("{}-{hash}", chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ"));
    let taken: HashSet<String> = read_entries(root).into_iter().map(|e| e.id).collect();
    let mut id = base.clone();
    let mut n = 1;
    while taken.contains(&id) {
        id = format!("{base}-{n}");
        n += 1;
    }
    id
}

/// Files under `dir`, relative to it, sorted.
pub fn list_artifacts(dir: &Path) -> Vec<String> {
    let mut files: Vec<String> = WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| e.path().strip_prefix(dir).ok().map(|p| p.display().to_string()))
        .collect();
    files.sort();
    files
}

pub fn append(root: &Path, entry: &RegistryEntry) -> std::io::Result<()> {
    fs::create_dir_all(root)?;
    let mut file = OpenOptions::new().create(true).append(true).open(root.join(REGISTRY_FILE))?;
    writeln!(file, "{}", serde_json::to_string(entry).expect("entry serializes"))
}
