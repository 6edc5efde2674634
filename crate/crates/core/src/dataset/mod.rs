//! Labeled-image manifests, class statistics, class weights and stratified folds.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{apportion, generate_synthetic, render_synthetic, SynthConfig, SynthSample};

use crate::image::ImageIoError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("manifest line {line}: label {label} is not below the declared class count {num_classes}")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("first class has no records; class ratio is undefined")]
    EmptyFirstClass,
    #[error("class {class} has no records; {scheme:?} weights are undefined")]
    EmptyClass { class: usize, scheme: WeightScheme },
    #[error("class {class} has {count} records, fewer than k = {k}")]
    TooFewForFolds { class: usize, count: usize, k: usize },
    #[error("invalid fold count k = {0}; need k >= 2")]
    InvalidFoldCount(usize),
    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
    #[error(transparent)]
    Image(#[from] ImageIoError),
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub path: String,
    pub label: usize,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    /// Directory relative record paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest, recomputing class counts and checking labels and ids.
    pub fn new(
        records: Vec<ImageRecord>,
        num_classes: usize,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self, DatasetError> {
        if num_classes < 2 {
            return Err(DatasetError::Malformed {
                line: 0,
                message: format!("num_classes must be at least 2, got {num_classes}"),
            });
        }
        let mut seen = HashSet::new();
        let mut class_counts = vec![0; num_classes];
        for (i, r) in records.iter().enumerate() {
            if r.label >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    line: i + 2,
                    label: r.label,
                    num_classes,
                });
            }
            if r.path.is_empty() {
                return Err(DatasetError::Malformed {
                    line: i + 2,
                    message: "empty path".into(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
            class_counts[r.label] += 1;
        }
        Ok(Self {
            records,
            num_classes,
            class_counts,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Copies fold assignments into the records.
    pub fn with_folds(mut self, folds: &FoldSpec) -> Self {
        for r in &mut self.records {
            r.fold = folds.assignments.get(&r.id).copied();
        }
        self
    }

    /// Serializes to the manifest CSV format, declaring the class count in a comment line.
    pub fn to_csv(&self) -> String {
        let with_folds = self.records.iter().any(|r| r.fold.is_some());
        let mut out = format!("# num_classes={}\n", self.num_classes);
        out.push_str(if with_folds { "id,path,label,fold\n" } else { "id,path,label\n" });
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.id, r.path, r.label);
            if with_folds {
                match r.fold {
                    Some(f) => {
                        let _ = write!(out, ",{f}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_csv()).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Reads a manifest file.
///
/// Format: UTF-8 CSV with header `id,path,label[,fold]`. An optional leading
/// `# num_classes=N` line declares the class count; otherwise it is inferred as
/// `max(label) + 1` (at least 2). Class counts are always recomputed.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base_dir)
}

pub fn parse_manifest(text: &str, base_dir: PathBuf) -> Result<DatasetManifest, DatasetError> {
    let mut declared = None;
    let mut header_seen = false;
    let mut has_fold = false;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("num_classes=") {
                let n = v.trim().parse::<usize>().map_err(|_| DatasetError::Malformed {
                    line: line_no,
                    message: format!("bad num_classes declaration {v:?}"),
                })?;
                declared = Some(n);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            match fields.as_slice() {
                ["id", "path", "label"] => {}
                ["id", "path", "label", "fold"] => has_fold = true,
                _ => {
                    return Err(DatasetError::Malformed {
                        line: line_no,
                        message: format!("expected header id,path,label[,fold], got {line:?}"),
                    })
                }
            }
            header_seen = true;
            continue;
        }
        let expected = if has_fold { 4 } else { 3 };
        if fields.len() != expected {
            return Err(DatasetError::Malformed {
                line: line_no,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let label = fields[2].parse::<usize>().map_err(|_| DatasetError::Malformed {
            line: line_no,
            message: format!("label {:?} is not a non-negative integer", fields[2]),
        })?;
        let fold = if has_fold && !fields[3].is_empty() {
            Some(fields[3].parse::<usize>().map_err(|_| DatasetError::Malformed {
                line: line_no,
                message: format!("fold {:?} is not a non-negative integer", fields[3]),
            })?)
        } else {
            None
        };
        if fields[0].is_empty() {
            return Err(DatasetError::Malformed {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if let Some(n) = declared {
            if label >= n {
                return Err(DatasetError::LabelOutOfRange {
                    line: line_no,
                    label,
                    num_classes: n,
                });
            }
        }
        rows.push(ImageRecord {
            id: fields[0].to_string(),
            path: fields[1].to_string(),
            label,
            fold,
        });
    }
    if !header_seen {
        return Err(DatasetError::Malformed {
            line: 0,
            message: "missing header".into(),
        });
    }
    let num_classes = declared
        .unwrap_or_else(|| rows.iter().map(|r| r.label + 1).max().unwrap_or(0).max(2));
    DatasetManifest::new(rows, num_classes, base_dir)
}

/// `n_i / n_0` for every class.
pub fn class_ratio(manifest: &DatasetManifest) -> Result<Vec<f64>, DatasetError> {
    ratio_from_counts(&manifest.class_counts)
}

pub fn ratio_from_counts(counts: &[usize]) -> Result<Vec<f64>, DatasetError> {
    let first = *counts.first().ok_or(DatasetError::EmptyFirstClass)?;
    if first == 0 {
        return Err(DatasetError::EmptyFirstClass);
    }
    Ok(counts.iter().map(|&n| n as f64 / first as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// `CW_i ∝ 1 / n_i`.
    Balanced,
    /// `CW_i ∝ 1 / sqrt(n_i)`.
    InverseSqrt,
    #[default]
    None,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "inverse-sqrt" => Ok(Self::InverseSqrt),
            "none" => Ok(Self::None),
            other => Err(format!(
                "unknown weight scheme {other:?} (expected balanced, inverse-sqrt or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub scheme: WeightScheme,
    /// Rescaled so that the weights sum to the class count.
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            scheme: WeightScheme::None,
            weights: vec![1.0; num_classes],
        }
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights[class]
    }
}

pub fn compute_class_weights(
    manifest: &DatasetManifest,
    scheme: WeightScheme,
) -> Result<ClassWeights, DatasetError> {
    class_weights_from_counts(&manifest.class_counts, scheme)
}

pub fn class_weights_from_counts(
    counts: &[usize],
    scheme: WeightScheme,
) -> Result<ClassWeights, DatasetError> {
    let raw: Vec<f64> = match scheme {
        WeightScheme::None => return Ok(ClassWeights::uniform(counts.len())),
        WeightScheme::Balanced | WeightScheme::InverseSqrt => counts
            .iter()
            .enumerate()
            .map(|(class, &n)| {
                if n == 0 {
                    return Err(DatasetError::EmptyClass { class, scheme });
                }
                let n = n as f64;
                Ok(if scheme == WeightScheme::Balanced { 1.0 / n } else { 1.0 / n.sqrt() })
            })
            .collect::<Result<_, _>>()?,
    };
    let total: f64 = raw.iter().sum();
    let scale = counts.len() as f64 / total;
    Ok(ClassWeights {
        scheme,
        weights: raw.into_iter().map(|w| w * scale).collect(),
    })
}

/// Fold assignment for every record id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSpec {
    /// Reads the fold column of a manifest; every record must carry a fold.
    pub fn from_manifest(manifest: &DatasetManifest) -> Option<Self> {
        let mut assignments = BTreeMap::new();
        let mut k = 0;
        for r in &manifest.records {
            let f = r.fold?;
            k = k.max(f + 1);
            assignments.insert(r.id.clone(), f);
        }
        (k >= 2).then_some(Self { k, assignments })
    }

    /// Record indices (in manifest order) held out in `fold`.
    pub fn held_out(&self, manifest: &DatasetManifest, fold: usize) -> Vec<usize> {
        self.indices(manifest, |f| f == fold)
    }

    /// Record indices (in manifest order) used for training when `fold` is held out.
    pub fn training(&self, manifest: &DatasetManifest, fold: usize) -> Vec<usize> {
        self.indices(manifest, |f| f != fold)
    }

    fn indices(&self, manifest: &DatasetManifest, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.assignments.get(&r.id).is_some_and(|&f| keep(f)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Seeded stratified k-fold assignment.
///
/// Each class is shuffled independently and dealt round-robin; dealing continues
/// where the previous class stopped so overall fold sizes also stay within one.
pub fn stratified_kfold(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<FoldSpec, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidFoldCount(k));
    }
    for (class, &count) in manifest.class_counts.iter().enumerate() {
        if count < k {
            return Err(DatasetError::TooFewForFolds { class, count, k });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next_fold = 0;
    for class in 0..manifest.num_classes {
        let mut members: Vec<&ImageRecord> =
            manifest.records.iter().filter(|r| r.label == class).collect();
        members.shuffle(&mut rng);
        for r in members {
            assignments.insert(r.id.clone(), next_fold);
            next_fold = (next_fold + 1) % k;
        }
    }
    Ok(FoldSpec { k, assignments })
}
