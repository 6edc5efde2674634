//! Deterministic synthetic three-class generator.
//!
//! Class 0: fully visible bright annulus around a dark os.
//! Class 1: the same annulus with 40–60% of it hidden under an occluding disk.
//! Class 2: no annulus, only a dark central disk.
//! All classes get background noise and a few white specular blobs.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, ImageRecord};
use crate::image::ImageTensor;

pub const SYNTH_CLASSES: usize = 3;

const BACKGROUND: [f64; 3] = [0.22, 0.10, 0.11];
const TISSUE: [f64; 3] = [0.80, 0.52, 0.52];
const ANNULUS: [f64; 3] = [0.98, 0.88, 0.84];
const OS: [f64; 3] = [0.36, 0.10, 0.12];
const DARK_CORE: [f64; 3] = [0.42, 0.14, 0.18];

const ANNULUS_INNER: f64 = 0.40;
const ANNULUS_OUTER: f64 = 0.70;
const OS_RADIUS: f64 = 0.15;
const DARK_CORE_RADIUS: f64 = 0.55;
/// Target coverage is drawn from a slightly narrower band than 40–60% so the
/// pixel-quantized coverage stays inside it.
const COVERAGE_RANGE: (f64, f64) = (0.42, 0.58);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub class_proportions: Vec<f64>,
    /// Inclusive range for the number of specular blobs per image.
    pub specular_blob_count_range: (u32, u32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            class_proportions: vec![1.0 / 3.0; SYNTH_CLASSES],
            specular_blob_count_range: (0, 5),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSynthConfig(m));
        if self.image_size < 32 {
            return bad(format!("image_size must be at least 32, got {}", self.image_size));
        }
        if self.class_proportions.len() != SYNTH_CLASSES {
            return bad(format!(
                "expected {SYNTH_CLASSES} class proportions, got {}",
                self.class_proportions.len()
            ));
        }
        if self.class_proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("class proportions must be finite and non-negative".into());
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("class proportions must sum to 1, got {sum}"));
        }
        let (lo, hi) = self.specular_blob_count_range;
        if lo > hi {
            return bad(format!("specular blob range {lo}..={hi} is empty"));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `count` items to the given proportions.
/// Ties in the fractional part go to the lower class index.
pub fn apportion(count: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * count as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(count.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: ImageTensor,
    pub label: usize,
    /// Visible annulus pixels (before specular blobs are painted).
    pub annulus_pixels: usize,
}

/// Renders `count` labeled images in memory.
pub fn render_synthetic(config: &SynthConfig, count: usize) -> Result<Vec<SynthSample>, DatasetError> {
    config.validate()?;
    if count < SYNTH_CLASSES {
        return Err(DatasetError::InvalidSynthConfig(format!(
            "count must be at least {SYNTH_CLASSES}, got {count}"
        )));
    }
    let labels = shuffled_labels(config, count);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            render_one(config, label, &mut rng)
        })
        .collect())
}

fn shuffled_labels(config: &SynthConfig, count: usize) -> Vec<usize> {
    let counts = apportion(count, &config.class_proportions);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| std::iter::repeat_n(label, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    labels.shuffle(&mut rng);
    labels
}

/// Writes `count` PNG images plus `manifest.csv` and `genconfig.json` into `out_dir`.
pub fn generate_synthetic(
    config: &SynthConfig,
    count: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let samples = render_synthetic(config, count)?;
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| DatasetError::Io { path, source }
    };
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
    let mut records = Vec::with_capacity(count);
    for (i, sample) in samples.iter().enumerate() {
        let rel = format!("images/img_{i:05}.png");
        sample.image.save_png(&out_dir.join(&rel))?;
        records.push(ImageRecord {
            id: format!("img_{i:05}"),
            path: rel,
            label: sample.label,
            fold: None,
        });
    }
    let manifest = DatasetManifest::new(records, SYNTH_CLASSES, out_dir)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    let genconfig = out_dir.join("genconfig.json");
    let echo = serde_json::json!({ "config": config, "count": count });
    fs::write(&genconfig, serde_json::to_string_pretty(&echo).expect("serializable"))
        .map_err(io_err(&genconfig))?;
    Ok(manifest)
}

struct Disk {
    cy: f64,
    cx: f64,
    r: f64,
}

impl Disk {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        dy * dy + dx * dx <= self.r * self.r
    }
}

fn render_one(config: &SynthConfig, label: usize, rng: &mut ChaCha8Rng) -> SynthSample {
    let size = config.image_size;
    let s = size as f64;
    let center = s / 2.0;
    let cy = center + rng.random_range(-0.05..=0.05) * s;
    let cx = center + rng.random_range(-0.05..=0.05) * s;
    let radius = rng.random_range(0.32..=0.38) * s;
    let brightness = rng.random_range(0.92..=1.08);
    let tissue = Disk { cy, cx, r: radius };
    let inner = Disk { cy, cx, r: ANNULUS_INNER * radius };
    let outer = Disk { cy, cx, r: ANNULUS_OUTER * radius };
    let os = Disk { cy, cx, r: OS_RADIUS * radius };
    let core = Disk { cy, cx, r: DARK_CORE_RADIUS * radius };

    let in_annulus = |y: f64, x: f64| outer.contains(y, x) && !inner.contains(y, x);
    let occluder = (label == 1).then(|| {
        let target = rng.random_range(COVERAGE_RANGE.0..=COVERAGE_RANGE.1);
        let angle = rng.random_range(0.0..2.0 * PI);
        place_occluder(size, &outer, &in_annulus, target, angle)
    });

    let mut annulus_pixels = 0;
    let mut image = ImageTensor::zeros(size, size);
    for row in 0..size {
        for col in 0..size {
            let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
            let mut color = BACKGROUND;
            if tissue.contains(y, x) {
                color = TISSUE;
                match label {
                    0 | 1 => {
                        let hidden = occluder.as_ref().is_some_and(|d| d.contains(y, x));
                        if in_annulus(y, x) && !hidden {
                            color = ANNULUS;
                            annulus_pixels += 1;
                        }
                        if os.contains(y, x) {
                            color = OS;
                        }
                    }
                    _ => {
                        if core.contains(y, x) {
                            color = DARK_CORE;
                        }
                    }
                }
            }
            let mut px = [0.0; 3];
            for (c, v) in px.iter_mut().enumerate() {
                *v = (color[c] * brightness + rng.random_range(-0.04..=0.04)).clamp(0.0, 1.0);
            }
            image.set_pixel(row, col, px);
        }
    }

    let (lo, hi) = config.specular_blob_count_range;
    let blobs = rng.random_range(lo..=hi);
    for _ in 0..blobs {
        let rho = radius * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..2.0 * PI);
        let blob = Disk {
            cy: cy + rho * theta.sin(),
            cx: cx + rho * theta.cos(),
            r: rng.random_range(1.0..=2.5) * s / 64.0,
        };
        paint_disk(&mut image, &blob, [1.0, 1.0, 1.0]);
    }

    SynthSample {
        image,
        label,
        annulus_pixels,
    }
}

fn paint_disk(image: &mut ImageTensor, disk: &Disk, color: [f64; 3]) {
    let (h, w) = (image.height() as f64, image.width() as f64);
    let r0 = (disk.cy - disk.r).floor().clamp(0.0, h) as usize;
    let r1 = (disk.cy + disk.r).ceil().clamp(0.0, h) as usize;
    let c0 = (disk.cx - disk.r).floor().clamp(0.0, w) as usize;
    let c1 = (disk.cx + disk.r).ceil().clamp(0.0, w) as usize;
    for row in r0..r1 {
        for col in c0..c1 {
            if disk.contains(row as f64 + 0.5, col as f64 + 0.5) {
                image.set_pixel(row, col, color);
            }
        }
    }
}

/// Finds an occluding disk (same radius as the annulus) along `angle` whose
/// pixel coverage of the annulus is as close as possible to `target`.
fn place_occluder(
    size: usize,
    outer: &Disk,
    in_annulus: &impl Fn(f64, f64) -> bool,
    target: f64,
    angle: f64,
) -> Disk {
    let r = outer.r;
    let at = |d: f64| Disk {
        cy: outer.cy + d * angle.sin(),
        cx: outer.cx + d * angle.cos(),
        r,
    };
    let coverage = |disk: &Disk| {
        let (mut total, mut hidden) = (0usize, 0usize);
        for row in 0..size {
            for col in 0..size {
                let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
                if in_annulus(y, x) {
                    total += 1;
                    if disk.contains(y, x) {
                        hidden += 1;
                    }
                }
            }
        }
        hidden as f64 / total.max(1) as f64
    };
    // Coverage falls from 1 at d = 0 to 0 at d = 2r.
    let (mut lo, mut hi) = (0.0, 2.0 * r);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if coverage(&at(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (at(lo), at(hi));
    if (coverage(&a) - target).abs() <= (coverage(&b) - target).abs() {
        a
    } else {
        b
    }
}
