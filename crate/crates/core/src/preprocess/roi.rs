//! Region-of-interest extraction by two-region piecewise-constant contour energy
//! minimization.
//!
//! The foreground is a soft indicator `u ∈ [0, 1]` on the grayscale image `g`
//! (the convex relaxation of a binary mask):
//!
//! ```text
//! E(u) = Σ_p u_p (g_p − c_in)² + (1 − u_p)(g_p − c_out)² + μ · TV(u)
//! ```
//!
//! with `c_in`, `c_out` the `u`-weighted region means and `TV` the isotropic
//! discrete total variation (the contour length for a binary `u`). `u` starts
//! as a smoothed centered disk and follows projected gradient descent; a step
//! is accepted only if it does not raise `E`, otherwise it is halved. The
//! final mask is `u > 1/2`.

use serde::{Deserialize, Serialize};

use super::{resize_to, PreprocessError};
use crate::image::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    /// Contour-length penalty per boundary edge.
    pub length_weight: f64,
    /// Largest per-iteration change of the indicator, relative to its range.
    pub max_step: f64,
    /// Step halvings tried before an iteration is declared stationary.
    pub max_halvings: usize,
    /// Gradients below this fraction of the largest one move proportionally slower.
    pub gradient_floor: f64,
    /// Initial circle radius as a fraction of `min(h, w)`.
    pub init_radius_fraction: f64,
    pub min_area_fraction: f64,
    pub max_area_fraction: f64,
    /// Box margin as a fraction of the image side, per axis.
    pub margin_fraction: f64,
    /// Region means closer than this are treated as "no contour".
    pub min_contrast: f64,
    /// Larger images are segmented at this side length and the result scaled back.
    pub working_side: usize,
    /// Accepted iterations over which the relative energy drop is measured.
    pub convergence_window: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            length_weight: 0.05,
            max_step: 1.0,
            max_halvings: 20,
            gradient_floor: 0.01,
            init_radius_fraction: 0.35,
            min_area_fraction: 0.05,
            max_area_fraction: 0.95,
            margin_fraction: 0.05,
            min_contrast: 1e-3,
            working_side: 128,
            convergence_window: 10,
        }
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row_min: 0,
            row_max: height.saturating_sub(1),
            col_min: 0,
            col_max: width.saturating_sub(1),
        }
    }

    pub fn height(&self) -> usize {
        self.row_max + 1 - self.row_min
    }

    pub fn width(&self) -> usize {
        self.col_max + 1 - self.col_min
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiResult {
    pub bbox: BoundingBox,
    /// Row-major foreground mask at the input resolution.
    pub mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
    pub converged: bool,
    pub fallback_used: bool,
    pub iterations: usize,
    /// Energy after initialization and after every accepted step.
    pub energy_trace: Vec<f64>,
}

impl RoiResult {
    pub fn full_image(height: usize, width: usize) -> Self {
        Self {
            bbox: BoundingBox::full(height, width),
            mask: vec![true; height * width],
            height,
            width,
            converged: false,
            fallback_used: true,
            iterations: 0,
            energy_trace: Vec::new(),
        }
    }

    pub fn mask_area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn segment_roi(image: &ImageTensor, max_iters: usize, tol: f64) -> Result<RoiResult, PreprocessError> {
    segment_roi_with(image, &RoiConfig::default(), max_iters, tol)
}

pub fn segment_roi_with(
    image: &ImageTensor,
    config: &RoiConfig,
    max_iters: usize,
    tol: f64,
) -> Result<RoiResult, PreprocessError> {
    if !image.all_finite() {
        return Err(PreprocessError::NonFinite);
    }
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    let longest = h.max(w);
    let working = if longest > config.working_side {
        let scale = config.working_side as f64 / longest as f64;
        let wh = ((h as f64 * scale).round() as usize).max(1);
        let ww = ((w as f64 * scale).round() as usize).max(1);
        resize_to(image, wh, ww)
    } else {
        image.clone()
    };
    let (wh, ww) = (working.height(), working.width());
    let gray = working.to_grayscale();
    let evolved = evolve(&gray, wh, ww, config, max_iters, tol);

    let mask = if (wh, ww) == (h, w) {
        evolved.mask
    } else {
        // Nearest-neighbour upsampling back to the input grid.
        let mut full = vec![false; h * w];
        for row in 0..h {
            let sr = ((row as f64 + 0.5) * wh as f64 / h as f64) as usize;
            for col in 0..w {
                let sc = ((col as f64 + 0.5) * ww as f64 / w as f64) as usize;
                full[row * w + col] = evolved.mask[sr.min(wh - 1) * ww + sc.min(ww - 1)];
            }
        }
        full
    };

    let area = mask.iter().filter(|&&m| m).count() as f64 / (h * w) as f64;
    let degenerate = evolved.diverged
        || evolved.contrast < config.min_contrast
        || area < config.min_area_fraction
        || area > config.max_area_fraction;
    if degenerate {
        return Ok(RoiResult {
            converged: evolved.converged,
            iterations: evolved.iterations,
            energy_trace: evolved.energy_trace,
            ..RoiResult::full_image(h, w)
        });
    }

    let mut bbox = BoundingBox {
        row_min: usize::MAX,
        row_max: 0,
        col_min: usize::MAX,
        col_max: 0,
    };
    for row in 0..h {
        for col in 0..w {
            if mask[row * w + col] {
                bbox.row_min = bbox.row_min.min(row);
                bbox.row_max = bbox.row_max.max(row);
                bbox.col_min = bbox.col_min.min(col);
                bbox.col_max = bbox.col_max.max(col);
            }
        }
    }
    let mr = (config.margin_fraction * h as f64).ceil() as usize;
    let mc = (config.margin_fraction * w as f64).ceil() as usize;
    bbox.row_min = bbox.row_min.saturating_sub(mr);
    bbox.col_min = bbox.col_min.saturating_sub(mc);
    bbox.row_max = (bbox.row_max + mr).min(h - 1);
    bbox.col_max = (bbox.col_max + mc).min(w - 1);

    Ok(RoiResult {
        bbox,
        mask,
        height: h,
        width: w,
        converged: evolved.converged,
        fallback_used: false,
        iterations: evolved.iterations,
        energy_trace: evolved.energy_trace,
    })
}

struct Evolution {
    mask: Vec<bool>,
    converged: bool,
    diverged: bool,
    iterations: usize,
    energy_trace: Vec<f64>,
    contrast: f64,
}

struct RegionStats {
    c_in: f64,
    c_out: f64,
    energy: f64,
}

/// Smoothing inside the square root of the discrete total variation.
const TV_SMOOTHING: f64 = 1e-2;

/// Forward differences with a zero difference past the last row/column.
fn forward_diffs(u: &[f64], h: usize, w: usize, i: usize) -> (f64, f64) {
    let (row, col) = (i / w, i % w);
    let dx = if col + 1 < w { u[i + 1] - u[i] } else { 0.0 };
    let dy = if row + 1 < h { u[i + w] - u[i] } else { 0.0 };
    (dx, dy)
}

fn region_stats(gray: &[f64], u: &[f64], h: usize, w: usize, length_weight: f64) -> RegionStats {
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0.0, 0.0, 0.0);
    for (&g, &v) in gray.iter().zip(u) {
        s_in += g * v;
        n_in += v;
        s_out += g * (1.0 - v);
        n_out += 1.0 - v;
    }
    let c_in = if n_in > 0.0 { s_in / n_in } else { 0.0 };
    let c_out = if n_out > 0.0 { s_out / n_out } else { 0.0 };
    let mut data = 0.0;
    let mut length = 0.0;
    for (i, (&g, &v)) in gray.iter().zip(u).enumerate() {
        data += v * (g - c_in).powi(2) + (1.0 - v) * (g - c_out).powi(2);
        let (dx, dy) = forward_diffs(u, h, w, i);
        length += (dx * dx + dy * dy + TV_SMOOTHING).sqrt() - TV_SMOOTHING.sqrt();
    }
    RegionStats {
        c_in,
        c_out,
        energy: data + length_weight * length,
    }
}

/// Gradient of the energy with respect to `u`. The region means are optimal for
/// `u`, so holding them fixed gives the exact gradient.
fn energy_gradient(gray: &[f64], u: &[f64], h: usize, w: usize, stats: &RegionStats, length_weight: f64) -> Vec<f64> {
    let mut grad: Vec<f64> = gray
        .iter()
        .map(|&g| (g - stats.c_in).powi(2) - (g - stats.c_out).powi(2))
        .collect();
    for i in 0..h * w {
        let (dx, dy) = forward_diffs(u, h, w, i);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let n = (dx * dx + dy * dy + TV_SMOOTHING).sqrt();
        let (gx, gy) = (length_weight * dx / n, length_weight * dy / n);
        grad[i] -= gx + gy;
        if dx != 0.0 {
            grad[i + 1] += gx;
        }
        if dy != 0.0 {
            grad[i + w] += gy;
        }
    }
    grad
}

fn evolve(gray: &[f64], h: usize, w: usize, config: &RoiConfig, max_iters: usize, tol: f64) -> Evolution {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let r0 = config.init_radius_fraction * h.min(w) as f64;
    let mut u: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            0.5 + 0.5 * ((r0 - d) / 2.0).tanh()
        })
        .collect();

    let mut stats = region_stats(gray, &u, h, w, config.length_weight);
    let mut trace = vec![stats.energy];
    let mut step = config.max_step;
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        let grad = energy_gradient(gray, &u, h, w, &stats, config.length_weight);
        // Only components not pinned against the [0, 1] box set the scale.
        let scale = grad
            .iter()
            .zip(&u)
            .filter(|&(&g, &v)| !((v >= 1.0 && g < 0.0) || (v <= 0.0 && g > 0.0)))
            .fold(0.0f64, |m, (g, _)| m.max(g.abs()));
        if !scale.is_finite() {
            diverged = true;
            break;
        }
        if scale == 0.0 {
            converged = true;
            break;
        }

        // Diagonal scaling keeps the step a descent direction while letting
        // weakly driven pixels move as fast as strongly driven ones.
        let floor = config.gradient_floor * scale;
        let mut accepted = None;
        for _ in 0..config.max_halvings {
            let candidate: Vec<f64> = u
                .iter()
                .zip(&grad)
                .map(|(&v, &g)| (v - step * g / g.abs().max(floor)).clamp(0.0, 1.0))
                .collect();
            let next = region_stats(gray, &candidate, h, w, config.length_weight);
            if !next.energy.is_finite() {
                diverged = true;
                break;
            }
            if next.energy <= stats.energy {
                accepted = Some((candidate, next));
                break;
            }
            step *= 0.5;
        }
        if diverged {
            break;
        }
        // Data-only minimizer for the current means: each pixel joins the nearer
        // mean. Taken whenever it beats the gradient step.
        let assigned: Vec<f64> = gray
            .iter()
            .map(|&g| if (g - stats.c_in).abs() < (g - stats.c_out).abs() { 1.0 } else { 0.0 })
            .collect();
        let assigned_stats = region_stats(gray, &assigned, h, w, config.length_weight);
        let best_so_far = accepted.as_ref().map_or(stats.energy, |(_, n): &(Vec<f64>, RegionStats)| n.energy);
        if assigned_stats.energy < best_so_far {
            accepted = Some((assigned, assigned_stats));
        }
        let Some((candidate, next)) = accepted else {
            // No descent step at the smallest allowed size: a local minimum.
            converged = true;
            break;
        };
        debug_assert!(next.energy <= stats.energy);
        u = candidate;
        stats = next;
        trace.push(stats.energy);
        iterations += 1;
        step = (step * 2.0).min(config.max_step);

        let window = config.convergence_window;
        if trace.len() > window {
            let past = trace[trace.len() - 1 - window];
            if past - stats.energy <= tol * past.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }

    Evolution {
        mask: u.iter().map(|&v| v > 0.5).collect(),
        converged,
        diverged,
        iterations,
        energy_trace: trace,
        contrast: (stats.c_in - stats.c_out).abs(),
    }
}
