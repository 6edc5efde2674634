//! The four per-phase losses and their gradients with respect to the network outputs.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dataset::ClassWeights;
use crate::model::{FeatureMap, Matrix};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Normalization of the reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructionMode {
    /// Squared error averaged over every element and the batch.
    #[default]
    PerPixel,
    /// Squared error summed over each image, averaged over the batch only.
    SumPerImage,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

/// `d(-ln clamp(p))/dp`, zero where the clamp is active.
fn neg_log_grad(p: f64) -> f64 {
    if p > PROB_FLOOR && p <= 1.0 {
        -1.0 / p
    } else {
        0.0
    }
}

fn check_pair_rows(m: &Matrix, what: &str) -> Result<(), TrainError> {
    if m.cols != 2 {
        return Err(TrainError::Shape(format!("{what} must have 2 columns, got {}", m.cols)));
    }
    Ok(())
}

pub fn reconstruction_loss(
    reconstructed: &FeatureMap,
    target: &FeatureMap,
    mode: ReconstructionMode,
) -> Result<f64, TrainError> {
    reconstruction_loss_grad(reconstructed, target, mode).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `reconstructed`.
pub fn reconstruction_loss_grad(
    reconstructed: &FeatureMap,
    target: &FeatureMap,
    mode: ReconstructionMode,
) -> Result<(f64, FeatureMap), TrainError> {
    if !reconstructed.same_shape(target) {
        return Err(TrainError::Shape(format!(
            "reconstruction ({}, {}, {}, {}) vs target ({}, {}, {}, {})",
            reconstructed.n, reconstructed.c, reconstructed.h, reconstructed.w,
            target.n, target.c, target.h, target.w
        )));
    }
    if target.n == 0 {
        return Err(TrainError::Shape("empty batch".into()));
    }
    let mut denom = target.n as f64;
    if mode == ReconstructionMode::PerPixel {
        denom *= target.sample_len() as f64;
    }
    let mut grad = FeatureMap::zeros(target.n, target.c, target.h, target.w);
    let mut sum = 0.0;
    for ((g, &a), &b) in grad.data.iter_mut().zip(&reconstructed.data).zip(&target.data) {
        let d = a - b;
        sum += d * d;
        *g = 2.0 * d / denom;
    }
    Ok((sum / denom, grad))
}

/// Mean over the batch of `−ln ŷ_r[1] − ln ŷ_f[0]`. Rows are `[p_fake, p_real]`.
pub fn discriminator_loss(real_out: &Matrix, fake_out: &Matrix) -> Result<f64, TrainError> {
    discriminator_loss_grad(real_out, fake_out).map(|(l, _, _)| l)
}

/// Loss plus gradients with respect to the real and fake probability rows.
pub fn discriminator_loss_grad(real_out: &Matrix, fake_out: &Matrix) -> Result<(f64, Matrix, Matrix), TrainError> {
    check_pair_rows(real_out, "real discriminator output")?;
    check_pair_rows(fake_out, "fake discriminator output")?;
    if real_out.rows != fake_out.rows || real_out.rows == 0 {
        return Err(TrainError::Shape(format!(
            "real/fake batches must be non-empty and paired, got {} and {}",
            real_out.rows, fake_out.rows
        )));
    }
    let b = real_out.rows as f64;
    let mut d_real = Matrix::zeros(real_out.rows, 2);
    let mut d_fake = Matrix::zeros(fake_out.rows, 2);
    let mut sum = 0.0;
    for i in 0..real_out.rows {
        let (pr, pf) = (real_out.row(i)[1], fake_out.row(i)[0]);
        sum += -clamp_prob(pr).ln() - clamp_prob(pf).ln();
        d_real.row_mut(i)[1] = neg_log_grad(pr) / b;
        d_fake.row_mut(i)[0] = neg_log_grad(pf) / b;
    }
    Ok((sum / b, d_real, d_fake))
}

/// Mean over the batch of `−ln ŷ_f[1]`.
pub fn generator_loss(fake_out: &Matrix) -> Result<f64, TrainError> {
    generator_loss_grad(fake_out).map(|(l, _)| l)
}

pub fn generator_loss_grad(fake_out: &Matrix) -> Result<(f64, Matrix), TrainError> {
    check_pair_rows(fake_out, "fake discriminator output")?;
    if fake_out.rows == 0 {
        return Err(TrainError::Shape("empty batch".into()));
    }
    let b = fake_out.rows as f64;
    let mut grad = Matrix::zeros(fake_out.rows, 2);
    let mut sum = 0.0;
    for i in 0..fake_out.rows {
        let p = fake_out.row(i)[1];
        sum += -clamp_prob(p).ln();
        grad.row_mut(i)[1] = neg_log_grad(p) / b;
    }
    Ok((sum / b, grad))
}

/// Mean over the batch of `−Σ_i y_i ln S_i`, each sample scaled by the weight of
/// its target class.
pub fn classification_loss(probs: &Matrix, targets: &Matrix, weights: &ClassWeights) -> Result<f64, TrainError> {
    classification_loss_grad(probs, targets, weights).map(|(l, _)| l)
}

pub fn classification_loss_grad(
    probs: &Matrix,
    targets: &Matrix,
    weights: &ClassWeights,
) -> Result<(f64, Matrix), TrainError> {
    if probs.rows != targets.rows || probs.cols != targets.cols || probs.rows == 0 {
        return Err(TrainError::Shape(format!(
            "predictions {}x{} vs targets {}x{}",
            probs.rows, probs.cols, targets.rows, targets.cols
        )));
    }
    if weights.weights.len() != probs.cols {
        return Err(TrainError::Shape(format!(
            "{} class weights for {} classes",
            weights.weights.len(),
            probs.cols
        )));
    }
    let b = probs.rows as f64;
    let mut grad = Matrix::zeros(probs.rows, probs.cols);
    let mut sum = 0.0;
    for i in 0..probs.rows {
        let (s, y) = (probs.row(i), targets.row(i));
        let target = y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(k, _)| k);
        let w = weights.weight(target);
        let g = grad.row_mut(i);
        for k in 0..s.len() {
            if y[k] != 0.0 {
                sum += -w * y[k] * clamp_prob(s[k]).ln();
                g[k] = w * y[k] * neg_log_grad(s[k]) / b;
            }
        }
    }
    Ok((sum / b, grad))
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        m.row_mut(i)[l] = 1.0;
    }
    m
}
