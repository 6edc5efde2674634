//! Image preprocessing: ROI crop, resize, augmentation and channel normalization.
//!
//! Pipeline order is `segment_roi → crop → resize → augment → normalize`;
//! augmentation is applied to training splits only.

mod roi;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::image::ImageTensor;
pub use roi::{segment_roi, segment_roi_with, BoundingBox, RoiConfig, RoiResult};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("image contains non-finite values")]
    NonFinite,
    #[error("image has zero area")]
    EmptyImage,
    #[error("crop box {bbox:?} is degenerate or outside a {height}x{width} image")]
    BadCrop {
        bbox: BoundingBox,
        height: usize,
        width: usize,
    },
    #[error("resize side must be at least {min}, got {side}")]
    SideTooSmall { side: usize, min: usize },
    #[error("normalization std must be strictly positive, got {0:?}")]
    NonPositiveStd([f64; 3]),
    #[error("invalid augmentation spec: {0}")]
    InvalidAugmentation(String),
}

pub const MIN_RESIZE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationSpec {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationSpec {
    /// ImageNet channel statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationSpec {
    fn check(&self) -> Result<(), PreprocessError> {
        if self.std.iter().all(|&s| s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(PreprocessError::NonPositiveStd(self.std))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Rotation angle is drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    pub hflip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            rotation_degrees: 15.0,
            hflip_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            rotation_degrees: 0.0,
            hflip_probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(PreprocessError::InvalidAugmentation(format!(
                "rotation range must be non-negative, got {}",
                self.rotation_degrees
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(PreprocessError::InvalidAugmentation(format!(
                "flip probability must be in [0, 1], got {}",
                self.hflip_probability
            )));
        }
        Ok(())
    }
}

pub fn crop(image: &ImageTensor, roi: &RoiResult) -> Result<ImageTensor, PreprocessError> {
    crop_box(image, &roi.bbox)
}

pub fn crop_box(image: &ImageTensor, bbox: &BoundingBox) -> Result<ImageTensor, PreprocessError> {
    let (h, w) = (image.height(), image.width());
    if bbox.row_min > bbox.row_max || bbox.col_min > bbox.col_max || bbox.row_max >= h || bbox.col_max >= w {
        return Err(PreprocessError::BadCrop {
            bbox: *bbox,
            height: h,
            width: w,
        });
    }
    Ok(ImageTensor::from_fn(bbox.height(), bbox.width(), |r, c| {
        image.pixel(bbox.row_min + r, bbox.col_min + c)
    }))
}

/// Bilinear resize to `side × side`.
pub fn resize(image: &ImageTensor, side: usize) -> Result<ImageTensor, PreprocessError> {
    if side < MIN_RESIZE_SIDE {
        return Err(PreprocessError::SideTooSmall {
            side,
            min: MIN_RESIZE_SIDE,
        });
    }
    Ok(resize_to(image, side, side))
}

/// Bilinear resize with half-pixel centers; output values are convex
/// combinations of input values.
pub fn resize_to(image: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    if (h, w) == (height, width) {
        return image.clone();
    }
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let axis = |dst: usize, scale: f64, n: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|c| axis(c, sx, w)).collect();
    ImageTensor::from_fn(height, width, |r, c| {
        let (y0, y1, fy) = axis(r, sy, h);
        let (x0, x1, fx) = cols[c];
        let mut out = [0.0; 3];
        for (ch, v) in out.iter_mut().enumerate() {
            let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
            let bottom = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
            *v = top * (1.0 - fy) + bottom * fy;
        }
        out
    })
}

pub fn hflip(image: &ImageTensor) -> ImageTensor {
    let w = image.width();
    ImageTensor::from_fn(image.height(), w, |r, c| image.pixel(r, w - 1 - c))
}

/// Rotates about the image center by `degrees` (counter-clockwise), bilinear
/// sampling, zero fill outside the source.
pub fn rotate(image: &ImageTensor, degrees: f64) -> ImageTensor {
    if degrees == 0.0 {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    ImageTensor::from_fn(h, w, |r, c| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        // Inverse map: output pixel samples the source rotated back.
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        if sy < -0.5 || sy > h as f64 - 0.5 || sx < -0.5 || sx > w as f64 - 0.5 {
            return [0.0; 3];
        }
        let sy = sy.clamp(0.0, (h - 1) as f64);
        let sx = sx.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let mut out = [0.0; 3];
        for (ch, v) in out.iter_mut().enumerate() {
            let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
            let bottom = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
            *v = top * (1.0 - fy) + bottom * fy;
        }
        out
    })
}

/// Random rotation then random horizontal flip. Always draws exactly two
/// values from `rng` so streams stay aligned regardless of the spec.
pub fn augment(image: &ImageTensor, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> ImageTensor {
    let u: f64 = rng.random();
    let flip_draw: f64 = rng.random();
    let angle = spec.rotation_degrees * (2.0 * u - 1.0);
    let rotated = rotate(image, angle);
    if flip_draw < spec.hflip_probability {
        hflip(&rotated)
    } else {
        rotated
    }
}

pub fn normalize(image: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor, PreprocessError> {
    spec.check()?;
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - spec.mean[c]) / spec.std[c];
        }
    }
    Ok(out)
}

pub fn denormalize(image: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor, PreprocessError> {
    spec.check()?;
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = px[c] * spec.std[c] + spec.mean[c];
        }
    }
    Ok(out)
}

/// Deterministic part of the pipeline options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Crop to the segmented region of interest before resizing.
    pub roi: bool,
    pub roi_max_iters: usize,
    pub roi_tol: f64,
    pub roi_params: RoiConfig,
    pub side: usize,
    pub normalization: NormalizationSpec,
    pub rotation_degrees: f64,
    pub hflip_probability: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            roi: true,
            roi_max_iters: 300,
            roi_tol: 1e-4,
            roi_params: RoiConfig::default(),
            side: 64,
            normalization: NormalizationSpec::default(),
            rotation_degrees: 15.0,
            hflip_probability: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.side < MIN_RESIZE_SIDE {
            return Err(PreprocessError::SideTooSmall { side: self.side, min: MIN_RESIZE_SIDE });
        }
        self.normalization.check()?;
        self.augmentation(0).validate()
    }

    pub fn augmentation(&self, seed: u64) -> AugmentationSpec {
        AugmentationSpec {
            rotation_degrees: self.rotation_degrees,
            hflip_probability: self.hflip_probability,
            seed,
        }
    }
}

/// ROI crop (when enabled) followed by resize. Returns the resized image and
/// the ROI result if segmentation ran.
pub fn prepare(
    image: &ImageTensor,
    config: &PreprocessConfig,
) -> Result<(ImageTensor, Option<RoiResult>), PreprocessError> {
    let (cropped, roi) = if config.roi {
        let roi = segment_roi_with(image, &config.roi_params, config.roi_max_iters, config.roi_tol)?;
        (crop(image, &roi)?, Some(roi))
    } else {
        (image.clone(), None)
    };
    Ok((resize(&cropped, config.side)?, roi))
}
