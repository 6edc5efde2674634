//! RGB image tensors and PNG/JPEG I/O.

use std::path::Path;

use thiserror::Error;

pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Height × width × 3 image, row-major with interleaved channels.
///
/// Values are intensities in `[0, 1]` until normalization, after which they are
/// unbounded reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; CHANNELS])
    }

    pub fn filled(height: usize, width: usize, value: [f64; CHANNELS]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&value);
        }
        Self { height, width, data }
    }

    /// Panics if `data.len() != height * width * 3`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * CHANNELS, "image buffer length");
        Self { height, width, data }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; CHANNELS],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(row, col));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.width + col) * CHANNELS + channel] = value;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; CHANNELS] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, value: [f64; CHANNELS]) {
        let i = (row * self.width + col) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&value);
    }

    /// Rec. 601 luma.
    pub fn to_grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element-wise difference; infinite if shapes differ.
    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        if self.height != other.height || self.width != other.width {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn load(path: &Path) -> Result<Self, ImageIoError> {
        let img = image::open(path)
            .map_err(|source| ImageIoError::Read {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
        Ok(Self::from_vec(h as usize, w as usize, data))
    }

    /// Writes an 8-bit PNG; values are clamped to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageIoError> {
        let raw: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer sized from tensor shape");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImageIoError::Write {
                path: path.display().to_string(),
                source,
            })
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary mask as an 8-bit grayscale PNG (foreground = 255).
pub fn save_mask_png(mask: &[bool], height: usize, width: usize, path: &Path) -> Result<(), ImageIoError> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(width as u32, height as u32, raw)
        .expect("mask sized from image shape");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ImageIoError::Write {
            path: path.display().to_string(),
            source,
        })
}
