use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::dataset::{DatasetManifest, ImageRecord};
use crate::image::ImageTensor;
use crate::model::FeatureMap;
use crate::preprocess::{augment, normalize, prepare, PreprocessConfig, RoiResult};

/// Manifest images after ROI cropping and resizing, kept in `[0, 1]` so that
/// augmentation can run before normalization.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageTensor>,
    pub rois: Vec<Option<RoiResult>>,
    pub preprocess: PreprocessConfig,
}

impl PreparedDataset {
    /// Loads and prepares every manifest image.
    pub fn load(manifest: DatasetManifest, preprocess: &PreprocessConfig) -> Result<Self, TrainError> {
        let mut raw = Vec::with_capacity(manifest.len());
        for record in &manifest.records {
            let path = manifest.resolve(record);
            raw.push(ImageTensor::load(&path).map_err(|e| TrainError::Data(e.to_string()))?);
        }
        Self::from_images(manifest, raw, preprocess)
    }

    /// Prepares in-memory images that correspond one-to-one with the manifest records.
    pub fn from_images(
        manifest: DatasetManifest,
        raw: Vec<ImageTensor>,
        preprocess: &PreprocessConfig,
    ) -> Result<Self, TrainError> {
        if raw.len() != manifest.len() {
            return Err(TrainError::Data(format!(
                "{} images for {} manifest records",
                raw.len(),
                manifest.len()
            )));
        }
        let mut images = Vec::with_capacity(raw.len());
        let mut rois = Vec::with_capacity(raw.len());
        for (img, record) in raw.iter().zip(&manifest.records) {
            let (prepared, roi) =
                prepare(img, preprocess).map_err(|e| TrainError::Data(format!("{}: {e}", record.id)))?;
            images.push(prepared);
            rois.push(roi);
        }
        Ok(Self {
            manifest,
            images,
            rois,
            preprocess: preprocess.clone(),
        })
    }

    /// Builds a throwaway manifest for labeled in-memory images (ids `img_00000`, ...).
    pub fn from_labeled(
        raw: Vec<ImageTensor>,
        labels: &[usize],
        num_classes: usize,
        preprocess: &PreprocessConfig,
    ) -> Result<Self, TrainError> {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| ImageRecord {
                id: format!("img_{i:05}"),
                path: format!("img_{i:05}.png"),
                label,
                fold: None,
            })
            .collect();
        let manifest = DatasetManifest::new(records, num_classes, ".").map_err(|e| TrainError::Data(e.to_string()))?;
        Self::from_images(manifest, raw, preprocess)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn label(&self, index: usize) -> usize {
        self.manifest.records[index].label
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    /// Normalized batch for `indices`. With `augment_key = Some((seed, epoch))`
    /// each image is augmented using its own rng stream derived from the seed,
    /// epoch and record index, so batch composition does not affect the result.
    pub fn batch(&self, indices: &[usize], augment_key: Option<(u64, usize)>) -> Result<FeatureMap, TrainError> {
        let spec = self.preprocess.augmentation(0);
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = match augment_key {
                Some((seed, epoch)) => {
                    let mut rng = augmentation_rng(seed, epoch, i);
                    augment(&self.images[i], &spec, &mut rng)
                }
                None => self.images[i].clone(),
            };
            out.push(normalize(&img, &self.preprocess.normalization).map_err(|e| TrainError::Data(e.to_string()))?);
        }
        Ok(FeatureMap::from_images(&out))
    }
}

pub(crate) fn augmentation_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | index as u64);
    rng
}
