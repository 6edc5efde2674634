use std::fmt::Write;
use std::path::{Path, PathBuf};

use aae_core::dataset::{DatasetManifest, ImageRecord};
use aae_core::image::{save_mask_png, ImageTensor};
use aae_core::preprocess::{prepare, PreprocessConfig};

use super::{ensure_dir, resolve_manifest, write_file};
use crate::config::RunConfig;
use crate::error::CliError;

pub struct PreprocessArgs {
    pub manifest: Option<PathBuf>,
    pub save_roi: bool,
}

/// Crops every image to its segmented region and resizes it. Writes the prepared
/// images with a new manifest, `roi_report.csv`, and with `save_roi` the masks.
pub fn run(mut config: RunConfig, args: PreprocessArgs, out: &Path) -> Result<(), CliError> {
    let manifest = resolve_manifest(&mut config, args.manifest)?;
    let pp = PreprocessConfig { roi: true, ..config.preprocess.clone() };
    pp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(&out.join("images"))?;
    if args.save_roi {
        ensure_dir(&out.join("masks"))?;
    }

    let mut report = String::from("id,row_min,col_min,row_max,col_max,fallback_used,iterations\n");
    let mut records = Vec::with_capacity(manifest.len());
    let mut fallbacks = 0;
    for record in &manifest.records {
        let image = ImageTensor::load(&manifest.resolve(record))?;
        let (prepared, roi) = prepare(&image, &pp).map_err(|e| CliError::Data(format!("{}: {e}", record.id)))?;
        let roi = roi.expect("segmentation enabled");
        let b = roi.bbox;
        let _ = writeln!(
            report,
            "{},{},{},{},{},{},{}",
            record.id, b.row_min, b.col_min, b.row_max, b.col_max, roi.fallback_used, roi.iterations
        );
        fallbacks += usize::from(roi.fallback_used);
        let rel = format!("images/{}.png", record.id);
        prepared.save_png(&out.join(&rel))?;
        if args.save_roi {
            save_mask_png(&roi.mask, roi.height, roi.width, &out.join(format!("masks/{}.png", record.id)))?;
        }
        records.push(ImageRecord { path: rel, ..record.clone() });
    }
    write_file(&out.join("roi_report.csv"), &report)?;
    DatasetManifest::new(records, manifest.num_classes, out)?.save(&out.join("manifest.csv"))?;
    log::info!(
        "prepared {} images into {} ({fallbacks} fell back to the full frame)",
        manifest.len(),
        out.display()
    );
    Ok(())
}
