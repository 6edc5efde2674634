use std::path::Path;

use aae_core::dataset::generate_synthetic;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct GenDataArgs {
    pub count: Option<usize>,
    pub proportions: Option<Vec<f64>>,
    pub image_size: Option<usize>,
}

pub fn run(mut config: RunConfig, args: GenDataArgs, out: &Path) -> Result<(), CliError> {
    if let Some(count) = args.count {
        config.data.count = count;
    }
    if let Some(p) = args.proportions {
        config.synth.class_proportions = p;
    }
    if let Some(side) = args.image_size {
        config.synth.image_size = side;
    }
    config
        .synth
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = generate_synthetic(&config.synth, config.data.count, out)?;
    log::info!(
        "wrote {} images to {} (class counts {:?})",
        manifest.len(),
        out.display(),
        manifest.class_counts
    );
    Ok(())
}
