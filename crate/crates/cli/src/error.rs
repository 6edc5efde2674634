use aae_core::dataset::DatasetError;
use aae_core::evaluation::EvalError;
use aae_core::image::ImageIoError;
use aae_core::model::ModelError;
use aae_core::preprocess::PreprocessError;
use aae_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidSynthConfig(_) | DatasetError::InvalidFoldCount(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Shape(_) | ModelError::CheckpointMismatch(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::Shape(_) => CliError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Fold { fold, source } => match CliError::from(*source) {
                CliError::Config(m) => CliError::Config(format!("fold {fold}: {m}")),
                CliError::Data(m) => CliError::Data(format!("fold {fold}: {m}")),
                CliError::Divergence(m) => CliError::Divergence(format!("fold {fold}: {m}")),
            },
            EvalError::Train(t) => (*t).into(),
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
