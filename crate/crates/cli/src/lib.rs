//! Scene tooling around the splatting core: synthetic scene generation with
//! an independent analytic renderer, pseudo-label preparation, training,
//! rendering, and evaluation, all file-based.

pub mod bundle;
pub mod commands;
pub mod pngio;
pub mod synth;

use std::path::Path;

use semsplat_core::camera::CameraError;
use semsplat_core::checkpoint::CheckpointError;
use semsplat_core::eval::EvalError;
use semsplat_core::pseudolabel::PseudoError;
use semsplat_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn png(path: &Path, source: impl std::fmt::Display) -> Self {
        Self::Format(format!("{}: {}", path.display(), source))
    }

    /// Distinct exit codes per error class; 0 is success.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Camera(CameraError::MissingFile(_)) => 3,
            CliError::Format(_) | CliError::Camera(_) => 4,
            CliError::Shape(_) | CliError::Pseudo(_) | CliError::Eval(_) => 5,
            CliError::Train(_) => 6,
            CliError::Checkpoint(_) => 7,
        }
    }
}

