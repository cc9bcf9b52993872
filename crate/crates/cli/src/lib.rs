//! Pipeline driver for the `corrdyn` command line tool.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use corrdyn::error::ErrorKind;
use thiserror::Error;

pub use config::RunConfig;
pub use manifest::Manifest;
pub use pipeline::{run_pipeline, PipelineFailure, Session, Stage};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: corrdyn::Error,
    },

    #[error("stage `{stage}` needs {} from an earlier stage", file.display())]
    MissingArtifact { stage: Stage, file: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Stage { source, .. } => match source.kind() {
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            CliError::Config(_) => None,
            CliError::Stage { stage, .. } | CliError::MissingArtifact { stage, .. } => Some(*stage),
        }
    }
}
