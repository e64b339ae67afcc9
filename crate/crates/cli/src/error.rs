use std::process::ExitCode;

use bev2ego::pipeline::PipelineError;
use bev2ego::scene::SceneError;
use bev2ego::services::ServiceError;

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    /// The run finished but more scenes failed than allowed.
    #[error("partial failure: {0}")]
    Partial(String),
    #[error("service unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Other(_) => 1,
            CliError::Partial(_) => 2,
            CliError::Unreachable(_) => 3,
        })
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }
}

fn is_unreachable(e: &ServiceError) -> bool {
    matches!(e, ServiceError::Unavailable(_) | ServiceError::Timeout(_))
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        if is_unreachable(&e) {
            CliError::Unreachable(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Service { source, .. } if is_unreachable(source) => CliError::Unreachable(e.to_string()),
            PipelineError::Config(_) | PipelineError::Scene(_) | PipelineError::Metrics(_) => CliError::Config(e.to_string()),
            _ => CliError::Other(e.into()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}
