use std::path::PathBuf;

use saddlescape_core::center_stable::CenterStableError;
use saddlescape_core::conditions::ConditionError;
use saddlescape_core::dynamics::DynamicsError;
use saddlescape_core::functions::FunctionError;
use saddlescape_core::geometry::GeometryError;
use saddlescape_core::sgd::SgdError;
use thiserror::Error;

use crate::config::ConfigErrors;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config:\n{0}")]
    Config(#[from] ConfigErrors),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sgd(#[from] SgdError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    CenterStable(#[from] CenterStableError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl LabError {
    /// 1 for problems with the request, 2 for failures while running it.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}
