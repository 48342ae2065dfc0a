use thiserror::Error;

use crate::environment::EnvError;
use crate::linalg::LinalgError;
use crate::privatizer::PrivacyError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("observation out of bounds: {0}")]
    BoundViolation(String),
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
}
