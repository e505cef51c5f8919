use thiserror::Error;
use wgflow_core::FlowError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error(transparent)]
    Flow(#[from] FlowError),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("episode already finished")]
    EpisodeOver,

    #[error("replay buffer holds {have} transitions, {need} requested")]
    NotReady { have: usize, need: usize },
}

pub type Result<T, E = RlError> = std::result::Result<T, E>;
