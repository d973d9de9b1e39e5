//! Build, verify, code and export Markov families from a JSON config.

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod code;
pub mod config;
pub mod export;
pub mod pipeline;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("parameter violation [{stage}]: {message}")]
    Parameter { stage: &'static str, message: String },
    #[error("construction failed [{stage}]: {message}")]
    Construction { stage: &'static str, message: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Verification(_) => 1,
            Self::Parameter { .. } => 2,
            Self::Construction { .. } | Self::Input(_) => 3,
        }
    }
}
