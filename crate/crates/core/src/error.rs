use thiserror::Error;

use crate::bus::MalformedMessage;
use crate::isa::{IsaError, ParseError};
use crate::thread::InvalidTransition;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("watchdog: no termination within {0} cycles")]
    Watchdog(u64),
    #[error("pc {pc}: address {addr} out of range")]
    AddressOutOfRange { pc: usize, addr: i64 },
    #[error("invariant violated at cycle {cycle}: {detail}")]
    Invariant { cycle: u64, detail: String },
    #[error(transparent)]
    Transition(#[from] InvalidTransition),
    #[error(transparent)]
    Bus(#[from] MalformedMessage),
    #[error("speculative result differs from sequential: {0}")]
    EquivalenceMismatch(String),
}

impl SimError {
    /// Equivalence and invariant failures, as opposed to bad input.
    pub fn is_model_failure(&self) -> bool {
        matches!(
            self,
            SimError::Invariant { .. } | SimError::Transition(_) | SimError::Bus(_) | SimError::EquivalenceMismatch(_)
        )
    }
}
