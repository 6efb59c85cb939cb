//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model evaluation, linear algebra, selection drivers and
/// report writing.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was applied to a value in the wrong state
    /// (e.g. normalizing an already-normalized matrix).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A model evaluation produced a non-finite state during simulation.
    #[error("integration failure at step {step}: state component {state} is non-finite")]
    IntegrationFailure { step: usize, state: usize },

    /// A finite-difference Jacobian column could not be evaluated.
    #[error("jacobian evaluation failed for column {column}: {detail}")]
    JacobianFailure { column: usize, detail: String },

    /// A model was evaluated outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear-algebra routine failed to produce a usable result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The starting sensor set does not render the state observable, so
    /// backward elimination cannot begin.
    #[error("initial sensor set is not observable (degree 0); add sensors or extend the horizon")]
    NotObservable,

    /// A run configuration could not be parsed or validated.
    #[error("configuration error: {0}")]
    Config(String),

    /// Report files could not be written.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::NotObservable => 3,
            _ => 4,
        }
    }
}
