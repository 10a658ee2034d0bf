//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose shapes do not match the grid they claim to live on.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A time-stepping loop produced a non-finite value.
    #[error("numerical blow-up at time index {time_index}: {context}")]
    Blowup { time_index: usize, context: String },

    /// Total mass drifted beyond tolerance before renormalization.
    #[error("mass conservation violated at time index {time_index}: drift {drift:e}")]
    Conservation { time_index: usize, drift: f64 },

    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The initial-probability equation has no sign change on [0, 1].
    #[error("no root in [0, 1]: g(0) = {g_at_zero:e} and g(1) = {g_at_one:e} share a sign")]
    NoRoot { g_at_zero: f64, g_at_one: f64 },

    /// The probability ODE produced a non-finite stage value.
    #[error("ODE integration failure at time index {time_index}: {context}")]
    Integration { time_index: usize, context: String },

    /// Configuration parse or constraint failure; the message names the key.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
