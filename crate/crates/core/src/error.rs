use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("density is not normalized: integral = {integral:.12e}")]
    Normalization { integral: f64 },

    #[error("{floored} of {total} nodes are below the density floor")]
    FlooredNodes { floored: usize, total: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that originate in numerics rather than in user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Integration { .. }
                | Error::FlooredNodes { .. }
                | Error::Domain(_)
        )
    }
}
