use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent sizes or settings supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),
    /// Out-of-domain input values.
    #[error("validation error: {0}")]
    Validation(String),
    /// A computation produced NaN/inf or a decomposition failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Validation(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}
