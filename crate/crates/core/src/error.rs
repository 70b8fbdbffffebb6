use thiserror::Error;

/// Errors raised by the sampling, guidance and metric routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, out-of-range indices, invalid specs.
    #[error("invalid input: {0}")]
    Input(String),
    /// A field was queried where it is undefined (point masses at t = 0 or sigma = 0).
    #[error("singular field query: {0}")]
    Singularity(String),
    /// Inconsistent guidance or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Training diverged or could not start.
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

pub(crate) fn ensure_same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(input(format!(
            "{what}: dimension mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}
