use thiserror::Error;

#[derive(Error, Debug)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular normal equations: {0}; use a ridge > 0")]
    Singular(String),
    #[error("non-finite value at time index {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("picard iteration diverged: {0}")]
    Divergence(String),
    #[error("internal consistency violated: {0}")]
    Consistency(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: expected {expected} bytes of payload, found {found}")]
    Length { expected: usize, found: usize },
    #[error("allocation of {0} elements failed")]
    Allocation(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn param(msg: impl Into<String>) -> LabError {
    LabError::Parameter(msg.into())
}

/// Allocates a zeroed buffer, reporting failure instead of aborting.
pub(crate) fn zeroed(len: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| LabError::Allocation(len))?;
    v.resize(len, 0.0);
    Ok(v)
}
