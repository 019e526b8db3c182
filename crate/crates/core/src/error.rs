use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operation requires a simplex rate region")]
    UnsupportedRegion,

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid source model: {0}")]
    InvalidSource(String),

    #[error("initial workload is not admissible: {0}")]
    Init(String),

    #[error("no settling time within the supplied horizon")]
    NoSettlingTime,

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("bracket [{lo}, {hi}] does not contain the maximiser")]
    Bracket { lo: f64, hi: f64 },

    #[error("upper bound undefined for b inside [0,1)^2")]
    UpperBoundUndefined,

    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}
