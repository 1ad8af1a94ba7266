//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("linear solve residual {residual:.3e} exceeds {limit:.3e}")]
    IllConditioned { residual: f64, limit: f64 },
    #[error("deterministic policy enumeration too large: {count} exceeds limit {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },
    #[error("singular regression: {0}")]
    SingularRegression(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("environment load error: {0}")]
    EnvironmentLoad(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
