use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("price {price} outside no-arbitrage band ({lower}, {upper})")]
    BandViolation { price: f64, lower: f64, upper: f64 },

    #[error("call surface invariant violated at t={t}, K={strike}: {reason}")]
    Surface { t: f64, strike: f64, reason: String },

    #[error("level {value} outside strike span [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("insufficient samples: {got} samples for {needed} bins")]
    InsufficientSamples { got: usize, needed: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
