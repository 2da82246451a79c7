use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative entry in a matrix required to be nonnegative: {0}")]
    NegativeEntry(String),

    #[error("quadrature self-check failed: {0}")]
    Quadrature(String),

    #[error("decay-rate bracket exceeded |g| <= {cap}: {detail}")]
    BracketOverflow { cap: f64, detail: String },

    #[error("invalid model: {0}")]
    Model(String),
}
