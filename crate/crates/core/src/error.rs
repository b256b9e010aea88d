use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("lifting order {alpha} out of range for length {n} (need 1 <= alpha < n)")]
    LiftOrder { alpha: usize, n: usize },

    #[error("rank {k} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange { k: usize, rows: usize, cols: usize },

    #[error("zero polynomial has no roots")]
    ZeroPolynomial,

    #[error("need at least {needed} roots, got {got}")]
    NotEnoughRoots { needed: usize, got: usize },

    #[error("model order {k} infeasible: {reason}")]
    Infeasible { k: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("operator is identically zero")]
    ZeroOperator,

    #[error("reflection amplitude is zero at element {element}, slot {slot}")]
    ZeroAmplitude { element: usize, slot: usize },

    #[error("scenario mismatch: {0}")]
    Scenario(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
