use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("unknown parameter `{0}`")]
    UnknownKey(String),

    #[error("geometry infeasible: {0}")]
    Geometry(String),

    #[error("energy demand {demand:.3e} W exceeds harvester saturation {saturation:.3e} W for user {user}")]
    HarvestDomain { user: usize, demand: f64, saturation: f64 },

    #[error("infeasible in slot {slot}, user {user}: {reason}")]
    Infeasible { slot: usize, user: usize, reason: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
