use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("row {row}: signal value required for threshold labeling is missing")]
    MissingSignal { row: usize },

    #[error("item `{0}` has no category assignment")]
    MissingCategory(String),

    #[error("window width must be positive")]
    InvalidWindowWidth,

    #[error("interaction at {ts} is newer than the window anchor {anchor}")]
    AnchorBeforeData { ts: i64, anchor: i64 },

    #[error("sample level {level} exceeds the {available} available windows")]
    LevelOutOfRange { level: usize, available: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("training diverged at epoch {epoch} (learning_rate={learning_rate}, embedding_dim={embedding_dim})")]
    Diverged {
        epoch: usize,
        learning_rate: f64,
        embedding_dim: usize,
    },

    #[error("every grid point diverged during hyperparameter search")]
    AllPointsDiverged,

    #[error("user {0} is not covered by the trained model")]
    ColdUser(u32),

    #[error("no candidate items remain for user {0} after exclusions")]
    NoCandidates(u32),

    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("recommendation list is empty")]
    EmptyRecommendation,

    #[error("segmentation needs at least 3 users, got {0}")]
    TooFewUsers(usize),

    #[error("user `{0}` has an empty positive profile")]
    EmptyProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid generator spec: {0}")]
    InvalidGeneratorSpec(String),

    #[error("unparseable timestamp `{0}`")]
    BadTimestamp(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
