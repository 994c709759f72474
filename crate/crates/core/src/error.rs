use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("journey {patient_id} rejected: {reason}")]
    RejectedJourney { patient_id: String, reason: String },

    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),

    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios(Vec<f64>),

    #[error("cannot fit row caps on an empty corpus")]
    EmptyCorpus,

    #[error("vocabulary has no entries for channel {0}")]
    VocabularyMissing(String),

    #[error("encoder config is not fitted: {0}")]
    ConfigUnfitted(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("masking plan selects no positions")]
    EmptyPlan,

    #[error("value outside of domain: {0}")]
    DomainError(String),

    #[error("cohort is empty: {0}")]
    EmptyCohort(String),

    #[error("no journey contains a code matching the adaptation filter")]
    NoMaskableCodes,

    #[error("no qualifying index event for patient {0}")]
    WindowEmpty(String),

    #[error("labels contain a single class; metric undefined")]
    DegenerateLabels,

    #[error("background set is empty")]
    EmptyBackground,

    #[error("layer index {index} out of range for {layers} layers")]
    BadLayerIndex { index: usize, layers: usize },

    #[error("unknown cluster {0}")]
    UnknownCluster(i64),

    #[error("{path}: record {record}: {message}")]
    Data {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("invalid setting `{key}`: {message}")]
    Usage { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
