use thiserror::Error;

#[derive(Error, Debug)]
pub enum LtpError {
    #[error("duplicate item id `{0}` in ranked list")]
    DuplicateItem(String),
    #[error("both ranked lists are empty")]
    EmptyObservation,
    #[error("permutations are over different item sets (item `{0}`)")]
    MismatchedItems(String),
    #[error("no topic-map for item `{0}`")]
    MissingTopicMap(String),
    #[error("topic count mismatch: expected {expected}, found {found}")]
    TopicCountMismatch { expected: usize, found: usize },
    #[error("invalid topic-map for `{item}`: {reason}")]
    InvalidTopicMap { item: String, reason: String },
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LtpError>;

impl LtpError {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            LtpError::DuplicateItem(_) => "duplicate_item",
            LtpError::EmptyObservation => "empty_observation",
            LtpError::MismatchedItems(_) => "mismatched_items",
            LtpError::MissingTopicMap(_) => "missing_topic_map",
            LtpError::TopicCountMismatch { .. } => "topic_count_mismatch",
            LtpError::InvalidTopicMap { .. } => "invalid_topic_map",
            LtpError::EmptyVocabulary => "empty_vocabulary",
            LtpError::EmptyCorpus => "empty_corpus",
            LtpError::InvalidParameter(_) => "invalid_parameter",
            LtpError::NonFinite(_) => "non_finite",
            LtpError::Schema { .. } | LtpError::Json(_) => "schema_violation",
            LtpError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "file_not_found",
            LtpError::Io(_) => "io",
        }
    }
}
