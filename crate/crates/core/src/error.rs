use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate interview id `{0}`")]
    DuplicateInterview(String),

    #[error("duplicate unit ({interview_id}, qa {qa_index})")]
    DuplicateUnit { interview_id: String, qa_index: usize },

    #[error("annotation references missing unit ({interview_id}, qa {qa_index})")]
    DanglingAnnotation { interview_id: String, qa_index: usize },

    #[error("unknown code `{0}`")]
    UnknownCode(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid value at line {line}, column `{column}`: {message}")]
    InvalidValue {
        line: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("holdout size {requested} exceeds the {available} gold interviews available")]
    HoldoutTooLarge { requested: usize, available: usize },

    #[error("empty vocabulary after document-frequency filtering")]
    EmptyVocabulary,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no embedding for unit ({interview_id}, qa {qa_index})")]
    MissingEmbedding { interview_id: String, qa_index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty search space")]
    EmptySearchSpace,

    #[error("no overlapping cells between sources for code `{0}`")]
    EmptyIntersection(String),

    #[error("rank-deficient design matrix (condition number {condition:.3e}); collinear columns: {columns:?}")]
    RankDeficient { condition: f64, columns: Vec<String> },

    #[error("too few observations: {n} for {k} regressors")]
    TooFewObservations { n: usize, k: usize },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation-class errors map to CLI exit code 1, the rest to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateInterview(_)
                | Error::DuplicateUnit { .. }
                | Error::DanglingAnnotation { .. }
                | Error::UnknownCode(_)
                | Error::MissingColumn(_)
                | Error::InvalidValue { .. }
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::HoldoutTooLarge { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateInterview(_) => "duplicate_interview",
            Error::DuplicateUnit { .. } => "duplicate_unit",
            Error::DanglingAnnotation { .. } => "dangling_annotation",
            Error::UnknownCode(_) => "unknown_code",
            Error::MissingColumn(_) => "missing_column",
            Error::InvalidValue { .. } => "invalid_value",
            Error::Invalid(_) => "invalid",
            Error::HoldoutTooLarge { .. } => "holdout_too_large",
            Error::EmptyVocabulary => "empty_vocabulary",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::Config(_) => "config",
            Error::EmptySearchSpace => "empty_search_space",
            Error::EmptyIntersection(_) => "empty_intersection",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::TooFewObservations { .. } => "too_few_observations",
            Error::Provider(_) => "provider",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
