use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UpmiError>;

#[derive(Debug, Error)]
pub enum UpmiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("row {row}: missing subject id")]
    MissingId { row: usize },

    #[error("row {row}: duplicate subject id `{id}`")]
    DuplicateId { row: usize, id: String },

    #[error("row {row}: label `{value}` is not 0 or 1")]
    InvalidLabel { row: usize, value: String },

    #[error("row {row}, column `{column}`: `{value}` is not numeric")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: non-finite value `{value}`")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("subject `{id}` has label {t1} in T1 but {t2} in T2")]
    LabelConflict { id: String, t1: u8, t2: u8 },

    #[error("the two modality tables share no subject ids")]
    EmptyIntersection,

    #[error("only one class present ({0})")]
    SingleClass(String),

    #[error("feature selection left no features after the {stage} stage")]
    EmptySelection { stage: String },

    #[error("column mismatch: expected {expected:?}, found {found:?}")]
    ColumnMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("non-finite intermediate value in {0}")]
    NumericalFailure(String),

    #[error("class {class} has {count} subjects, fewer than the {folds} folds requested")]
    StratificationTooSmall { class: u8, count: usize, folds: usize },

    #[error("fold {outer}{}: {detail}", inner.map(|i| format!(" (inner {i})")).unwrap_or_default())]
    DegenerateFold {
        outer: usize,
        inner: Option<usize>,
        detail: String,
    },

    #[error("scenario {0}% is not in the allowed set")]
    InvalidScenario(u32),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario {scenario}%, fold {fold}: {source}")]
    FoldFailed {
        scenario: u32,
        fold: usize,
        #[source]
        source: Box<UpmiError>,
    },
}

impl UpmiError {
    /// Stable short name used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            UpmiError::Io { .. } => "io",
            UpmiError::Csv { .. } => "csv",
            UpmiError::Json(_) => "json",
            UpmiError::Schema(_) => "schema",
            UpmiError::MissingId { .. } => "missing_id",
            UpmiError::DuplicateId { .. } => "duplicate_id",
            UpmiError::InvalidLabel { .. } => "invalid_label",
            UpmiError::NonNumeric { .. } => "non_numeric",
            UpmiError::NonFinite { .. } => "non_finite",
            UpmiError::Shape(_) => "shape",
            UpmiError::LabelConflict { .. } => "label_conflict",
            UpmiError::EmptyIntersection => "empty_intersection",
            UpmiError::SingleClass(_) => "single_class",
            UpmiError::EmptySelection { .. } => "empty_selection",
            UpmiError::ColumnMismatch { .. } => "column_mismatch",
            UpmiError::NumericalFailure(_) => "numerical_failure",
            UpmiError::StratificationTooSmall { .. } => "stratification",
            UpmiError::DegenerateFold { .. } => "degenerate_fold",
            UpmiError::InvalidScenario(_) => "invalid_scenario",
            UpmiError::ZeroVariance(_) => "zero_variance",
            UpmiError::InvalidArgument(_) => "invalid_argument",
            UpmiError::Config(_) => "config",
            UpmiError::FoldFailed { .. } => "fold_failed",
        }
    }
}
