use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{column}` not found in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("{0} contains no data rows")]
    EmptyFile(PathBuf),

    #[error("dataset `{0}` contains a single class and cannot be balanced")]
    SingleClassDataset(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("both classes must be present")]
    SingleClass,

    #[error("every paired difference is zero")]
    AllZeroDifferences,

    #[error("project `{0}` is not in the manifest")]
    UnknownProject(String),

    #[error("test project `{0}` is also the distillation project")]
    TestEqualsDistillation(String),

    #[error("reports disagree on {0}")]
    RepeatMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn { .. } => "missing_column",
            Error::NonNumericCell { .. } => "non_numeric_cell",
            Error::EmptyFile(_) => "empty_file",
            Error::SingleClassDataset(_) => "single_class_dataset",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroVector => "zero_vector",
            Error::EmptyInput(_) => "empty_input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::SingleClass => "single_class",
            Error::AllZeroDifferences => "all_zero_differences",
            Error::UnknownProject(_) => "unknown_project",
            Error::TestEqualsDistillation(_) => "test_equals_distillation",
            Error::RepeatMismatch(_) => "repeat_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
