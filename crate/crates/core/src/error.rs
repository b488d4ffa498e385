use thiserror::Error;

use crate::features::formula::FormulaError;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id `{0}` within one source")]
    DuplicateId(String),

    #[error("merge conflict for `{id}` field `{field}`: {left} vs {right}")]
    MergeConflict {
        id: String,
        field: String,
        left: f64,
        right: f64,
    },

    #[error(transparent)]
    Formula(#[from] FormulaError),

    #[error("record `{id}`: {message}")]
    Data { id: String, message: String },

    #[error("element {element} has no value for {property}")]
    MissingElementProperty { element: String, property: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate matrix")]
    DegenerateMatrix,

    #[error("zero raw range")]
    ZeroRawRange,

    #[error("r2 undefined: test targets have zero variance")]
    UndefinedR2,

    #[error("tree not SHAP-ready")]
    NotShapReady,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for configuration or validation problems, 2 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
