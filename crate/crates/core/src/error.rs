use std::path::PathBuf;

use thiserror::Error;

/// Coarse grouping used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numeric => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("parse error in {context}: {detail}")]
    Parse { context: String, detail: String },
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {dataset}: {source}")]
    Dataset {
        dataset: String,
        #[source]
        source: Box<CoreError>,
    },
    #[error(transparent)]
    Autodiff(#[from] musegnn_autodiff::AdError),
}

impl CoreError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CoreError::Config(_) => ErrorCategory::Config,
            CoreError::Data(_) | CoreError::Parse { .. } | CoreError::Io { .. } => {
                ErrorCategory::Data
            }
            CoreError::Numeric(_) | CoreError::Autodiff(_) => ErrorCategory::Numeric,
            CoreError::Dataset { source, .. } => source.category(),
        }
    }

    pub fn parse(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Parse {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the dataset id to an error raised while processing it.
    pub fn in_dataset(self, dataset: &str) -> Self {
        CoreError::Dataset {
            dataset: dataset.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
