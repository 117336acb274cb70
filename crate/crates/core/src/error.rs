use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("row {row}: non-numeric value {value:?} in numeric column {column:?}")]
    NonNumeric {
        row: u64,
        column: String,
        value: String,
    },

    #[error("label column {0} not found")]
    MissingLabelColumn(String),

    #[error("data has a single class; at least two distinct labels are required")]
    SingleClass,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("k = {k} exceeds the number of indexed points ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("class {class} has {count} samples, fewer than the {folds} folds requested")]
    ClassTooSmall {
        class: usize,
        count: usize,
        folds: usize,
    },

    #[error("class {0} is absent from the true labels; its recall is undefined")]
    MissingClass(usize),

    #[error("all {0} bagging rounds drew an empty subsample")]
    AllRoundsEmpty(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("model container: {0}")]
    Container(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by the input data rather than by parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::NonNumeric { .. }
                | Error::MissingLabelColumn(_)
                | Error::SingleClass
                | Error::Empty(_)
                | Error::ClassTooSmall { .. }
                | Error::MissingClass(_)
                | Error::Dimension { .. }
                | Error::Container(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
