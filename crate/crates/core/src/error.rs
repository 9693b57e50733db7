use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or configuration.
    Usage,
    /// Unreadable, malformed or unsuitable input data.
    Data,
    /// Numerical degeneracy or failure during fitting.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Input(_) | Error::Shape(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_) => {
                ErrorClass::Data
            }
            Error::Degenerate(_) | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Context { source, .. } => source.class(),
        }
    }

    /// Innermost error, skipping context labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Attach a context label to the error side of a `Result`.
pub trait ResultExt<T> {
    fn context<C: Into<String>>(self, context: C) -> Result<T>;
    fn with_context<C: Into<String>, F: FnOnce() -> C>(self, f: F) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn context<C: Into<String>>(self, context: C) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: context.into(),
            source: Box::new(e.into()),
        })
    }

    fn with_context<C: Into<String>, F: FnOnce() -> C>(self, f: F) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: f().into(),
            source: Box::new(e.into()),
        })
    }
}
