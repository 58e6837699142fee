use thiserror::Error;

/// Errors raised anywhere in the library. Each variant maps onto one of the
/// CLI exit-code classes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("domain error: {field} = {value}: {reason}")]
    Domain {
        field: String,
        value: f64,
        reason: String,
    },

    /// Matrix or vector blocks do not line up.
    #[error("dimension mismatch in {block}: expected {expected}, found {found}")]
    Dimension {
        block: String,
        expected: usize,
        found: usize,
    },

    /// A factorization or solve could not be completed reliably.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Input data violates a model invariant.
    #[error("data error at {row}: {reason}")]
    Data { row: String, reason: String },

    /// Malformed or unsupported configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A diagnostic cannot be computed for the supplied input.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// Wraps an error with the index of the replicate, chain or component that raised it.
    #[error("{context} {index}: {source}")]
    At {
        context: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, value: f64, reason: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            value,
            reason: reason.into(),
        }
    }

    pub(crate) fn dimension(block: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            block: block.into(),
            expected,
            found,
        }
    }

    pub(crate) fn data(row: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            row: row.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at(self, context: &'static str, index: usize) -> Self {
        Error::At {
            context,
            index,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping positional wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::At { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable class name.
    pub fn code(&self) -> &'static str {
        match self.root() {
            Error::Domain { .. } | Error::Config(_) => "config",
            Error::Dimension { .. } | Error::Data { .. } | Error::Io(_) => "data",
            Error::Numerical(_) | Error::Diagnostic(_) => "numerical",
            Error::At { .. } => unreachable!(),
        }
    }

    /// Process exit status: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "config" => 2,
            "data" => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
