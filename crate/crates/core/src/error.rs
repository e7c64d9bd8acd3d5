use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, sizes).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty ROI `{0}`")]
    EmptyRoi(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),
    #[error("enumeration budget exceeded: {count} subsets > budget {budget}")]
    BudgetExceeded { count: u128, budget: u128 },
    #[error("{path}: {source}")]
    Path {
        path: String,
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_path(self, path: &std::path::Path) -> Error {
        Error::Path {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }
}

/// Returns `Error::Contract` with a formatted message unless the condition holds.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
