use thiserror::Error;

/// Errors raised by the physical-layer models and the environment.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// A Gram matrix was singular or exceeded the condition-number cap.
    /// `columns` lists the columns participating in the near-dependency.
    #[error("singular system in {context} (condition {condition:.3e}); offending columns {columns:?}")]
    Singular {
        context: &'static str,
        condition: f64,
        columns: Vec<usize>,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
