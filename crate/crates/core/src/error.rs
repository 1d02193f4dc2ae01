use thiserror::Error;

/// Everything that can go wrong between reading a config and writing outputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },
    #[error("{what} is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { what: String, asymmetry: f64 },
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{matrix} is singular at node {node} (t = {t}, condition number {condition:e})")]
    Singular {
        matrix: String,
        node: usize,
        t: f64,
        condition: f64,
    },
    #[error("non-finite value in {what} at node {node} (t = {t})")]
    Divergence { what: String, node: usize, t: f64 },
    #[error("well-posedness violated: {0}")]
    WellPosedness(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Divergence { .. })
    }

    /// Process exit status used by the command line tool.
    pub fn exit_code(&self) -> u8 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
