use std::fmt;

/// Which pool a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Generated,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Real => f.write_str("real"),
            Origin::Generated => f.write_str("generated"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix data contains NaN or infinite values")]
    NonFinite,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },
    #[error("matrix is singular (pivot column {index})")]
    SingularMatrix { index: usize },
    #[error("matrix is numerically rank deficient")]
    RankDeficient,
    #[error("Newton iteration did not converge (orthogonality residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("MinMax requires an even width, got {0}")]
    OddWidth(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample set is empty")]
    EmptySet,
    #[error("{0} pool is empty but the batch mix requires it")]
    EmptyPool(Origin),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
