use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{family} expects {expected} raw parameters, got {got}")]
    ArityMismatch {
        family: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{family} copula does not support {op} in dimension {dim}")]
    UnsupportedDim {
        family: &'static str,
        op: &'static str,
        dim: usize,
    },
    #[error("non-finite intermediate near the unit-cube boundary in {0}")]
    Boundary(&'static str),
    #[error("correlation factor is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("function evaluation failed: {0}")]
    Evaluation(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("scored set must contain both classes")]
    SingleClass,
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("batch too small for moment estimation ({0} rows)")]
    DegenerateBatch(usize),
    #[error("modality {0} is absent in some rows but has no marginal model")]
    MissingGmm(usize),
    #[error("every modality is at risk of masking; at least one anchor modality is required")]
    AllModalitiesAtRisk,
    #[error("{file}:{line}: {msg}")]
    DataFormat {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence {
        epoch: usize,
        last_good: Option<Box<crate::model::Checkpoint>>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
