use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("block capacity exceeded: {unallocated} blocks could not be allocated")]
    CapacityExceeded { unallocated: usize },
    #[error("grid has no allocated blocks")]
    EmptyGrid,
    #[error("frame {frame} has no landmark observations")]
    NoObservations { frame: usize },
    #[error("optimization diverged at step {step}")]
    Diverged { step: usize, trace: Vec<f64> },
    #[error("ray has no valid samples")]
    DegenerateRay,
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("no zero crossing found")]
    EmptySurface,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point set is empty")]
    EmptySet,
    #[error("missing file {}", .path.display())]
    MissingFile { path: PathBuf },
    #[error("shape mismatch in {}: expected {expected} values, found {got}", .path.display())]
    ShapeMismatch { path: PathBuf, expected: usize, got: usize },
    #[error("bad pose for frame {frame}: {reason}")]
    BadPose { frame: usize, reason: String },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("bad config: {0}")]
    Config(String),
    #[error("malformed {}: {reason}", .path.display())]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
