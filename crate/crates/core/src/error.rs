use crate::class::ClassTag;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("voxel index {index} out of range for a grid of {len} voxels")]
    VoxelOutOfRange { index: usize, len: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("Compton kinematics undefined for e0 = {e0} keV, e1 = {e1} keV")]
    ComptonDomain { e0: f64, e1: f64 },

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("event of class {found} passed where class {expected} was expected")]
    ClassMismatch { expected: ClassTag, found: ClassTag },

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("empty class subset")]
    EmptySubset,

    #[error("no events to reconstruct from")]
    NoEvents,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("class {0} missing from sensitivity map")]
    MissingClass(ClassTag),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (configuration, flags, file
    /// contents) as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
