use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ray transform is singular (|det| = {det:e}); splat is viewed edge-on")]
    SingularTransform { det: f64 },

    #[error("ray does not intersect the splat in front of the camera")]
    NoIntersection,

    #[error("invalid texture dims {tu}x{tv} (allowed 1..={max})")]
    InvalidDims { tu: usize, tv: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tape was recorded for scene version {tape}, scene is at version {scene}")]
    StaleTape { tape: u64, scene: u64 },

    #[error("non-finite gradient for splat {splat}")]
    NonFiniteGradient { splat: usize },

    #[error("non-finite gradient at step {step} for splat {splat}")]
    NonFiniteGradientAtStep { step: u64, splat: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid scene file: {0}")]
    InvalidScene(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

impl Error {
    /// True for errors that come from the filesystem rather than from content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
