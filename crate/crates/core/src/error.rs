use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,
    #[error("time out of range: {0} is not in [0, 1]")]
    TimeOutOfRange(f64),
    #[error("degenerate depth: |z| = {0:e} is below 1e-8")]
    DegenerateDepth(f64),
    #[error("singular screen covariance")]
    SingularCovariance,
    #[error("offset table must have at least one entry")]
    EmptyTable,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("gradient blow-up in parameter group `{group}`")]
    GradientBlowUp { group: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("bad checkpoint magic: expected \"TOGS\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("image codec error: {0}")]
    Image(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn with_path(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn with_path(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
