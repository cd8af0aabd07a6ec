use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal length {0} must be even and at least 2")]
    Length(usize),

    #[error("coefficient lines differ in length ({approx} vs {detail})")]
    LengthMismatch { approx: usize, detail: usize },

    #[error("{width}x{height} is not divisible by 2^{levels}")]
    Dimension {
        width: usize,
        height: usize,
        levels: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported format (magic {0:?})")]
    UnsupportedFormat([u8; 4]),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("header invariant violated: {0}")]
    InvalidHeader(String),

    #[error("inconsistent stream: {0}")]
    Inconsistent(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("sample at output pixel ({x}, {y}) falls outside the decoded footprint")]
    Coverage { x: usize, y: usize },

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by the content of a file rather than by the caller.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader(_)
                | Error::UnsupportedFormat(_)
                | Error::UnsupportedVersion(_)
                | Error::InvalidHeader(_)
                | Error::Corrupt(_)
                | Error::Inconsistent(_)
                | Error::Image(_)
                | Error::Io(_)
                | Error::InvalidTrajectory(_)
        )
    }
}
