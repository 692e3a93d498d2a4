use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileMissing(PathBuf),

    #[error("failed to decode {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("dimension mismatch: {what} ({left_w}x{left_h} vs {right_w}x{right_h})")]
    DimensionMismatch {
        what: &'static str,
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("unsupported bit depth in {}: only 8-bit images are accepted", .0.display())]
    UnsupportedBitDepth(PathBuf),

    #[error("image too small: {width}x{height} cannot hold a {size}x{size} patch")]
    ImageTooSmall { width: usize, height: usize, size: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pyramid with {levels} levels is too deep for a {width}x{height} image")]
    PyramidTooDeep { levels: usize, width: usize, height: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileMissing(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FileMissing(_) => 3,
            Error::Decode { .. } => 4,
            Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => 5,
            Error::UnsupportedBitDepth(_) => 6,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::ChecksumMismatch { .. }
            | Error::Malformed(_) => 7,
            Error::InvalidArgument(_)
            | Error::ImageTooSmall { .. }
            | Error::PyramidTooDeep { .. } => 8,
            Error::EmptyDataset(_) => 9,
            Error::NonFinite(_) => 10,
            Error::Io { .. } => 11,
        }
    }
}

/// Exit code table printed by `--help`.
pub const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error
  3   input file missing
  4   image decode failure
  5   dimension or shape mismatch
  6   unsupported bit depth
  7   invalid model/optimizer file (magic, version, truncation, checksum)
  8   invalid argument or configuration
  9   empty dataset or no matched files
  10  non-finite value during computation
  11  other I/O failure";
