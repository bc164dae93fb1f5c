//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Errors produced by the beam tracking library.
///
/// The variants distinguish caller mistakes (bad arguments, bad config)
/// from runtime failures (I/O, corrupt artifacts, diverging training) so
/// the CLI can map them to the right exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside its mathematical domain (e.g. an angle
    /// beyond +-pi/2 or a non-positive temperature).
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation was called in a way its contract forbids
    /// (mismatched lengths, empty inputs, missing prerequisites).
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration value or combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    /// Checkpoint file carries an unsupported format version.
    #[error("checkpoint version mismatch: file has {found}, supported is {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    /// Checkpoint was produced by a model config other than the one
    /// requesting the load.
    #[error("checkpoint config digest mismatch: file has {found}, requested config has {expected}")]
    CheckpointDigest { found: String, expected: String },

    /// Checkpoint payload ended before the named array was complete.
    #[error("checkpoint truncated while reading array `{array}`")]
    CheckpointTruncated { array: String },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    /// A chart could not be rendered.
    #[error("plot rendering failed: {0}")]
    Render(String),
}

impl Error {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 for caller mistakes, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Usage(_) | Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
