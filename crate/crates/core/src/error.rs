//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed manifest row; `line` is 1-based and counts the header.
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A manifest invariant is violated (e.g. a distorted record whose
    /// reference id has no pristine row).
    #[error("manifest integrity error: {0}")]
    Integrity(String),

    /// All scores identical; the affine score map is undefined.
    #[error("degenerate score range: {0}")]
    DegenerateRange(String),

    /// Invalid configuration value (split ratios, distortion level, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Image too small for the requested patch grid.
    #[error("size error: {0}")]
    Size(String),

    /// Triplet batch cannot be formed from the manifest.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Too few samples for a statistic (std needs at least two).
    #[error("sample-size error: {0}")]
    SampleSize(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Metric undefined on the given input (constant vectors etc.).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Checkpoint file corrupt or from an incompatible version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Tensor shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
