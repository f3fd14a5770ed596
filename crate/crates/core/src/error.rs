//! One error enum for the whole crate; the variant encodes the failure
//! class so callers (notably the CLI) can map it to an exit code.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor rank or dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid configuration value or malformed config input.
    #[error("config error: {0}")]
    Config(String),
    /// An API contract was violated (missing condition, wrong call order).
    #[error("contract error: {0}")]
    Contract(String),
    /// Operation sequencing error (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// NaN/Inf or other numerical failure.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A frame's attention window contains no audio tokens.
    #[error("coverage error: {0}")]
    Coverage(String),
    /// Malformed on-disk artifact (checkpoint, frame stack, manifest).
    #[error("format error: {0}")]
    Format(String),
    /// Corpus-level inconsistency (duplicate ids, missing clips).
    #[error("corpus error: {0}")]
    Corpus(String),
    /// A required input artifact is missing.
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
