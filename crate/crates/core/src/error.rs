use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("target vector has zero norm")]
    ZeroTarget,

    #[error("column {index} has zero norm")]
    ZeroColumn { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dual point is infeasible: max |a_i^T theta| = {0}")]
    InfeasibleDual(f64),

    #[error("region has an empty interior")]
    EmptyInterior,

    #[error("region is degenerate: {0}")]
    DegenerateRegion(String),

    /// The sphere center ended up inside the half-space of a step region.
    /// Only possible when the previous dual point is not the exact projection.
    #[error("sphere center lies inside the step region (n^T q - c = {margin:e})")]
    CenterInsideRegion { margin: f64 },

    #[error("kept columns need {needed} bytes, above the cap of {cap} bytes")]
    MemoryCap { needed: usize, cap: usize },

    #[error("integrity violation: {0}")]
    Integrity(String),
}

impl Error {
    /// True for errors caused by bad files or unreadable input rather than numerics.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Format(_) | Error::Json(_))
    }
}
