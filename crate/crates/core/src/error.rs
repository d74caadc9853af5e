use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("requested density cannot be packed at the minimum spacing: {0}")]
    InfeasibleDensity(String),
    #[error("dimension mismatch: expected {expected}D, got {actual}D")]
    DimMismatch { expected: usize, actual: usize },
    #[error("particle {0} has too few neighbors to build a descriptor")]
    TooFewNeighbors(usize),
    #[error("no displacement samples to grid")]
    NoSamples,
    #[error("screened-Poisson solve did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("ghost removal emptied the {0} particle set")]
    EmptyAfterRemoval(&'static str),
    #[error("no particles matched")]
    NoMatches,
    #[error("re-detection on the warped image found only {0} particles")]
    DetectionCollapse(usize),
    #[error("sequence of {0} frames cannot be paired in double-frame mode")]
    OddFrameCount(usize),
    #[error("grid needs at least 3 nodes per axis, got {0:?}")]
    GridTooSmall([usize; 3]),
    #[error("deformation gradient is singular (det = {0:e})")]
    SingularF(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InfeasibleDensity(_) => "infeasible_density",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::TooFewNeighbors(_) => "too_few_neighbors",
            Error::NoSamples => "no_samples",
            Error::SolverDiverged { .. } => "solver_diverged",
            Error::EmptyAfterRemoval(_) => "empty_after_removal",
            Error::NoMatches => "no_matches",
            Error::DetectionCollapse(_) => "detection_collapse",
            Error::OddFrameCount(_) => "odd_frame_count",
            Error::GridTooSmall(_) => "grid_too_small",
            Error::SingularF(_) => "singular_f",
            Error::InvalidConfig(_) => "config_invalid",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
        }
    }
}
