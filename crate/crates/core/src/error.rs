use thiserror::Error;

/// Errors raised by frame construction, analysis and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid lattice: steps a={a}, b={b} must divide n={n}")]
    InvalidLattice { n: usize, a: usize, b: usize },

    #[error("coefficient field was computed on a different lattice")]
    LatticeMismatch,

    #[error("not a frame: lower bound {lower:e} is negligible against upper bound {upper:e}")]
    NotAFrame { lower: f64, upper: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("term budget {k} outside 0..={max}")]
    OutOfRange { k: usize, max: usize },

    #[error("reference operator has zero norm")]
    ZeroReference,

    #[error("sequence increases at position {index}")]
    NotMonotone { index: usize },

    #[error("all {trials} white-noise probes were annihilated by the reference operator")]
    DegenerateProbe { trials: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed operator file at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
