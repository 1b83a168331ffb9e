use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame index {k} out of range [-{k_max}, {k_max}]")]
    FrameOutOfRange { k: i64, k_max: i64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{0}")]
    InvalidConfiguration(String),

    #[error("operation requires at least {required} particles, got {got}")]
    TooFewParticles { required: usize, got: usize },

    #[error("operation requires at least {required} frames, got {got}")]
    TooFewFrames { required: usize, got: usize },

    #[error("operation implemented for d = 1 only (got d = {0})")]
    UnsupportedDimension(usize),

    #[error("geometry does not fit inside the admissible domain (scale {scale})")]
    GeometryOutOfDomain { scale: f64 },

    #[error("particle leaves the field of view at frame {k}: position ({x}, {y})")]
    OutOfField { k: i64, x: f64, y: f64 },

    #[error("trajectory exits [0,1] at frame {k}: position {x}")]
    TrajectoryOutOfBox { k: i64, x: f64 },

    #[error("node separation {separation} below the minimum {minimum} (system ill-conditioned, cond = {cond:.3e})")]
    SeparationViolation {
        separation: f64,
        minimum: f64,
        cond: f64,
    },

    #[error("non-finite value in measurements")]
    NonFiniteMeasurement,

    #[error("invalid solver parameter: {0}")]
    InvalidSolverParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
