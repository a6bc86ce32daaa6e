use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("relevance vector sums to zero; merit targets are undefined")]
    ZeroRelevance,

    #[error("point sum {sum} differs from exposure total {total}")]
    NotOnSumHyperplane { sum: f64, total: f64 },

    #[error("point is not in the expohedron (violated prefix levels {violated:?})")]
    NotInPolytope { violated: Vec<usize> },

    #[error("direction has (near) zero norm")]
    ZeroDirection,

    #[error("direction sums to {0}, not zero")]
    OffHyperplaneDirection(f64),

    #[error("exposure vector is constant; circumscribed sphere has zero radius")]
    DegenerateSphere,

    #[error("cannot project the sphere center")]
    CenterProjection,

    #[error("matrix is not bistochastic: {0}")]
    NotBistochastic(String),

    #[error("no perfect matching on the residual support (residual mass {residual})")]
    MatchingNotFound { residual: f64 },

    #[error("distribution has no atoms")]
    EmptyDistribution,

    #[error("solver stalled: {0}")]
    SolverStalled(String),

    #[error("utility {requested} is not attainable (max {max})")]
    UtilityInfeasible { requested: f64, max: f64 },

    #[error("facet walk exceeded {limit} iterations; visited faces: {visited:?}")]
    NonTermination {
        limit: usize,
        visited: Vec<Vec<usize>>,
    },

    #[error("geodesic endpoints are coincident or antipodal")]
    DegenerateArc,

    #[error("front is empty")]
    EmptyFront,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: group feature {feature} missing")]
    MissingFeature { line: usize, feature: u32 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("io: {0}")]
    Io(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
