use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid coefficient: {0}")]
    Coefficient(String),

    #[error("time index {index} out of range (mesh has {len} nodes)")]
    TimeIndex { index: usize, len: usize },

    #[error("step matrix is singular at time step {step}")]
    SingularStep { step: usize },

    #[error("newton iteration failed at time step {step} after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("solve for source {index} failed: {source}")]
    Source {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("quadrature did not converge: last extrapolants {last:e} and {previous:e}")]
    Quadrature { last: f64, previous: f64 },

    #[error("potential aliases at omega slot {midpoint}: h·|A| exceeds pi")]
    BranchAmbiguity { midpoint: usize },

    #[error("recovery stage {stage} failed: {reason}")]
    Stage { stage: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(String),

    #[error("bad container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
