use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel is not integrable on the domain: {0}")]
    NonIntegrableKernel(String),

    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),

    #[error("initial data leaks {boundary_mass:e} mass onto the grid boundary (limit {limit:e})")]
    TruncationViolation { boundary_mass: f64, limit: f64 },

    #[error("CFL condition violated: ratio {ratio} exceeds {limit}")]
    CflViolation { ratio: f64, limit: f64 },

    #[error("per-node mass drift {drift:e} at node {node} exceeds {limit:e}")]
    MassDrift { node: usize, drift: f64, limit: f64 },

    #[error("macroscopic solution blew up at t = {t}: |V| = {value}")]
    BlowupDetected { t: f64, value: f64 },

    #[error("kinetic snapshots missing: {0}")]
    MissingSnapshots(String),

    #[error("particle step unstable: dt * coupling rate = {ratio} exceeds {limit}")]
    StabilityViolation { ratio: f64, limit: f64 },

    #[error("spatial cell {0} holds no particles")]
    EmptyCell(usize),

    #[error("alpha0 must be positive, got {0}")]
    NonPositiveAlpha0(f64),

    #[error("residual is undefined on the outermost ring of the grid")]
    BoundaryOnly,

    #[error("Hopf-Cole mask is empty")]
    EmptyMask,

    #[error("initial envelopes are not ordered: {0}")]
    InitialOrderingViolated(String),

    #[error("rate fit needs at least 3 strictly positive pairs: {0}")]
    DegeneratePairs(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
