use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no node carries weight above the activity threshold")]
    EmptyActiveSet,

    #[error("row {row} of the regularized matrix is not strictly diagonally dominant (diagonal {diagonal:e}, off-diagonal sum {off_diagonal:e})")]
    DominanceViolation { row: usize, diagonal: f64, off_diagonal: f64 },

    #[error("linear solve failed: {0}")]
    SingularSolve(String),

    #[error("unknown initial condition `{0}`")]
    UnknownInitialCondition(String),

    #[error("potential has no finite gradient bound on an unbounded domain")]
    UnboundedGradient,

    #[error("explicit integrator unstable: dt = {dt} exceeds {limit}")]
    Stability { dt: f64, limit: f64 },

    #[error("mass collapsed to {fraction:.3} of its initial value at t = {time}")]
    MassCollapse { time: f64, fraction: f64 },

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("measure is empty")]
    EmptyMeasure,

    #[error("measures carry different mass ({0} vs {1})")]
    MassMismatch(f64, f64),
}
