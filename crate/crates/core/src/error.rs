use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("states live on different grids or carry different epsilon")]
    GridMismatch,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("unsupported sphere quadrature order {0} (must be odd and at least 1)")]
    UnsupportedOrder(usize),

    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("cos(theta) = {0} lies outside [-1, 1]")]
    CosineOutOfRange(f64),

    #[error("direction is not a unit vector (|x| = {0})")]
    NotUnitVector(f64),

    #[error("value {value} at node {node} violates 0 <= f <= {bound}")]
    BoundViolation { node: usize, value: f64, bound: f64 },

    #[error("non-finite collision integrand at node {0}")]
    NonFiniteIntegrand(usize),

    #[error("singular Gram matrix in conservation projection")]
    SingularGram,

    #[error("saturation threshold exceeded: epsilon = {epsilon} but epsilon_sat = {epsilon_sat}")]
    SaturationExceeded { epsilon: f64, epsilon_sat: f64 },

    #[error("Newton iteration stagnated after {iterations} steps (residual {residual:e})")]
    NewtonStagnation { iterations: usize, residual: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time step collapsed below dt_min at t = {time}: node {node} reached {value}")]
    StepFailure { time: f64, node: usize, value: f64 },

    #[error("Picard iteration diverges (contraction ratio {ratio:.3} >= 1); reduce the horizon")]
    PicardDivergence { ratio: f64 },

    #[error("moments of the two arguments do not match: {0}")]
    MomentMismatch(String),

    #[error("not enough samples: {0}")]
    InsufficientData(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
