use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("measures live on different state grids")]
    GridMismatch,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("empty family of measures")]
    EmptyFamily,

    #[error("envelope constant {constant} is below psi(0) = {psi_zero}")]
    EnvelopeConstant { constant: f64, psi_zero: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("measure pair {index} is not ordered by first-order stochastic dominance")]
    NotComparable { index: usize },

    #[error(
        "CFL condition violated: dt = {dt} exceeds the admissible step {required_dt} \
         (use at least {required_steps} time steps)"
    )]
    Cfl {
        dt: f64,
        required_dt: f64,
        required_steps: usize,
    },

    #[error("mean-field dynamics need a measure flow to build the chain")]
    MissingFlow,

    #[error("instance too large for exhaustive enumeration: {0}")]
    InstanceTooLarge(String),

    #[error(
        "monotonicity violated at iteration {iteration}: iterate is not ordered against its \
         predecessor (max CDF excess {excess:e} at time index {time_index})"
    )]
    MonotonicityViolated {
        iteration: usize,
        time_index: usize,
        excess: f64,
    },

    #[error("Riccati fixed point did not converge in {iterations} iterations (last gap {gap:e})")]
    RiccatiNotConverged { iterations: usize, gap: f64 },

    #[error("control clipping active at t = {t}, x = {x}: unconstrained control {control} leaves U")]
    ClippingActive { t: f64, x: f64, control: f64 },

    #[error("unsupported for common noise: {0}")]
    UnsupportedCommonNoise(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Malformed(String),
}
