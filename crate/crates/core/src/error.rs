use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at cell {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("refuge value {value} at cell {index} is outside [0, 1]")]
    RefugeOutOfRange { index: usize, value: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("potential must be strictly positive (min = {min})")]
    NonPositivePotential { min: f64 },

    #[error("conductivity must be strictly positive (min = {min})")]
    NonPositiveConductivity { min: f64 },

    #[error("tridiagonal solver breakdown at row {row}")]
    SolverBreakdown { row: usize },

    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("m = {m} <= 0: refuges cannot improve the harvest, optimization refused")]
    TrivialRegime { m: f64 },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("complex root (discriminant {discriminant})")]
    ComplexRoot { discriminant: f64 },

    #[error("decay-rate fit failed: {0}")]
    DecayFit(String),

    #[error("perturbation amplitude {eps} leaves the admissible box")]
    InfeasiblePerturbation { eps: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
