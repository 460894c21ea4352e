use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {context} (expected {expected}, got {actual})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("operator is not Hermitian: max |A - A^†| = {deviation:e} exceeds {tol:e}")]
    NotHermitian { deviation: f64, tol: f64 },

    #[error("eigensolver did not converge for {what}")]
    Eigensolver { what: String },

    #[error("function undefined on spectrum at eigenvalues {eigenvalues:?}")]
    Domain { eigenvalues: Vec<f64> },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("observables {first} and {second} are incompatible: max |[A,B]| = {norm:e}")]
    Incompatible {
        first: String,
        second: String,
        norm: f64,
    },

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical consistency violated: {0}")]
    Numerical(String),

    #[error("missing model component: {0}")]
    Configuration(String),

    #[error("level crossing within stencil: gap {gap:e} at parameter {at}")]
    LevelCrossing { gap: f64, at: f64 },

    #[error("ill-posed constraints: Jacobian condition number {condition:e} exceeds {limit:e}")]
    IllPosed { condition: f64, limit: f64 },

    #[error("infeasible target {index}: {value} not strictly inside ({min}, {max})")]
    Infeasible {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("quadrature did not reach tolerance {tol:e} within {limit} subintervals (estimate {estimate:e})")]
    Quadrature { tol: f64, limit: usize, estimate: f64 },

    #[error("time grid too coarse: estimated error {estimated:e} > {tol:e}; try dt <= {suggested_dt:e}")]
    StepSize {
        estimated: f64,
        tol: f64,
        suggested_dt: f64,
    },

    #[error("invalid model: {0}")]
    Model(String),
}
