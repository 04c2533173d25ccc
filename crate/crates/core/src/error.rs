use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("regularization with delta > 0 requires a regularizing operator")]
    MissingRegularizer,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("projected iteration stagnated: damping fell below {tau:e} after {iterations} sweeps")]
    Stagnation { tau: f64, iterations: usize },

    #[error("inner obstacle solve did not converge at outer step {outer_iteration}: KKT residual {residual:e}")]
    InnerNotConverged {
        outer_iteration: usize,
        residual: f64,
    },

    #[error("{what}: outer iteration did not converge in {iterations} steps")]
    OuterNotConverged { what: String, iterations: usize },

    #[error("active-set oracle limited to 20 unknowns, got {0}")]
    OracleTooLarge(usize),

    #[error("active-set oracle found no admissible active set")]
    Infeasible,

    #[error("monotone iteration broke ordering at outer step {iteration} by {violation:e}")]
    OrderingViolation { iteration: usize, violation: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("mesh list is not nested: {0}")]
    Nesting(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
