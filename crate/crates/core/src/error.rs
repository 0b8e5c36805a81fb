use thiserror::Error;

/// Errors raised by the solvers and their building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TengError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid parameter subset: {0}")]
    InvalidSubset(String),

    #[error("missing derivative field: {0}")]
    MissingDerivative(&'static str),

    #[error("least-squares solve failed at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<TengError>,
    },

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("{0} is not supported by this ansatz")]
    Unsupported(&'static str),

    #[error("zero reference norm")]
    ZeroReference,

    #[error("spectral solution blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("non-finite parameters at t = {t}")]
    Diverged { t: f64 },

    #[error("time horizon {t_final} is not an integer multiple of dt = {dt}")]
    HorizonMismatch { t_final: f64, dt: f64 },
}

pub type Result<T> = std::result::Result<T, TengError>;
