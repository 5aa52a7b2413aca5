use thiserror::Error;

/// Errors raised by the measurement library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (max |M - M^dag| = {0:e})")]
    NonHermitian(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("trace {0:e} is not positive")]
    ZeroTrace(f64),
    #[error("density matrix has trace {0}, expected 1")]
    TraceNotOne(f64),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("Hamiltonian is not Hermitian (max deviation {0:e})")]
    NonHermitianH(f64),
    #[error("jump channel has zero amplitude")]
    ZeroAmplitude,
    #[error("jump channel (z = {z}, n = {n}) has non-positive weight {nu}")]
    NonPositiveWeight { z: f64, n: u32, nu: f64 },
    #[error("jump-size scale b = {0} must be positive")]
    NonPositiveB(f64),
    #[error("duplicate jump channel (z = {z}, n = {n})")]
    DuplicateChannel { z: f64, n: u32 },
    #[error("no jump channel with amplitude z = {0}")]
    UnknownAmplitude(f64),
    #[error("jump z = {0} cannot occur from this state (Tr J[tau](z) = {1:e})")]
    DeadChannel(f64, f64),
    #[error("jump rate too high for the time step: rate*dt = {0}")]
    RateTooHigh(f64),
    #[error("non-normalized state collapsed (trace {0:e})")]
    StateCollapse(f64),
    #[error("operation requires a path simulated under the physical probability")]
    WrongMode,
    #[error("support of the first state is not contained in the support of the second")]
    SupportViolation,
    #[error("empty sample")]
    EmptySample,
    #[error("at least {needed} samples required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("adaptive quadrature did not converge (estimate {estimate}, error {error:e})")]
    QuadratureFailure { estimate: f64, error: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
