//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hamiltonian spec: {0}")]
    InvalidSpec(String),

    #[error("phase point rejected: |xi| = {0:.3e} below cutoff {1:.3e}")]
    ZeroMomentum(f64, f64),

    #[error("step size underflow at t = {t:.6e}: |h| = {h:.3e} below {min:.3e}")]
    StepUnderflow { t: f64, h: f64, min: f64 },

    #[error("non-finite state at t = {0:.6e}")]
    NonFinite(f64),

    #[error("limit did not converge: {0}")]
    LimitNotConverged(String),

    #[error("trajectory trapped or escaping too slowly: {0}")]
    TrappedOrSlow(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("quadrature unresolved: Simpson vs midpoint differ by {0:.3e} relative (limit {1:.3e})")]
    QuadratureUnresolved(f64, f64),

    #[error("momentum support exceeds the Nyquist band: {0}")]
    NyquistViolation(String),

    #[error("Krylov propagator stagnated: {0}")]
    KrylovStagnation(String),

    #[error("symbol carries no closed-form generator for off-grid evaluation")]
    NoGenerator,

    #[error("LAPACK {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
