use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed argument: wrong dimension, off-sphere velocity, negative density.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent or incomplete configuration (CFL violation, incompatible bins).
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    /// A simulated particle left the finite state space.
    #[error("non-finite particle state at t = {time}: {message} (last events: {events:?})")]
    Simulation {
        time: f64,
        message: String,
        events: Vec<String>,
    },

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate}, error {error:e})")]
    Tolerance { tol: f64, estimate: f64, error: f64 },

    /// Lyapunov constants could not be chosen (non-positive weight, m_* = 0, ...).
    #[error("constant selection failed: {0}")]
    ConstantSelection(String),

    #[error("hypothesis (H2) fails for every candidate exponent {candidates:?}")]
    H2Violated { candidates: Vec<u32> },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("stationary iteration did not converge: final residual {}", residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { residuals: Vec<f64> },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
