use thiserror::Error;

/// Errors raised while building, synthesizing or simulating a robust smoother.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The Hamiltonian of a Riccati problem has eigenvalues on (or too close to) the
    /// imaginary axis, so no stabilizing solution exists.
    #[error("no stabilizing Riccati solution; Hamiltonian eigenvalues near the imaginary axis: {eigenvalues:?}")]
    NoStabilizingSolution { eigenvalues: Vec<(f64, f64)> },

    #[error("coupling condition violated: rho(YX) = {rho:e} >= tau = {tau:e}")]
    Coupling { rho: f64, tau: f64 },

    #[error("matrix is not Hurwitz (max real eigenvalue part {max_real:e}); no stationary covariance")]
    NotHurwitz { max_real: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 config, 3 infeasible, 4 numerical failure, 5 unstable closed loop.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Unsupported(_) => 2,
            Error::Infeasible(_) | Error::Coupling { .. } | Error::NoStabilizingSolution { .. } => 3,
            Error::Numerical(_) | Error::Io(_) => 4,
            Error::NotHurwitz { .. } => 5,
        }
    }
}
