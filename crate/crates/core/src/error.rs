use thiserror::Error;

/// Errors surfaced by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation at zero displacement (coincident points)")]
    Singularity,

    #[error("particles within collision floor at t = {t}: min distance {min_dist:e} < {floor:e}")]
    Collision { t: f64, min_dist: f64, floor: f64 },

    #[error("CFL violation: u_max * dt * m = {cfl:.3} exceeds 0.5")]
    CflViolation { cfl: f64 },

    #[error("grid under-resolves smearing radii: need m >= {needed}, have m = {m}")]
    Resolution { needed: usize, m: usize },

    #[error("lattice-sum tail estimate {tail:e} above tolerance {tol:e}; increase the cutoff")]
    ConvergenceNotReached { tail: f64, tol: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
