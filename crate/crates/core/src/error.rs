//! Error type shared by every module of the crate.

use crate::jacobi_fields::MatrixJacobiSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input was non-finite or outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate plane: Gram determinant {gram:e} is below 1e-12")]
    DegeneratePlane { gram: f64 },

    #[error("integrator drift: {quantity} defect {max_defect:e} exceeds {limit:e} at t = {t}")]
    IntegratorDrift {
        quantity: &'static str,
        max_defect: f64,
        limit: f64,
        t: f64,
    },

    #[error("conjugate point detected: boundary matrix singular at r = {r}")]
    ConjugatePointDetected { r: f64 },

    #[error("Green limit did not converge (ladder {r_ladder:?}, gaps {gaps:?})")]
    GreenNotConverged {
        r_ladder: Vec<f64>,
        gaps: Vec<f64>,
        /// Last boundary solution reached by the ladder, when one was computed.
        last: Option<Box<MatrixJacobiSolution>>,
    },

    #[error("Jacobi field vanishes (relative norm {norm:e}) at t = {t}")]
    VanishingJacobiField { t: f64, norm: f64 },

    #[error("condition (A) violated: h({x}) = {h:e} < 0")]
    ConditionAViolated { x: f64, h: f64 },

    #[error("condition (C) violated: {0}")]
    ConditionCViolated(String),

    #[error("time {t} is not on the solution grid")]
    OffGrid { t: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("function is not submultiplicative: worst excess ratio {worst_ratio} at (t, s) = ({t}, {s})")]
    NotSubmultiplicative { worst_ratio: f64, t: f64, s: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure_finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{label} contains non-finite values")))
    }
}
