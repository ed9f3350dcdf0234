use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PyrError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Evaluation too close to the collapsed apex `t = 1`.
    #[error("singular evaluation at t = {t} (apex of the reference pyramid)")]
    Singularity { t: f64 },

    #[error("change of basis is rank deficient (condition number {cond:e})")]
    RankDeficient { cond: f64 },

    #[error("degenerate element: {0}")]
    DegenerateElement(String),

    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    #[error("face connectivity failed: {0}")]
    Connectivity(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("trace values are stale; refresh traces before evaluating the right-hand side")]
    StaleTraces,

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, PyrError>;

/// Points with `t` at or above `1 - APEX_TOL` are treated as the apex.
pub const APEX_TOL: f64 = 1e-12;

/// Highest polynomial order supported by the library.
pub const MAX_ORDER: usize = 10;

pub(crate) fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(PyrError::InvalidParameter(format!(
            "order {n} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    Ok(())
}
