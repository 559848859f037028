use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("tridiagonal eigensolver did not converge on level {level} after {iterations} sweeps ({summary})")]
    NoConvergence {
        level: usize,
        iterations: usize,
        summary: String,
    },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("no edge state found at theta = {theta}")]
    NoEdgeState { theta: f64 },

    #[error("degenerate pair ({n}, {m}): gap {gap:e} below floor")]
    DegeneratePair { n: usize, m: usize, gap: f64 },

    #[error("energy {energy} at or beyond the band edge 2V = {limit}")]
    BandEdge { energy: f64, limit: f64 },

    #[error("clean chain: localization length is infinite")]
    InfiniteLocalization,

    #[error("norm drift {drift:e} exceeds tolerance at t = {time}")]
    NormDrift { drift: f64, time: f64 },

    #[error("singular tridiagonal solve at step {step}")]
    SingularSolve { step: usize },

    #[error("transfer-matrix product overflowed at site {site}")]
    Overflow { site: usize },

    #[error("dt did not converge after {halvings} halvings (last change {change:e})")]
    DtNotConverged { halvings: usize, change: f64 },

    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NormDrift { .. }
                | Error::SingularSolve { .. }
                | Error::Overflow { .. }
                | Error::DtNotConverged { .. }
                | Error::NoEdgeState { .. }
                | Error::DegeneratePair { .. }
        )
    }
}
