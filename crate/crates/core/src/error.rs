use thiserror::Error;

/// Errors raised by the model, the integrator, and the file-level tooling.
///
/// Solver outcomes (non-convergence, infeasible bounds) are not errors; they
/// are reported through [`crate::nlp::SolveStatus`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("total population is zero, forces of infection are undefined")]
    ZeroPopulation,

    #[error("simulation failed at node {node}: {source}")]
    Simulation {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("length mismatch: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("inadmissible control (u1 = {u1}, u2 = {u2})")]
    InadmissibleControl { u1: f64, u2: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
