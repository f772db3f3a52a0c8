use thiserror::Error;

use crate::geometry::PhasePoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("left the domain during {stage} at step {index}")]
    DomainExit {
        stage: String,
        index: usize,
        partial: Vec<PhasePoint>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("precision error at continued-fraction level {level}: {msg}")]
    Precision { level: usize, msg: String },

    #[error("solver did not converge ({what}); last residual {residual:e}")]
    Solver { what: String, residual: f64 },

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("empty return set for q = {q}; increase q")]
    EmptyReturnSet { q: i64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("search failure: {0}")]
    Search(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn solver(what: impl Into<String>, residual: f64) -> Self {
        Error::Solver {
            what: what.into(),
            residual,
        }
    }
}
