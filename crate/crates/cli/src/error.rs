use blender_lab::Error;

/// Exit codes: 0 pass, 1 certification failure, 2 input error, 3 solver
/// non-convergence.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                Error::Domain(_)
                | Error::Precondition(_)
                | Error::Precision { .. }
                | Error::EmptyReturnSet { .. }
                | Error::Data(_)
                | Error::Resolution(_) => 2,
                Error::Certification(_) | Error::Infeasible(_) | Error::Search(_) => 1,
                Error::Solver { .. } | Error::DomainExit { .. } => 3,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                Error::Domain(_) => "domain",
                Error::DomainExit { .. } => "domain_exit",
                Error::Precondition(_) => "precondition",
                Error::Precision { .. } => "precision",
                Error::Solver { .. } => "solver",
                Error::Certification(_) => "certification",
                Error::EmptyReturnSet { .. } => "empty_return_set",
                Error::Data(_) => "data",
                Error::Resolution(_) => "resolution",
                Error::Infeasible(_) => "infeasible",
                Error::Search(_) => "search",
            },
        }
    }
}
