use thiserror::Error;

use sde_projection::expr::ExprError;
use sde_projection::manifold::ManifoldError;
use sde_projection::montecarlo::McError;
use sde_projection::sde::SdeError;
use sde_projection::simulate::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0} check(s) failed")]
    CheckFailed(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status.
    pub fn code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Numerical(_) | Self::Io(_) => 2,
            Self::CheckFailed(_) => 3,
        }
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ManifoldError> for CliError {
    fn from(e: ManifoldError) -> Self {
        match e {
            ManifoldError::Dimension(_)
            | ManifoldError::Expr(_)
            | ManifoldError::RankDeficient { .. } => Self::Validation(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Manifold(m) => m.into(),
            SdeError::Expr(_) | SdeError::Dimension(_) | SdeError::Correlation => {
                Self::Validation(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::InitialCondition { .. } | SimError::Dimension => {
                Self::Validation(e.to_string())
            }
            SimError::Sde(s) => s.into(),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Sim(s) => s.into(),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Numerical(format!("csv: {e}"))
    }
}
