use ggik::cvae::CvaeError;
use ggik::data::DataError;
use ggik::dgp::DgpError;
use ggik::kinematics::KinematicsError;
use ggik::tensor::TensorError;

/// Failures mapped onto exit codes: 1 validation, 2 non-convergence, 3 I/O.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::NonConvergence(_) => "non_convergence",
            CliError::Io(_) => "io",
        }
    }
}

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DgpError> for CliError {
    fn from(e: DgpError) -> Self {
        match e {
            DgpError::NonConvergence { .. } | DgpError::MalformedPointSet(_) => CliError::NonConvergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io(_) => CliError::Io(e.to_string()),
            TensorError::Checkpoint(_) => CliError::Validation(e.to_string()),
            other => CliError::NonConvergence(other.to_string()),
        }
    }
}

impl From<CvaeError> for CliError {
    fn from(e: CvaeError) -> Self {
        match e {
            CvaeError::Tensor(t) => t.into(),
            CvaeError::Dgp(d) => d.into(),
            CvaeError::NonFiniteLoss { .. } | CvaeError::AllSamplesMalformed { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Io(e.to_string()),
            DataError::Cvae(c) => c.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}
