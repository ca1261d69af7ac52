use khdm::autodiff::TensorError;
use khdm::dmd::DmdError;
use khdm::dynamics::DynamicsError;
use khdm::io::IoError;
use khdm::mi::MiError;
use khdm::train::TrainError;

/// Command failure mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } | TensorError::Convergence { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Divergence { .. } | DynamicsError::Stability { .. } => CliError::Numerical(e.to_string()),
            DynamicsError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DmdError> for CliError {
    fn from(e: DmdError) -> Self {
        match e {
            DmdError::Eigen(_) => CliError::Numerical(e.to_string()),
            DmdError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence(_) | TrainError::Aborted { .. } | TrainError::Tuning(_) => CliError::Numerical(e.to_string()),
            TrainError::Dmd(d) => d.into(),
            TrainError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MiError> for CliError {
    fn from(e: MiError) -> Self {
        CliError::Data(e.to_string())
    }
}
