use ptgformula::agg::AggError;
use ptgformula::bootstrap::BootstrapError;
use ptgformula::estimators::EstimationError;
use ptgformula::oracle::OracleError;
use ptgformula::panel::PanelError;
use ptgformula::sensitivity::SensitivityError;
use serde::Serialize;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Numerical,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Validation, message: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Internal, message: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message, "exit_code": self.kind.exit_code() } }).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(format!("io: {e}"))
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        let kind = match &e {
            _ if e.is_numerical() => ErrorKind::Numerical,
            EstimationError::IncompletePhiTable(_) | EstimationError::MissingTreatmentModels(_) | EstimationError::MissingOutcomeSteps(_) => {
                ErrorKind::Internal
            }
            _ => ErrorKind::Validation,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<BootstrapError> for CliError {
    fn from(e: BootstrapError) -> Self {
        match e {
            BootstrapError::Base(inner) => inner.into(),
            e if e.is_numerical() => Self { kind: ErrorKind::Numerical, message: e.to_string() },
            e => Self::validation(e.to_string()),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::Estimation(inner) => inner.into(),
            SensitivityError::Bootstrap(inner) => inner.into(),
            e => Self::validation(e.to_string()),
        }
    }
}

impl From<AggError> for CliError {
    fn from(e: AggError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(format!("json: {e}"))
    }
}
