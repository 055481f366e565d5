//! Error categories and their exit codes.

use std::fmt;

use incubator_core::diversify::DiversifyError;
use incubator_core::incubate::{DatasetIoError, GenerateError};
use incubator_core::probe::{ArtifactError, PredictError};
use incubator_core::{
    ClusterError, GatewayError, LogicError, MiningError, ModelError, TrainError, TuningError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad arguments, config or input files.
    User,
    /// The generation or embedding service failed.
    Backend,
    /// A broken internal invariant.
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::User => 1,
            Kind::Backend => 2,
            Kind::Internal => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::User => "user",
            Kind::Backend => "backend",
            Kind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::User,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Backend,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Internal,
            message: message.into(),
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({"error": {"kind": self.kind.name(), "message": self.message}})
            .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(_) | GatewayError::UnknownScenarioLabel(_) => {
                Self::user(e.to_string())
            }
            _ => Self::backend(e.to_string()),
        }
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Gateway(g) => g.into(),
            GenerateError::ZeroCount => Self::user(e.to_string()),
            GenerateError::GenerationCollapse { .. } => Self::backend(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Gateway(g) => g.into(),
            TrainError::NonFiniteLoss(_) => Self::internal(e.to_string()),
            _ => Self::user(e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Gateway(g) => g.into(),
            PredictError::EmbedderMismatch { .. } => Self::user(e.to_string()),
        }
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<DatasetIoError> for CliError {
    fn from(e: DatasetIoError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<LogicError> for CliError {
    fn from(e: LogicError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<DiversifyError> for CliError {
    fn from(e: DiversifyError) -> Self {
        match e {
            DiversifyError::Gateway(g) => g.into(),
            DiversifyError::Cluster(c) => c.into(),
            DiversifyError::EmptyPool(_) => Self::backend(e.to_string()),
        }
    }
}

impl From<TuningError> for CliError {
    fn from(e: TuningError) -> Self {
        match e {
            TuningError::Gateway(g) => g.into(),
            TuningError::AttemptBudgetExhausted { .. } => Self::backend(e.to_string()),
            _ => Self::user(e.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Gateway(g) => g.into(),
            MiningError::Predict(p) => p.into(),
            MiningError::Train(t) => t.into(),
            MiningError::Generate(g) => g.into(),
            _ => Self::user(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::user(e.to_string())
    }
}
