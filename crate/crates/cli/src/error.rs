use gnn_lab::analysis::AnalysisError;
use gnn_lab::arch::ArchError;
use gnn_lab::molgraph::DatasetError;
use gnn_lab::train::TrainError;
use gnn_lab::transfer::TransferError;
use thiserror::Error;

/// Command failure, split by exit code: usage and validation problems exit
/// with 1, everything else with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Single-line JSON object printed as the last line on stderr.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.exit_code(), "message": self.to_string() }).to_string()
    }

    /// Prefixes the message with `context`, keeping the kind.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{context}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{context}: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::InvalidSpec(_) | ArchError::IncompatibleHead { .. } | ArchError::UnknownTap { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptyTrainSplit | TrainError::NoTasks | TrainError::EmptySplit(_) => {
                CliError::Usage(e.to_string())
            }
            TrainError::Dataset(d) => d.into(),
            TrainError::Arch(a) => a.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::NodeLevelTap(_)
            | TransferError::MissingMolecule { .. }
            | TransferError::TooFewSets { .. }
            | TransferError::Inconsistent(_)
            | TransferError::UnknownTask(_)
            | TransferError::NodeLevelTask(_)
            | TransferError::InvalidModule { .. }
            | TransferError::Config(_) => CliError::Usage(e.to_string()),
            TransferError::Train(t) => t.into(),
            TransferError::Arch(a) => a.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
