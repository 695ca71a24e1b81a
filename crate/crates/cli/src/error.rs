//! Failure classes and their process exit codes.

use std::fmt;
use std::path::Path;

use tsg_core::bench::BenchError;
use tsg_core::data::DataError;
use tsg_core::diagnostics::DiagnosticsError;
use tsg_core::model::{FormatError, ModelError};
use tsg_core::rf::RfError;
use tsg_core::search::SearchError;
use tsg_core::trainer::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Parse,
    Config,
    Divergence,
    Resource,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Parse => 3,
            Kind::Config => 4,
            Kind::Divergence => 5,
            Kind::Resource => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Parse => "parse",
            Kind::Config => "config",
            Kind::Divergence => "divergence",
            Kind::Resource => "resource",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn read(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Parse, format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Resource, format!("cannot write {}: {err}", path.display()))
    }

    /// Prefixes the message with the file it concerns.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

/// One line: `error: <kind>: <message>`, with newlines flattened.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.kind.name(), self.message.replace('\n', " "))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Parse { .. } | DataError::LabelAlphabet(_) | DataError::Io(_) => Kind::Parse,
            DataError::Dimension { .. } | DataError::Split(_) | DataError::Input(_) => Kind::Config,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let kind = match e {
            TrainError::Divergence { .. } => Kind::Divergence,
            TrainError::Config(_) | TrainError::Input(_) | TrainError::Rf(_) => Kind::Config,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<RfError> for CliError {
    fn from(e: RfError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::new(Kind::Parse, e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Train(t) => t.into(),
            DiagnosticsError::Rf(r) => r.into(),
            DiagnosticsError::Model(m) => m.into(),
            DiagnosticsError::Resource(_) => CliError::new(Kind::Resource, e.to_string()),
            DiagnosticsError::NormBound { .. } => CliError::new(Kind::Divergence, e.to_string()),
            DiagnosticsError::Input(_) => CliError::config(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Data(d) => d.into(),
            SearchError::Pool(_) => CliError::new(Kind::Resource, e.to_string()),
            SearchError::Input(_) | SearchError::Config(_) => CliError::config(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Empty(_) => CliError::usage(e.to_string()),
            BenchError::Train(t) => t.into(),
            BenchError::Other(_) => CliError::config(e.to_string()),
        }
    }
}
