use serde::Serialize;
use trajaudit::format::FormatError;
use trajaudit::ingest::IngestError;
use trajaudit::qa::QaError;

/// Error category; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Usage,
    Io,
    Schema,
    Version,
    Store,
    Other,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Schema => 4,
            Kind::Version => 5,
            Kind::Store => 6,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: Kind,
    exit_code: i32,
    message: &'a str,
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

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(Kind::Schema, message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {e}", path.display()))
    }

    /// The single JSON line written to stderr.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.kind,
            exit_code: self.kind.exit_code(),
            message: &self.message,
        })
        .expect("error line serializes")
    }
}

fn format_kind(e: &FormatError) -> Kind {
    match e {
        FormatError::Io { .. } => Kind::Io,
        FormatError::Line { .. } | FormatError::Json(_) => Kind::Schema,
        FormatError::Version { .. } => Kind::Version,
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::new(format_kind(&e), e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let kind = match &e {
            IngestError::Format(f) => format_kind(f),
            IngestError::InvalidDt(_) => Kind::Usage,
            _ => Kind::Schema,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<QaError> for CliError {
    fn from(e: QaError) -> Self {
        let kind = match &e {
            QaError::Format(f) if format_kind(f) == Kind::Version => Kind::Version,
            _ => Kind::Store,
        };
        CliError::new(kind, format!("{}: {e}", e.code()))
    }
}

impl From<trajaudit::tracker::TrackRecordError> for CliError {
    fn from(e: trajaudit::tracker::TrackRecordError) -> Self {
        CliError::schema(e.to_string())
    }
}

impl From<trajaudit::tracker::TrackerError> for CliError {
    fn from(e: trajaudit::tracker::TrackerError) -> Self {
        CliError::new(Kind::Other, e.to_string())
    }
}

impl From<trajaudit::miner::MinerError> for CliError {
    fn from(e: trajaudit::miner::MinerError) -> Self {
        let kind = match &e {
            trajaudit::miner::MinerError::InvalidConfig(_) => Kind::Usage,
            trajaudit::miner::MinerError::UnknownEvent { .. } => Kind::Store,
            _ => Kind::Other,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<trajaudit::scenario::ScenarioError> for CliError {
    fn from(e: trajaudit::scenario::ScenarioError) -> Self {
        CliError::schema(e.to_string())
    }
}

impl From<trajaudit_service::ServiceError> for CliError {
    fn from(e: trajaudit_service::ServiceError) -> Self {
        let kind = match &e {
            trajaudit_service::ServiceError::Store(_) => Kind::Store,
            _ => Kind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}
