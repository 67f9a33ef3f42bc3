use pkgvet::cache::CacheError;
use pkgvet::config::ConfigError;
use pkgvet::heuristics::TriageError;
use pkgvet::pipeline::PipelineError;
use pkgvet::registry::IngestError;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// An input file is missing or malformed.
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn input(path: &std::path::Path, message: impl std::fmt::Display) -> CliError {
        CliError::Input { path: path.display().to_string(), message: message.to_string() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "USAGE",
            CliError::Config(_) => "CONFIG_INVALID",
            CliError::Input { .. } => "INPUT_INVALID",
            CliError::Ingest(_) => "INGEST_FAILED",
            CliError::Cache(_) => "CACHE_ERROR",
            CliError::Pipeline(_) => "ANALYSIS_FAILED",
            CliError::Triage(TriageError::UnknownReport(_)) => "UNKNOWN_REPORT",
            CliError::Triage(TriageError::InvalidScope(_)) => "INVALID_SCOPE",
            CliError::Triage(_) => "TRIAGE_LOG_ERROR",
            CliError::Io { .. } => "IO_ERROR",
        }
    }

    /// Usage mistakes exit 1; everything else that stops a command exits 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Triage(TriageError::InvalidScope(_)) => EXIT_USAGE,
            _ => EXIT_CONFIG,
        }
    }

    /// One JSON object on one line, for stderr.
    pub fn to_json_line(&self) -> String {
        let line = ErrorLine { error: self.code(), message: self.to_string(), exit_code: self.exit_code() };
        serde_json::to_string(&line).expect("error lines serialize")
    }
}
