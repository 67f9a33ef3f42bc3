//! Labeled API usage, source-to-sink flows and per-package summaries.

pub mod flow;
pub mod hooks;
pub mod labels;
pub mod package;
pub mod parse;
pub mod summary;
pub mod tree;
pub mod usage;

pub use flow::{analyze_program, index_exports, ExportIndex, ProgramPackage, ProgramResult};
pub use hooks::{detect_install_hook, HookError, InstallHook};
pub use labels::{ApiCategory, ApiLabel, ApiLabelSet, Confidence, LabelConfigError, MatchMode, Role};
pub use package::{analyze_package, StaticConfig, StaticInput};
pub use parse::{parse_unit, ParseError};
pub use summary::{diff_api_categories, ExportKind, ExportSummary, ViaRef};
pub use tree::NormalizedTree;
pub use usage::{combine_usage, extract_api_usage, ApiRef, ApiUsage, CombinedApis};

use crate::registry::PackageCoordinate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StaticError {
    #[error("MISSING_DEP_SUMMARY: no summary for dependency {0}")]
    MissingDepSummary(String),
    #[error("VERSION_ORDER: {old} is not older than {new}")]
    VersionOrder { old: String, new: String },
    #[error(transparent)]
    LabelConfig(#[from] LabelConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: u32,
}

/// One end of a flow: the terminal labeled API and the dependency exports
/// it was reached through, nearest first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowEndpoint {
    pub api: String,
    pub category: ApiCategory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowFinding {
    pub source: FlowEndpoint,
    pub sink: FlowEndpoint,
    pub source_category: ApiCategory,
    pub sink_category: ApiCategory,
    /// Weaker of the two endpoint matches.
    pub confidence: Confidence,
    /// Source location first, sink location last.
    pub path: Vec<Location>,
}

impl FlowFinding {
    /// `(source api, sink api)` ignoring the export chain.
    pub fn terminal_pair(&self) -> (String, String) {
        (self.source.api.clone(), self.sink.api.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitIssue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StaticSignal {
    /// A unit exceeded the size cap, the time budget or nesting limits.
    ObfuscationSuspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub coordinate: PackageCoordinate,
    pub direct_apis: Vec<ApiUsage>,
    pub combined_apis: CombinedApis,
    pub exports: Vec<ExportSummary>,
    pub flows: Vec<FlowFinding>,
    pub has_install_hook: bool,
    pub install_hooks: Vec<InstallHook>,
    #[serde(default)]
    pub parse_errors: Vec<UnitIssue>,
    #[serde(default)]
    pub signals: Vec<StaticSignal>,
    #[serde(default)]
    pub skipped_units: Vec<UnitIssue>,
}
