//! Analyst labels and the exclusion log.

use super::evaluate::{ReportStatus, SuspicionReport};
use crate::metadata::{KnownMalware, KnownMalwareList, MetadataError};
use crate::registry::PackageCoordinate;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Malicious,
    Benign,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Malicious => "MALICIOUS",
            Verdict::Benign => "BENIGN",
        })
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MALICIOUS" => Ok(Verdict::Malicious),
            "BENIGN" => Ok(Verdict::Benign),
            _ => Err(format!("unknown verdict `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExclusionScope {
    /// Every rule on this exact coordinate.
    Coordinate { coordinate: PackageCoordinate },
    /// One rule on this exact coordinate.
    CoordinateRule { coordinate: PackageCoordinate, rule: String },
    /// Every rule on every package listing this author.
    Author { author: String },
}

impl ExclusionScope {
    pub fn covers(&self, coordinate: &PackageCoordinate, authors: &[String], rule: &str) -> bool {
        match self {
            ExclusionScope::Coordinate { coordinate: c } => c == coordinate,
            ExclusionScope::CoordinateRule { coordinate: c, rule: r } => c == coordinate && r == rule,
            ExclusionScope::Author { author } => authors.iter().any(|a| a.eq_ignore_ascii_case(author)),
        }
    }
}

/// How far a BENIGN label reaches, as chosen by the analyst.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelScope {
    #[default]
    Package,
    PackageRule { rule: String },
    Author { author: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub scope: ExclusionScope,
    pub reason: String,
    pub created_by: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub coordinate: PackageCoordinate,
    pub verdict: Verdict,
    #[serde(default)]
    pub scope: LabelScope,
    pub analyst: String,
    #[serde(default)]
    pub note: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum TriageError {
    #[error("UNKNOWN_REPORT: {0}")]
    UnknownReport(PackageCoordinate),
    #[error("INVALID_SCOPE: {0}")]
    InvalidScope(String),
    #[error("IO_ERROR: {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error(transparent)]
    Metadata(#[from] MetadataError),
}

/// Append-only exclusion and label log, optionally backed by JSONL files.
#[derive(Debug, Clone, Default)]
pub struct TriageLog {
    exclusions_path: Option<PathBuf>,
    labels_path: Option<PathBuf>,
    exclusions: Vec<ExclusionRecord>,
    labels: Vec<LabelRecord>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TriageError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(TriageError::Io { path: path.display().to_string(), source }),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| TriageError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<(), TriageError> {
    let io = |source| TriageError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut line = serde_json::to_string(record).expect("records serialize");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub coordinate: PackageCoordinate,
    pub verdict: Verdict,
    #[serde(default)]
    pub scope: LabelScope,
    #[serde(default)]
    pub analyst: String,
    #[serde(default)]
    pub note: String,
}

/// Result of [`TriageLog::apply_label`].
#[derive(Debug, Clone)]
pub struct LabelOutcome {
    pub report: SuspicionReport,
    pub exclusion: Option<ExclusionRecord>,
    /// False when an identical label was already recorded.
    pub recorded: bool,
}

impl TriageLog {
    pub fn in_memory() -> TriageLog {
        TriageLog::default()
    }

    /// Opens (and lazily creates) a log directory.
    pub fn open(dir: &Path) -> Result<TriageLog, TriageError> {
        TriageLog::open_files(&dir.join(EXCLUSIONS_FILE), &dir.join(LABELS_FILE))
    }

    /// Opens a log kept in two explicit JSONL files; missing files are empty.
    pub fn open_files(exclusions: &Path, labels: &Path) -> Result<TriageLog, TriageError> {
        Ok(TriageLog {
            exclusions: read_jsonl(exclusions)?,
            labels: read_jsonl(labels)?,
            exclusions_path: Some(exclusions.to_path_buf()),
            labels_path: Some(labels.to_path_buf()),
        })
    }

    pub fn exclusions(&self) -> &[ExclusionRecord] {
        &self.exclusions
    }

    pub fn labels(&self) -> &[LabelRecord] {
        &self.labels
    }

    /// First exclusion covering `rule` on this package.
    pub fn exclusion_for(&self, coordinate: &PackageCoordinate, authors: &[String], rule: &str) -> Option<&ExclusionRecord> {
        self.exclusions.iter().find(|e| e.scope.covers(coordinate, authors, rule))
    }

    pub fn latest_verdict(&self, coordinate: &PackageCoordinate) -> Option<Verdict> {
        self.labels.iter().rev().find(|l| &l.coordinate == coordinate).map(|l| l.verdict)
    }

    pub fn add_exclusion(&mut self, record: ExclusionRecord) -> Result<bool, TriageError> {
        if self.exclusions.iter().any(|e| e.scope == record.scope) {
            return Ok(false);
        }
        if let Some(path) = &self.exclusions_path {
            append_jsonl(path, &record)?;
        }
        self.exclusions.push(record);
        Ok(true)
    }

    fn add_label(&mut self, record: LabelRecord) -> Result<bool, TriageError> {
        let latest = self.labels.iter().rev().find(|l| l.coordinate == record.coordinate);
        if latest.is_some_and(|l| l.verdict == record.verdict && l.scope == record.scope) {
            return Ok(false);
        }
        if let Some(path) = &self.labels_path {
            append_jsonl(path, &record)?;
        }
        self.labels.push(record);
        Ok(true)
    }

    /// Records an analyst verdict on a report. BENIGN adds an exclusion of
    /// the chosen scope; MALICIOUS confirms the report and appends the
    /// package to `known_malware` when a path is given. Repeating the latest
    /// label changes nothing.
    pub fn apply_label(
        &mut self,
        report: Option<&SuspicionReport>,
        req: &LabelRequest,
        known_malware: Option<&Path>,
        now: DateTime<Utc>,
    ) -> Result<LabelOutcome, TriageError> {
        let LabelRequest { coordinate, verdict, scope, analyst, note } = req;
        let (verdict, scope, analyst, note) = (*verdict, scope.clone(), analyst.as_str(), note.as_str());
        let report = report.filter(|r| &r.coordinate == coordinate).ok_or_else(|| TriageError::UnknownReport(coordinate.clone()))?;
        if let LabelScope::PackageRule { rule } = &scope {
            if !report.triggered.iter().any(|t| &t.rule == rule) {
                return Err(TriageError::InvalidScope(format!("rule `{rule}` did not trigger on {coordinate}")));
            }
        }
        let record = LabelRecord {
            coordinate: coordinate.clone(),
            verdict,
            scope: scope.clone(),
            analyst: analyst.to_string(),
            note: note.to_string(),
            created_at: now,
        };
        let recorded = self.add_label(record)?;
        let mut exclusion = None;
        let mut updated = report.clone();
        match verdict {
            Verdict::Benign => {
                let scope = match scope {
                    LabelScope::Package => ExclusionScope::Coordinate { coordinate: coordinate.clone() },
                    LabelScope::PackageRule { rule } => ExclusionScope::CoordinateRule { coordinate: coordinate.clone(), rule },
                    LabelScope::Author { author } => ExclusionScope::Author { author },
                };
                let rec = ExclusionRecord {
                    scope,
                    reason: if note.is_empty() { "labeled benign".to_string() } else { note.to_string() },
                    created_by: analyst.to_string(),
                    created_at: now,
                };
                self.add_exclusion(rec.clone())?;
                exclusion = Some(rec);
                updated.reapply(self);
            }
            Verdict::Malicious => {
                if let Some(path) = known_malware {
                    let entry = KnownMalware { coordinate: coordinate.clone(), authors: report.authors.clone(), release_time: report.release_time };
                    KnownMalwareList::append(path, &entry)?;
                }
                updated.status = ReportStatus::ConfirmedMalicious;
            }
        }
        Ok(LabelOutcome { report: updated, exclusion, recorded })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStat {
    pub triggers: usize,
    pub tp: usize,
    pub fp: usize,
}

/// Per-rule trigger counts with confirmed true and false positives, over
/// every enabled rule.
pub fn rule_stats<'a>(
    rule_ids: impl IntoIterator<Item = &'a str>,
    reports: &[SuspicionReport],
    log: &TriageLog,
) -> BTreeMap<String, RuleStat> {
    let mut out: BTreeMap<String, RuleStat> = rule_ids.into_iter().map(|id| (id.to_string(), RuleStat::default())).collect();
    for r in reports {
        let verdict = log.latest_verdict(&r.coordinate);
        for t in &r.triggered {
            let s = out.entry(t.rule.clone()).or_default();
            s.triggers += 1;
            match verdict {
                Some(Verdict::Malicious) => s.tp += 1,
                Some(Verdict::Benign) => s.fp += 1,
                None => {}
            }
        }
    }
    out
}
