//! Labeled runtime APIs per subject language.
//!
//! Config rows are tab-separated: `language qualified_name category roles
//! match_mode`, roles joined by `,` or `|`. Blank lines and `#` comments are
//! skipped.

use crate::registry::SubjectLanguage;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const DEFAULT_PYTHON: &str = include_str!("../../config/labels/python.tsv");
pub const DEFAULT_NODE: &str = include_str!("../../config/labels/node.tsv");
pub const DEFAULT_RUBY: &str = include_str!("../../config/labels/ruby.tsv");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid label config {origin} row {row}: {message}")]
pub struct LabelConfigError {
    pub origin: String,
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ApiCategory {
    Network,
    Filesystem,
    Process,
    Codegen,
}

impl ApiCategory {
    pub const ALL: [ApiCategory; 4] = [ApiCategory::Network, ApiCategory::Filesystem, ApiCategory::Process, ApiCategory::Codegen];

    pub fn as_str(self) -> &'static str {
        match self {
            ApiCategory::Network => "NETWORK",
            ApiCategory::Filesystem => "FILESYSTEM",
            ApiCategory::Process => "PROCESS",
            ApiCategory::Codegen => "CODEGEN",
        }
    }
}

impl fmt::Display for ApiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApiCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ApiCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Source,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchMode {
    GlobalName,
    QualifiedStatic,
    InstanceMethod,
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GLOBAL_NAME" => Ok(MatchMode::GlobalName),
            "QUALIFIED_STATIC" => Ok(MatchMode::QualifiedStatic),
            "INSTANCE_METHOD" => Ok(MatchMode::InstanceMethod),
            other => Err(format!("unknown match mode `{other}`")),
        }
    }
}

/// How sure a match is. Ordered so `max` picks the strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    /// Method name only.
    Low,
    /// Method name on a receiver carrying the default instance name.
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApiLabel {
    pub subject_language: SubjectLanguage,
    pub qualified_name: String,
    pub category: ApiCategory,
    pub roles: BTreeSet<Role>,
    pub match_mode: MatchMode,
}

impl ApiLabel {
    pub fn is_source(&self) -> bool {
        self.roles.contains(&Role::Source)
    }

    pub fn is_sink(&self) -> bool {
        self.roles.contains(&Role::Sink)
    }

    /// Last path segment, split on `.` or `::`.
    pub fn method(&self) -> &str {
        split_last(&self.qualified_name).1
    }

    /// Default instance name for [`MatchMode::InstanceMethod`]: the segment
    /// before the method, lowercased (`ssl.SSLSocket.read` -> `sslsocket`).
    pub fn instance_name(&self) -> String {
        let (head, _) = split_last(&self.qualified_name);
        split_last(head).1.to_lowercase()
    }
}

fn split_last(path: &str) -> (&str, &str) {
    let dot = path.rfind('.').map(|i| (i, i + 1));
    let colons = path.rfind("::").map(|i| (i, i + 2));
    match dot.max(colons) {
        Some((cut, rest)) => (&path[..cut], &path[rest..]),
        None => ("", path),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiLabelSet {
    labels: BTreeMap<SubjectLanguage, BTreeMap<String, ApiLabel>>,
}

impl ApiLabelSet {
    /// Seed sets for all three languages.
    pub fn defaults() -> ApiLabelSet {
        let mut set = ApiLabelSet::default();
        for (origin, text) in [("python.tsv", DEFAULT_PYTHON), ("node.tsv", DEFAULT_NODE), ("ruby.tsv", DEFAULT_RUBY)] {
            set.extend_from_str(text, origin).expect("shipped label config is valid");
        }
        set
    }

    pub fn parse(text: &str, origin: &str) -> Result<ApiLabelSet, LabelConfigError> {
        let mut set = ApiLabelSet::default();
        set.extend_from_str(text, origin)?;
        Ok(set)
    }

    pub fn load(paths: &[impl AsRef<Path>]) -> Result<ApiLabelSet, LabelConfigError> {
        let mut set = ApiLabelSet::default();
        for path in paths {
            let path = path.as_ref();
            let origin = path.display().to_string();
            let text = std::fs::read_to_string(path)
                .map_err(|e| LabelConfigError { origin: origin.clone(), row: 0, message: e.to_string() })?;
            set.extend_from_str(&text, &origin)?;
        }
        Ok(set)
    }

    fn extend_from_str(&mut self, text: &str, origin: &str) -> Result<(), LabelConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let row = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| LabelConfigError { origin: origin.to_string(), row, message };
            let cols: Vec<&str> = line.split('\t').map(str::trim).filter(|c| !c.is_empty()).collect();
            let [language, name, category, roles, mode] = cols[..] else {
                return Err(err(format!("expected 5 tab-separated columns, found {}", cols.len())));
            };
            let subject_language: SubjectLanguage = language.parse().map_err(err)?;
            let category: ApiCategory = category.parse().map_err(err)?;
            let match_mode: MatchMode = mode.parse().map_err(err)?;
            let mut role_set = BTreeSet::new();
            for r in roles.split([',', '|']).map(str::trim).filter(|r| !r.is_empty()) {
                role_set.insert(match r.to_ascii_uppercase().as_str() {
                    "SOURCE" => Role::Source,
                    "SINK" => Role::Sink,
                    other => return Err(err(format!("unknown role `{other}`"))),
                });
            }
            if role_set.is_empty() {
                return Err(err("roles must not be empty".into()));
            }
            if matches!(category, ApiCategory::Process | ApiCategory::Codegen) && role_set.contains(&Role::Source) {
                return Err(err(format!("{category} labels are sinks only")));
            }
            if match_mode == MatchMode::InstanceMethod && split_last(name).0.is_empty() {
                return Err(err("instance-method labels need an instance segment".into()));
            }
            let label = ApiLabel {
                subject_language,
                qualified_name: name.to_string(),
                category,
                roles: role_set,
                match_mode,
            };
            let per_lang = self.labels.entry(subject_language).or_default();
            if per_lang.contains_key(name) {
                return Err(err(format!("duplicate qualified_name `{name}`")));
            }
            per_lang.insert(name.to_string(), label);
        }
        Ok(())
    }

    pub fn get(&self, language: SubjectLanguage, qualified_name: &str) -> Option<&ApiLabel> {
        self.labels.get(&language)?.get(qualified_name)
    }

    pub fn for_language(&self, language: SubjectLanguage) -> impl Iterator<Item = &ApiLabel> {
        self.labels.get(&language).into_iter().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
