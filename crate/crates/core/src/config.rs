//! Pipeline settings file and the inputs it names.
//!
//! ```toml
//! resolution = "latest-satisfying"
//! labels = ["labels/node.tsv"]       # empty: built-in seed sets
//! rules = "rules.toml"               # absent: built-in rules
//! dynamic_dir = "dynamic"            # absent: built-in lists
//! popular = "popular.json"
//! known_malware = "known_malware.jsonl"
//! new_api_min_confidence = "MEDIUM"
//!
//! [metadata]
//! release_window_days = 7
//!
//! [static]
//! unit_budget = 10.0
//! ```
//!
//! Relative paths resolve against the settings file's directory.

use crate::cache::DigestBuilder;
use crate::dynamic::{DynamicConfig, DynamicConfigError};
use crate::graph::ResolutionPolicy;
use crate::heuristics::{RuleError, RuleSet};
use crate::metadata::{KnownMalwareList, MetadataConfig, MetadataError, PopularList};
use crate::static_analysis::{ApiLabelSet, Confidence, LabelConfigError, StaticConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub metadata: MetadataConfig,
    #[serde(rename = "static")]
    pub static_analysis: StaticConfig,
    pub resolution: ResolutionPolicy,
    pub labels: Vec<PathBuf>,
    pub rules: Option<PathBuf>,
    pub dynamic_dir: Option<PathBuf>,
    pub popular: Option<PathBuf>,
    pub known_malware: Option<PathBuf>,
    /// Weakest match counted when diffing categories between versions.
    pub new_api_min_confidence: Confidence,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            metadata: MetadataConfig::default(),
            static_analysis: StaticConfig::default(),
            resolution: ResolutionPolicy::default(),
            labels: Vec::new(),
            rules: None,
            dynamic_dir: None,
            popular: None,
            known_malware: None,
            new_api_min_confidence: Confidence::Medium,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("CONFIG_INVALID: {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CONFIG_INVALID: {0}")]
    Labels(#[from] LabelConfigError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("CONFIG_INVALID: {0}")]
    Dynamic(#[from] DynamicConfigError),
    #[error("CONFIG_INVALID: {0}")]
    Metadata(#[from] MetadataError),
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut s: Settings =
            toml::from_str(&text).map_err(|e| ConfigError::Invalid { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        s.labels.iter_mut().for_each(fix);
        for p in [&mut s.rules, &mut s.dynamic_dir, &mut s.popular, &mut s.known_malware].into_iter().flatten() {
            fix(p);
        }
        Ok(s)
    }

    /// Reads every file the settings name.
    pub fn resolve(&self) -> Result<Inputs, ConfigError> {
        let labels = if self.labels.is_empty() { ApiLabelSet::defaults() } else { ApiLabelSet::load(&self.labels)? };
        let rules = match &self.rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::defaults(),
        };
        let dynamic = match &self.dynamic_dir {
            Some(d) => DynamicConfig::load_dir(d)?,
            None => DynamicConfig::defaults(),
        };
        let popular = match &self.popular {
            Some(p) => PopularList::load(p, self.metadata.top_n)?,
            None => PopularList::default(),
        };
        let malware = match &self.known_malware {
            Some(p) => KnownMalwareList::load(p)?,
            None => KnownMalwareList::default(),
        };
        Ok(Inputs { settings: self.clone(), labels, rules, dynamic, popular, malware })
    }
}

/// Everything the analyzers and the rule engine read besides packages.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub settings: Settings,
    pub labels: ApiLabelSet,
    pub rules: RuleSet,
    pub dynamic: DynamicConfig,
    pub popular: PopularList,
    pub malware: KnownMalwareList,
}

impl Inputs {
    pub fn defaults() -> Inputs {
        Settings::default().resolve().expect("built-in configuration is valid")
    }

    /// Digest of the metadata analyzer's configuration inputs.
    pub fn metadata_digest(&self) -> String {
        let popular: Vec<_> = self.popular.entries().collect();
        DigestBuilder::new()
            .json("config", &self.settings.metadata)
            .json("popular", &popular)
            .json("malware", &self.malware)
            .finish()
    }

    /// Digest of the static analyzer's configuration inputs.
    pub fn static_digest(&self) -> String {
        DigestBuilder::new()
            .json("labels", &self.labels)
            .json("config", &self.settings.static_analysis)
            .finish()
    }

    /// Digest of the dynamic classifier's configuration inputs.
    pub fn dynamic_digest(&self) -> String {
        let d = &self.dynamic;
        DigestBuilder::new()
            .json("allowlist", &d.allowlist)
            .json("reads", d.sensitive_reads.patterns())
            .json("writes", d.sensitive_writes.patterns())
            .json("roots", &d.expected_roots)
            .json("build", &d.build_tools)
            .finish()
    }
}
