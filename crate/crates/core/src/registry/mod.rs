//! Package identity, registry metadata and archive inventory.

mod archive;
mod fixture;
pub mod live;

pub use archive::{classify_bytes, classify_files, ArchiveContents, ArchiveFile};
pub use fixture::{FixtureDocument, FixtureSource, FixtureDependency};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("package not found: {0}")]
    NotFound(String),
    #[error("schema error in {location}: {message}")]
    Schema { location: String, message: String },
    #[error("corrupt archive {path}: {message}")]
    ArchiveCorrupt { path: String, message: String },
    #[error("invalid coordinate `{0}`")]
    InvalidCoordinate(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("http error: {0}")]
    Http(String),
}

impl IngestError {
    pub(crate) fn schema(location: impl Into<String>, message: impl fmt::Display) -> Self {
        IngestError::Schema { location: location.into(), message: message.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.into().display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Registry {
    #[serde(alias = "pypi")]
    Pypi,
    #[serde(alias = "npm")]
    Npm,
    #[serde(alias = "rubygems")]
    Rubygems,
}

impl Registry {
    pub const ALL: [Registry; 3] = [Registry::Pypi, Registry::Npm, Registry::Rubygems];

    pub fn language(self) -> SubjectLanguage {
        match self {
            Registry::Pypi => SubjectLanguage::Py,
            Registry::Npm => SubjectLanguage::Js,
            Registry::Rubygems => SubjectLanguage::Rb,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Registry::Pypi => "pypi",
            Registry::Npm => "npm",
            Registry::Rubygems => "rubygems",
        }
    }

    /// Canonical form used for identity and comparison. PyPI folds runs of
    /// `-`, `_` and `.` into a single `-` (PEP 503); every registry lowercases.
    pub fn canonical_name(self, raw: &str) -> String {
        let lower = raw.trim().to_lowercase();
        match self {
            Registry::Pypi => {
                let mut out = String::with_capacity(lower.len());
                let mut prev_sep = false;
                for ch in lower.chars() {
                    if matches!(ch, '-' | '_' | '.') {
                        if !prev_sep {
                            out.push('-');
                        }
                        prev_sep = true;
                    } else {
                        out.push(ch);
                        prev_sep = false;
                    }
                }
                out
            }
            Registry::Npm | Registry::Rubygems => lower,
        }
    }
}

impl fmt::Display for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Registry {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pypi" | "py" | "pip" => Ok(Registry::Pypi),
            "npm" | "js" | "node" => Ok(Registry::Npm),
            "rubygems" | "gem" | "gems" | "rb" => Ok(Registry::Rubygems),
            other => Err(IngestError::InvalidCoordinate(format!("unknown registry `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SubjectLanguage {
    Py,
    Js,
    Rb,
}

impl SubjectLanguage {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectLanguage::Py => "PY",
            SubjectLanguage::Js => "JS",
            SubjectLanguage::Rb => "RB",
        }
    }

    /// File extensions analyzed as source for this language.
    pub fn source_extensions(self) -> &'static [&'static str] {
        match self {
            SubjectLanguage::Py => &["py"],
            SubjectLanguage::Js => &["js", "cjs", "mjs"],
            SubjectLanguage::Rb => &["rb", "gemspec", "rake"],
        }
    }
}

impl FromStr for SubjectLanguage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PY" | "PYTHON" => Ok(SubjectLanguage::Py),
            "JS" | "NODE" | "NODE.JS" | "JAVASCRIPT" => Ok(SubjectLanguage::Js),
            "RB" | "RUBY" => Ok(SubjectLanguage::Rb),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

/// `(registry, name, version)` with the name in registry-canonical form.
/// Ordering is by registry, then name, then version string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PackageCoordinate {
    pub registry: Registry,
    pub name: String,
    pub version: String,
}

impl PackageCoordinate {
    pub fn new(registry: Registry, name: &str, version: &str) -> Result<Self, IngestError> {
        let name = registry.canonical_name(name);
        let version = version.trim().to_string();
        if name.is_empty() || version.is_empty() {
            return Err(IngestError::InvalidCoordinate(format!("{registry}/{name}@{version}")));
        }
        Ok(PackageCoordinate { registry, name, version })
    }

    /// Same package, any version.
    pub fn same_package(&self, other: &PackageCoordinate) -> bool {
        self.registry == other.registry && self.name == other.name
    }
}

impl fmt::Display for PackageCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}@{}", self.registry, self.name, self.version)
    }
}

impl FromStr for PackageCoordinate {
    type Err = IngestError;

    /// Parses `registry/name@version`; scoped npm names keep their slash
    /// (`npm/@babel/core@7.0.0`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidCoordinate(s.to_string());
        let (registry, rest) = s.split_once('/').ok_or_else(bad)?;
        let at = rest.rfind('@').filter(|&i| i > 0).ok_or_else(bad)?;
        PackageCoordinate::new(registry.parse()?, &rest[..at], &rest[at + 1..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepKind {
    Runtime,
    Dev,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeclaredDep {
    pub name: String,
    pub constraint: String,
    pub kind: DepKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileKind {
    Source,
    NativeExt,
    PeBinary,
    ElfBinary,
    Other,
}

impl FileKind {
    pub fn is_executable(self) -> bool {
        matches!(self, FileKind::PeBinary | FileKind::ElfBinary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub byte_size: u64,
    pub kind: FileKind,
    /// First eight bytes, lowercase hex.
    pub magic_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageMetadata {
    pub coordinate: PackageCoordinate,
    pub authors: Vec<String>,
    pub release_time: DateTime<Utc>,
    pub downloads: u64,
    /// Notes about values that were defaulted or repaired during ingestion.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
    pub declared_deps: Vec<DeclaredDep>,
    pub subject_language: SubjectLanguage,
    pub file_inventory: Vec<FileEntry>,
    /// Module name used by dependents when it differs from the package name
    /// (`pyyaml` is imported as `yaml`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import_name: Option<String>,
    /// Local archive or unpacked source tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
    /// Captured trace files in the normalized trace format.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<PathBuf>,
}

impl PackageMetadata {
    pub fn runtime_deps(&self) -> impl Iterator<Item = &DeclaredDep> {
        self.declared_deps.iter().filter(|d| d.kind == DepKind::Runtime)
    }

    /// Module name dependents import this package under.
    pub fn module_name(&self) -> String {
        if let Some(name) = &self.import_name {
            return name.clone();
        }
        match self.coordinate.registry {
            Registry::Pypi => self.coordinate.name.replace('-', "_"),
            _ => self.coordinate.name.clone(),
        }
    }

    pub fn executables(&self) -> impl Iterator<Item = &FileEntry> {
        self.file_inventory.iter().filter(|f| f.kind.is_executable())
    }

    /// Drops self-references and canonicalizes dependency names.
    pub(crate) fn normalize_deps(&mut self) {
        let registry = self.coordinate.registry;
        let own = self.coordinate.name.clone();
        let before = self.declared_deps.len();
        for dep in &mut self.declared_deps {
            dep.name = registry.canonical_name(&dep.name);
        }
        self.declared_deps.retain(|d| d.name != own);
        if self.declared_deps.len() != before {
            self.provenance.push("self-referencing dependency dropped".to_string());
        }
        self.declared_deps.sort();
        self.declared_deps.dedup();
    }
}
