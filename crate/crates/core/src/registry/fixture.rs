//! Offline registry: one `metadata.json` document per package version.
//!
//! ```text
//! <root>/<registry>/<name>/<version>/metadata.json
//! <root>/<registry>/<name>/<version>/package/        unpacked sources, or
//! <root>/<registry>/<name>/<version>/package.tgz     (.tar.gz .zip .whl .gem)
//! <root>/<registry>/<name>/<version>/*.jsonl         captured traces
//! ```
//!
//! The directory layout is a convention; identity comes from the document.

use super::{
    ArchiveContents, DeclaredDep, DepKind, IngestError, PackageCoordinate, PackageMetadata, Registry,
    SubjectLanguage,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const DOC_NAME: &str = "metadata.json";
const ARCHIVE_CANDIDATES: [&str; 7] =
    ["package", "package.tgz", "package.tar.gz", "package.tar", "package.zip", "package.whl", "package.gem"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDocument {
    pub registry: String,
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub authors: Vec<String>,
    pub release_time: DateTime<Utc>,
    #[serde(default)]
    pub downloads: Option<u64>,
    #[serde(default)]
    pub dependencies: Vec<FixtureDependency>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub import_name: Option<String>,
    /// Archive path relative to the document; defaults to the first existing
    /// `package*` entry next to it.
    #[serde(default)]
    pub archive: Option<String>,
    /// Trace paths relative to the document; defaults to every `*.jsonl`
    /// next to it.
    #[serde(default)]
    pub traces: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDependency {
    pub name: String,
    #[serde(default = "any_constraint")]
    pub constraint: String,
    #[serde(default = "runtime_kind")]
    pub kind: DepKind,
}

fn any_constraint() -> String {
    "*".to_string()
}

fn runtime_kind() -> DepKind {
    DepKind::Runtime
}

#[derive(Debug, Clone)]
pub struct FixtureSource {
    root: PathBuf,
    index: BTreeMap<PackageCoordinate, PathBuf>,
}

impl FixtureSource {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, IngestError> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(IngestError::NotFound(format!("fixture directory {}", root.display())));
        }
        let mut index = BTreeMap::new();
        let mut stack = vec![root.clone()];
        while let Some(dir) = stack.pop() {
            let doc = dir.join(DOC_NAME);
            if doc.is_file() {
                let parsed = read_document(&doc)?;
                let registry: Registry = parsed.registry.parse()?;
                let coord = PackageCoordinate::new(registry, &parsed.name, &parsed.version)?;
                if let Some(prev) = index.insert(coord.clone(), doc.clone()) {
                    return Err(IngestError::schema(
                        doc.display().to_string(),
                        format!("duplicate coordinate {coord} (also in {})", prev.display()),
                    ));
                }
                // Package sources below a document are not fixture documents.
                continue;
            }
            let entries = std::fs::read_dir(&dir).map_err(|e| IngestError::io(&dir, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| IngestError::io(&dir, e))?;
                if entry.file_type().map_err(|e| IngestError::io(entry.path(), e))?.is_dir() {
                    stack.push(entry.path());
                }
            }
        }
        Ok(FixtureSource { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn coordinates(&self) -> impl Iterator<Item = &PackageCoordinate> {
        self.index.keys()
    }

    pub fn fetch_metadata(&self, coord: &PackageCoordinate) -> Result<PackageMetadata, IngestError> {
        let doc_path = self.index.get(coord).ok_or_else(|| IngestError::NotFound(coord.to_string()))?;
        let doc = read_document(doc_path)?;
        let dir = doc_path.parent().expect("document has a parent directory");
        document_to_metadata(doc, dir)
    }

    /// Every document, optionally restricted to one registry, in coordinate order.
    pub fn load_all(&self, registry: Option<Registry>) -> Result<Vec<PackageMetadata>, IngestError> {
        self.index
            .keys()
            .filter(|c| registry.is_none_or(|r| c.registry == r))
            .map(|c| self.fetch_metadata(c))
            .collect()
    }
}

fn read_document(path: &Path) -> Result<FixtureDocument, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IngestError::schema(path.display().to_string(), e))
}

fn document_to_metadata(doc: FixtureDocument, dir: &Path) -> Result<PackageMetadata, IngestError> {
    let registry: Registry = doc.registry.parse()?;
    let coordinate = PackageCoordinate::new(registry, &doc.name, &doc.version)?;
    let subject_language = match &doc.language {
        Some(l) => l.parse::<SubjectLanguage>().map_err(|e| IngestError::schema(dir.display().to_string(), e))?,
        None => registry.language(),
    };
    let mut provenance = Vec::new();
    let downloads = doc.downloads.unwrap_or_else(|| {
        provenance.push("downloads not reported by source; recorded as 0".to_string());
        0
    });
    let archive = match &doc.archive {
        Some(rel) => Some(dir.join(rel)),
        None => ARCHIVE_CANDIDATES.iter().map(|c| dir.join(c)).find(|p| p.exists()),
    };
    let file_inventory = match &archive {
        Some(path) => ArchiveContents::open(path)?.inventory(),
        None => {
            provenance.push("no archive available; file inventory empty".to_string());
            Vec::new()
        }
    };
    let traces = match &doc.traces {
        Some(list) => list.iter().map(|t| dir.join(t)).collect(),
        None => {
            let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| IngestError::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            found
        }
    };
    let mut meta = PackageMetadata {
        coordinate,
        authors: doc.authors,
        release_time: doc.release_time,
        downloads,
        provenance,
        declared_deps: doc
            .dependencies
            .into_iter()
            .map(|d| DeclaredDep { name: d.name, constraint: d.constraint, kind: d.kind })
            .collect(),
        subject_language,
        file_inventory,
        import_name: doc.import_name,
        archive,
        traces,
    };
    meta.normalize_deps();
    Ok(meta)
}
