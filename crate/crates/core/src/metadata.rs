//! Metadata findings: typosquats, cross-registry name collisions, relations
//! to known malware and shipped executables.

use crate::registry::{FileEntry, PackageCoordinate, PackageMetadata, Registry};
use crate::version::Constraint;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MetadataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> MetadataError {
    MetadataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetadataConfig {
    /// Names up to this many characters (after folding) use `short_threshold`.
    pub short_name_len: usize,
    pub short_threshold: usize,
    pub long_threshold: usize,
    /// Popular list cut per registry, by downloads.
    pub top_n: usize,
    pub release_window_days: i64,
}

impl Default for MetadataConfig {
    fn default() -> Self {
        MetadataConfig { short_name_len: 6, short_threshold: 1, long_threshold: 2, top_n: 10_000, release_window_days: 7 }
    }
}

impl MetadataConfig {
    pub fn threshold_for(&self, folded_name: &str) -> usize {
        if folded_name.chars().count() <= self.short_name_len {
            self.short_threshold
        } else {
            self.long_threshold
        }
    }
}

/// Lowercases and folds runs of `-`, `_` and `.` into one `-`.
pub fn fold_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut prev_sep = false;
    for ch in name.trim().chars().flat_map(char::to_lowercase) {
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

/// Unrestricted Damerau-Levenshtein distance over Unicode scalar values
/// (insert, delete, substitute, transpose adjacent; unit costs).
///
/// Unlike the optimal-string-alignment variant this allows edits between
/// transposed characters, which keeps the triangle inequality.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    let inf = n + m;
    let w = m + 2;
    // Row/column 0 hold the sentinel; the table is shifted by one.
    let mut d = vec![0usize; (n + 2) * w];
    let at = |i: usize, j: usize| i * w + j;
    d[at(0, 0)] = inf;
    for i in 0..=n {
        d[at(i + 1, 0)] = inf;
        d[at(i + 1, 1)] = i;
    }
    for j in 0..=m {
        d[at(0, j + 1)] = inf;
        d[at(1, j + 1)] = j;
    }
    let mut last_row: HashMap<char, usize> = HashMap::new();
    for i in 1..=n {
        let mut last_col = 0;
        for j in 1..=m {
            let k = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let l = last_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_col = j;
                0
            } else {
                1
            };
            let substitute = d[at(i, j)] + cost;
            let insert = d[at(i + 1, j)] + 1;
            let delete = d[at(i, j + 1)] + 1;
            let transpose = d[at(k, l)] + (i - k - 1) + 1 + (j - l - 1);
            d[at(i + 1, j + 1)] = substitute.min(insert).min(delete).min(transpose);
        }
        last_row.insert(a[i - 1], i);
    }
    d[at(n + 1, m + 1)]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularEntry {
    pub registry: Registry,
    pub name: String,
    pub downloads: u64,
    #[serde(default)]
    pub authors: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct PopularFile {
    packages: Vec<PopularEntry>,
}

/// Per-registry popular packages, downloads descending, cut at `top_n`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PopularList {
    by_registry: BTreeMap<Registry, Vec<PopularEntry>>,
}

impl PopularList {
    pub fn new(entries: Vec<PopularEntry>, top_n: usize) -> PopularList {
        let mut by_registry: BTreeMap<Registry, Vec<PopularEntry>> = BTreeMap::new();
        for mut e in entries {
            e.name = e.registry.canonical_name(&e.name);
            by_registry.entry(e.registry).or_default().push(e);
        }
        for list in by_registry.values_mut() {
            list.sort_by(|x, y| y.downloads.cmp(&x.downloads).then_with(|| x.name.cmp(&y.name)));
            list.dedup_by(|x, y| x.name == y.name);
            list.truncate(top_n);
        }
        PopularList { by_registry }
    }

    /// Reads `{"packages": [{registry, name, downloads, authors}]}`.
    pub fn load(path: &Path, top_n: usize) -> Result<PopularList, MetadataError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let file: PopularFile = serde_json::from_str(&text).map_err(|e| MetadataError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(PopularList::new(file.packages, top_n))
    }

    pub fn registry(&self, registry: Registry) -> &[PopularEntry] {
        self.by_registry.get(&registry).map_or(&[], Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PopularEntry> {
        self.by_registry.values().flatten()
    }

    /// Smallest download count that made the cut, per registry.
    pub fn floor(&self, registry: Registry) -> Option<u64> {
        self.registry(registry).last().map(|e| e.downloads)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TyposquatHit {
    pub popular_name: String,
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossRegistryHit {
    pub registry: Registry,
    pub name: String,
    pub author_mismatch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MalwareRelation {
    SharedAuthor,
    DependsOn,
    ReleaseWindow,
}

impl MalwareRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            MalwareRelation::SharedAuthor => "SHARED_AUTHOR",
            MalwareRelation::DependsOn => "DEPENDS_ON",
            MalwareRelation::ReleaseWindow => "RELEASE_WINDOW",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelatedMalware {
    pub malware: PackageCoordinate,
    pub relation: MalwareRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownMalware {
    pub coordinate: PackageCoordinate,
    #[serde(default)]
    pub authors: Vec<String>,
    pub release_time: DateTime<Utc>,
}

/// Known-malware records, one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KnownMalwareList {
    entries: Vec<KnownMalware>,
}

impl KnownMalwareList {
    pub fn new(mut entries: Vec<KnownMalware>) -> KnownMalwareList {
        entries.sort_by(|a, b| a.coordinate.cmp(&b.coordinate));
        entries.dedup_by(|a, b| a.coordinate == b.coordinate);
        KnownMalwareList { entries }
    }

    pub fn parse(text: &str, origin: &str) -> Result<KnownMalwareList, MetadataError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: KnownMalware = serde_json::from_str(line).map_err(|e| MetadataError::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(KnownMalwareList::new(entries))
    }

    /// A missing file is an empty list.
    pub fn load(path: &Path) -> Result<KnownMalwareList, MetadataError> {
        match std::fs::read_to_string(path) {
            Ok(text) => KnownMalwareList::parse(&text, &path.display().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(KnownMalwareList::default()),
            Err(e) => Err(io_err(path, e)),
        }
    }

    /// Appends one record to the file unless the coordinate is already listed.
    pub fn append(path: &Path, entry: &KnownMalware) -> Result<bool, MetadataError> {
        let current = KnownMalwareList::load(path)?;
        if current.contains(&entry.coordinate) {
            return Ok(false);
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let mut file =
            std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        let line = serde_json::to_string(entry).expect("malware record serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
        Ok(true)
    }

    pub fn entries(&self) -> &[KnownMalware] {
        &self.entries
    }

    pub fn contains(&self, coord: &PackageCoordinate) -> bool {
        self.entries.binary_search_by(|e| e.coordinate.cmp(coord)).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Folded names of packages per registry with the union of their authors.
#[derive(Debug, Clone, Default)]
pub struct NameIndex {
    names: BTreeMap<(Registry, String), (String, BTreeSet<String>)>,
}

impl NameIndex {
    pub fn insert(&mut self, registry: Registry, name: &str, authors: &[String]) {
        let entry = self.names.entry((registry, fold_name(name))).or_insert_with(|| (name.to_string(), BTreeSet::new()));
        entry.1.extend(authors.iter().map(|a| normalize_author(a)));
    }

    pub fn from_sources(popular: &PopularList, metas: &[PackageMetadata]) -> NameIndex {
        let mut index = NameIndex::default();
        for e in popular.entries() {
            index.insert(e.registry, &e.name, &e.authors);
        }
        for m in metas {
            index.insert(m.coordinate.registry, &m.coordinate.name, &m.authors);
        }
        index
    }
}

fn normalize_author(a: &str) -> String {
    a.trim().to_lowercase()
}

fn author_set(authors: &[String]) -> BTreeSet<String> {
    authors.iter().map(|a| normalize_author(a)).filter(|a| !a.is_empty()).collect()
}

/// Popular names in the same registry within the length-scaled threshold.
pub fn find_typosquats(meta: &PackageMetadata, popular: &PopularList, cfg: &MetadataConfig) -> Vec<TyposquatHit> {
    let registry = meta.coordinate.registry;
    let list = popular.registry(registry);
    let own = &meta.coordinate.name;
    if list.iter().any(|e| &e.name == own) {
        return Vec::new();
    }
    let folded = fold_name(own);
    let threshold = cfg.threshold_for(&folded);
    let authors = author_set(&meta.authors);
    let mut hits: Vec<TyposquatHit> = list
        .iter()
        .filter(|e| author_set(&e.authors).is_disjoint(&authors))
        .filter_map(|e| {
            let other = fold_name(&e.name);
            // Cheap length bound before the quadratic distance.
            if folded.chars().count().abs_diff(other.chars().count()) > threshold {
                return None;
            }
            let mut distance = edit_distance(&folded, &other);
            if distance == 0 {
                distance = 1;
            }
            (distance <= threshold).then(|| TyposquatHit { popular_name: e.name.clone(), distance })
        })
        .collect();
    hits.sort();
    hits
}

/// Same folded name in other registries; flagged when both author sets are
/// known and disjoint.
pub fn cross_registry_check(meta: &PackageMetadata, index: &NameIndex) -> Vec<CrossRegistryHit> {
    let folded = fold_name(&meta.coordinate.name);
    let own = author_set(&meta.authors);
    Registry::ALL
        .into_iter()
        .filter(|&r| r != meta.coordinate.registry)
        .filter_map(|r| {
            let (name, authors) = index.names.get(&(r, folded.clone()))?;
            let author_mismatch = !own.is_empty() && !authors.is_empty() && own.is_disjoint(authors);
            Some(CrossRegistryHit { registry: r, name: name.clone(), author_mismatch })
        })
        .collect()
}

/// Relations to listed malware. `history` holds other ingested versions of
/// the same package; the release window is checked for the package's own
/// release and every older version.
pub fn correlate_known_malware(
    meta: &PackageMetadata,
    history: &[&PackageMetadata],
    malware: &KnownMalwareList,
    cfg: &MetadataConfig,
) -> Vec<RelatedMalware> {
    let own_authors = author_set(&meta.authors);
    let window = Duration::days(cfg.release_window_days);
    let own_version = crate::version::Version::parse(&meta.coordinate.version);
    let mut releases = vec![meta.release_time];
    for h in history.iter().filter(|h| h.coordinate.same_package(&meta.coordinate) && h.coordinate != meta.coordinate) {
        let older = match (crate::version::Version::parse(&h.coordinate.version), &own_version) {
            (Some(v), Some(own)) => v < *own,
            _ => h.release_time < meta.release_time,
        };
        if older {
            releases.push(h.release_time);
        }
    }
    let mut out = BTreeSet::new();
    for m in malware.entries() {
        if m.coordinate == meta.coordinate {
            continue;
        }
        if !own_authors.is_disjoint(&author_set(&m.authors)) {
            out.insert(RelatedMalware { malware: m.coordinate.clone(), relation: MalwareRelation::SharedAuthor });
        }
        if m.coordinate.registry != meta.coordinate.registry {
            continue;
        }
        let depends = meta.runtime_deps().any(|d| {
            meta.coordinate.registry.canonical_name(&d.name) == m.coordinate.name
                && Constraint::parse(&d.constraint).is_ok_and(|c| c.matches(&m.coordinate.version))
        });
        if depends {
            out.insert(RelatedMalware { malware: m.coordinate.clone(), relation: MalwareRelation::DependsOn });
        }
        if !m.coordinate.same_package(&meta.coordinate)
            && releases.iter().any(|&t| (t - m.release_time).abs() <= window)
        {
            out.insert(RelatedMalware { malware: m.coordinate.clone(), relation: MalwareRelation::ReleaseWindow });
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataFindings {
    pub coordinate: PackageCoordinate,
    pub typosquat_of: Vec<TyposquatHit>,
    pub cross_registry_hits: Vec<CrossRegistryHit>,
    pub related_malware: Vec<RelatedMalware>,
    pub binary_flags: Vec<FileEntry>,
}

/// Inputs shared by every package in one metadata pass.
#[derive(Debug, Clone, Default)]
pub struct MetadataContext {
    pub config: MetadataConfig,
    pub popular: PopularList,
    pub malware: KnownMalwareList,
    pub names: NameIndex,
}

pub fn analyze(meta: &PackageMetadata, history: &[&PackageMetadata], ctx: &MetadataContext) -> MetadataFindings {
    MetadataFindings {
        coordinate: meta.coordinate.clone(),
        typosquat_of: find_typosquats(meta, &ctx.popular, &ctx.config),
        cross_registry_hits: cross_registry_check(meta, &ctx.names),
        related_malware: correlate_known_malware(meta, history, &ctx.malware, &ctx.config),
        binary_flags: meta.executables().cloned().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{DeclaredDep, DepKind, FileKind, SubjectLanguage};
    use chrono::TimeZone;

    fn meta(registry: Registry, name: &str, version: &str, authors: &[&str]) -> PackageMetadata {
        PackageMetadata {
            coordinate: PackageCoordinate::new(registry, name, version).unwrap(),
            authors: authors.iter().map(|s| s.to_string()).collect(),
            release_time: Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap(),
            downloads: 0,
            provenance: vec![],
            declared_deps: vec![],
            subject_language: SubjectLanguage::Js,
            file_inventory: vec![],
            import_name: None,
            archive: None,
            traces: vec![],
        }
    }

    fn popular(entries: &[(Registry, &str, u64, &str)]) -> PopularList {
        PopularList::new(
            entries
                .iter()
                .map(|&(registry, name, downloads, author)| PopularEntry {
                    registry,
                    name: name.into(),
                    downloads,
                    authors: vec![author.into()],
                })
                .collect(),
            10_000,
        )
    }

    #[test]
    fn distance_examples() {
        assert_eq!(edit_distance("crossenv", "cross-env"), 1);
        assert_eq!(edit_distance("x", "x"), 0);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("ab", "ba"), 1);
        // Transposition followed by an insertion between the pair.
        assert_eq!(edit_distance("ca", "abc"), 2);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn folding() {
        assert_eq!(fold_name("Cross__Env"), "cross-env");
        assert_eq!(fold_name("a.b-_c"), "a-b-c");
    }

    #[test]
    fn typosquat_hit_and_self_exclusion() {
        let list = popular(&[(Registry::Npm, "cross-env", 1000, "kentcdodds"), (Registry::Npm, "express", 900, "tj")]);
        let cfg = MetadataConfig::default();
        let hits = find_typosquats(&meta(Registry::Npm, "crossenv", "1.0.0", &["evil"]), &list, &cfg);
        assert_eq!(hits, vec![TyposquatHit { popular_name: "cross-env".into(), distance: 1 }]);
        assert!(find_typosquats(&meta(Registry::Npm, "cross-env", "7.0.3", &["kentcdodds"]), &list, &cfg).is_empty());
        assert!(find_typosquats(&meta(Registry::Npm, "crossenv", "1.0.0", &["kentcdodds"]), &list, &cfg).is_empty());
    }

    #[test]
    fn folded_equal_names_count_as_one() {
        let list = popular(&[(Registry::Pypi, "python-dateutil", 10, "a")]);
        let mut m = meta(Registry::Pypi, "python-dateutil", "1", &["b"]);
        m.coordinate.name = "python.dateutil".into();
        let hits = find_typosquats(&m, &list, &MetadataConfig::default());
        assert_eq!(hits[0].distance, 1);
    }

    #[test]
    fn cross_registry() {
        let list = popular(&[(Registry::Pypi, "left-pad", 5, "alice")]);
        let index = NameIndex::from_sources(&list, &[]);
        let same = cross_registry_check(&meta(Registry::Npm, "left-pad", "1", &["alice"]), &index);
        assert_eq!(same.len(), 1);
        assert!(!same[0].author_mismatch);
        let other = cross_registry_check(&meta(Registry::Npm, "left_pad", "1", &["mallory"]), &index);
        assert!(other[0].author_mismatch);
        assert!(cross_registry_check(&meta(Registry::Npm, "absent", "1", &["x"]), &index).is_empty());
    }

    #[test]
    fn malware_relations() {
        let bad = KnownMalware {
            coordinate: PackageCoordinate::new(Registry::Npm, "flatmap-stream", "0.1.1").unwrap(),
            authors: vec!["right9ctrl".into()],
            release_time: Utc.with_ymd_and_hms(2020, 5, 29, 0, 0, 0).unwrap(),
        };
        let list = KnownMalwareList::new(vec![bad.clone()]);
        let cfg = MetadataConfig::default();

        let mut m = meta(Registry::Npm, "event-stream", "3.3.6", &["Right9ctrl"]);
        m.declared_deps.push(DeclaredDep { name: "flatmap-stream".into(), constraint: "~0.1.1".into(), kind: DepKind::Runtime });
        let rel: Vec<MalwareRelation> = correlate_known_malware(&m, &[], &list, &cfg).into_iter().map(|r| r.relation).collect();
        // Released three days after the malware.
        assert_eq!(rel, vec![MalwareRelation::SharedAuthor, MalwareRelation::DependsOn, MalwareRelation::ReleaseWindow]);

        m.release_time = Utc.with_ymd_and_hms(2020, 7, 1, 0, 0, 0).unwrap();
        m.declared_deps[0].constraint = "^0.2.0".into();
        m.authors = vec!["someone".into()];
        assert!(correlate_known_malware(&m, &[], &list, &cfg).is_empty());

        let mut old = m.clone();
        old.coordinate.version = "3.3.5".into();
        old.release_time = bad.release_time + Duration::days(7);
        let rel = correlate_known_malware(&m, &[&old], &list, &cfg);
        assert_eq!(rel[0].relation, MalwareRelation::ReleaseWindow);
    }

    #[test]
    fn malware_list_append_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("malware.jsonl");
        let entry = KnownMalware {
            coordinate: PackageCoordinate::new(Registry::Pypi, "x", "1").unwrap(),
            authors: vec![],
            release_time: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
        };
        assert!(KnownMalwareList::append(&path, &entry).unwrap());
        assert!(!KnownMalwareList::append(&path, &entry).unwrap());
        assert_eq!(KnownMalwareList::load(&path).unwrap().entries().len(), 1);
        assert!(KnownMalwareList::parse("{bad\n", "inline").is_err());
    }

    #[test]
    fn binaries_are_flagged() {
        let mut m = meta(Registry::Pypi, "tool", "1", &[]);
        m.file_inventory.push(FileEntry { path: "bin/x".into(), byte_size: 4, kind: FileKind::ElfBinary, magic_prefix: "7f454c46".into() });
        m.file_inventory.push(FileEntry { path: "a.py".into(), byte_size: 4, kind: FileKind::Source, magic_prefix: "".into() });
        let f = analyze(&m, &[], &MetadataContext::default());
        assert_eq!(f.binary_flags.len(), 1);
    }
}
