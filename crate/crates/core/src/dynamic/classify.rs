//! Trace classification into unexpected-behavior findings.

use super::trace::{EventDetail, RunMode, TraceEvent};
use crate::registry::{PackageCoordinate, Registry};
use globset::{GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::path::Path;

pub const DEFAULT_ALLOWLIST: &str = include_str!("../../config/dynamic/allowlist.txt");
pub const DEFAULT_SENSITIVE_READS: &str = include_str!("../../config/dynamic/sensitive_reads.txt");
pub const DEFAULT_SENSITIVE_WRITES: &str = include_str!("../../config/dynamic/sensitive_writes.txt");
pub const DEFAULT_EXPECTED_PROCESSES: &str = include_str!("../../config/dynamic/expected_processes.txt");

#[derive(Debug, thiserror::Error)]
pub enum DynamicConfigError {
    #[error("CONFIG_INVALID {origin}:{row}: {message}")]
    Invalid { origin: String, row: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Sensitive path patterns compiled into one matcher.
#[derive(Debug, Clone)]
pub struct PathPatterns {
    patterns: Vec<String>,
    set: GlobSet,
}

impl PathPatterns {
    pub fn parse(text: &str, origin: &str) -> Result<PathPatterns, DynamicConfigError> {
        let mut builder = GlobSetBuilder::new();
        let mut patterns = Vec::new();
        for (row, raw) in rows(text) {
            for expanded in expand_user(raw) {
                for glob in [expanded.clone(), format!("{}/**", expanded.trim_end_matches('/'))] {
                    let g = GlobBuilder::new(&glob).literal_separator(true).build().map_err(|e| DynamicConfigError::Invalid {
                        origin: origin.to_string(),
                        row,
                        message: e.to_string(),
                    })?;
                    builder.add(g);
                }
            }
            patterns.push(raw.to_string());
        }
        let set = builder
            .build()
            .map_err(|e| DynamicConfigError::Invalid { origin: origin.to_string(), row: 0, message: e.to_string() })?;
        Ok(PathPatterns { patterns, set })
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn matches(&self, path: &str) -> bool {
        self.set.is_match(normalize_path(path))
    }
}

/// `<user>` stands for any home directory, including root's.
fn expand_user(pattern: &str) -> Vec<String> {
    match pattern.strip_prefix("/home/<user>") {
        Some(rest) => vec![format!("/home/*{rest}"), format!("/root{rest}")],
        None => vec![pattern.replace("<user>", "*")],
    }
}

/// Resolves `.` and `..` segments and duplicate slashes.
fn normalize_path(path: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            s => parts.push(s),
        }
    }
    format!("/{}", parts.join("/"))
}

#[derive(Debug, Clone)]
pub struct DynamicConfig {
    /// Registered domains; a host matches by equality or dot-suffix.
    pub allowlist: Vec<String>,
    pub sensitive_reads: PathPatterns,
    pub sensitive_writes: PathPatterns,
    pub expected_roots: BTreeMap<Registry, BTreeSet<String>>,
    /// Compile tools allowed below a registry client during INSTALL.
    pub build_tools: BTreeSet<String>,
}

impl DynamicConfig {
    pub fn defaults() -> DynamicConfig {
        DynamicConfig::parse(DEFAULT_ALLOWLIST, DEFAULT_SENSITIVE_READS, DEFAULT_SENSITIVE_WRITES, DEFAULT_EXPECTED_PROCESSES)
            .expect("shipped dynamic config is valid")
    }

    pub fn parse(allowlist: &str, reads: &str, writes: &str, processes: &str) -> Result<DynamicConfig, DynamicConfigError> {
        let allowlist = rows(allowlist).map(|(_, d)| d.trim_end_matches('.').to_ascii_lowercase()).collect();
        let mut expected_roots: BTreeMap<Registry, BTreeSet<String>> = BTreeMap::new();
        let mut build_tools = BTreeSet::new();
        for (row, line) in rows(processes) {
            let invalid = |message: String| DynamicConfigError::Invalid { origin: "expected_processes".into(), row, message };
            let mut cols = line.split_whitespace();
            let (Some(scope), Some(exe), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(invalid("expected `<registry|build> <executable>`".into()));
            };
            if scope == "build" {
                build_tools.insert(exe.to_string());
            } else {
                let registry: Registry = scope.parse().map_err(|e: crate::registry::IngestError| invalid(e.to_string()))?;
                expected_roots.entry(registry).or_default().insert(exe.to_string());
            }
        }
        Ok(DynamicConfig {
            allowlist,
            sensitive_reads: PathPatterns::parse(reads, "sensitive_reads")?,
            sensitive_writes: PathPatterns::parse(writes, "sensitive_writes")?,
            expected_roots,
            build_tools,
        })
    }

    /// Reads the four plain-text lists from `dir`, using the shipped
    /// default for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<DynamicConfig, DynamicConfigError> {
        let read = |name: &str, default: &'static str| -> Result<String, DynamicConfigError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(t) => Ok(t),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(default.to_string()),
                Err(source) => Err(DynamicConfigError::Io { path: path.display().to_string(), source }),
            }
        };
        DynamicConfig::parse(
            &read("allowlist.txt", DEFAULT_ALLOWLIST)?,
            &read("sensitive_reads.txt", DEFAULT_SENSITIVE_READS)?,
            &read("sensitive_writes.txt", DEFAULT_SENSITIVE_WRITES)?,
            &read("expected_processes.txt", DEFAULT_EXPECTED_PROCESSES)?,
        )
    }

    pub fn domain_allowed(&self, host: &str) -> bool {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.allowlist.iter().any(|d| host == *d || host.strip_suffix(d.as_str()).is_some_and(|p| p.ends_with('.')))
    }
}

/// Trace event backing a finding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub run: String,
    pub line: usize,
}

impl EvidenceRef {
    fn of(e: &TraceEvent) -> EvidenceRef {
        EvidenceRef { run: e.run.clone(), line: e.line }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointFinding {
    /// Domain, or IP when no name is known.
    pub endpoint: String,
    pub mode: RunMode,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileFinding {
    pub path: String,
    pub mode: RunMode,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProcessFinding {
    pub argv: Vec<String>,
    pub parents: Vec<String>,
    pub mode: RunMode,
    pub evidence: Vec<EvidenceRef>,
}

fn host_is_local(ip: &str) -> bool {
    ip.parse::<IpAddr>().is_ok_and(|a| a.is_loopback() || a.is_unspecified())
}

pub fn classify_network(events: &[TraceEvent], cfg: &DynamicConfig) -> Vec<EndpointFinding> {
    let mut found: BTreeMap<(String, RunMode), BTreeSet<EvidenceRef>> = BTreeMap::new();
    for e in events {
        let endpoint = match &e.detail {
            EventDetail::DnsQuery { domain } if !cfg.domain_allowed(domain) => domain.to_ascii_lowercase(),
            EventDetail::NetConnect { domain: Some(d), .. } if !cfg.domain_allowed(d) => d.to_ascii_lowercase(),
            EventDetail::NetConnect { ip, domain: None, .. } if !host_is_local(ip) && !cfg.domain_allowed(ip) => ip.clone(),
            _ => continue,
        };
        found.entry((endpoint, e.mode)).or_default().insert(EvidenceRef::of(e));
    }
    found
        .into_iter()
        .map(|((endpoint, mode), ev)| EndpointFinding { endpoint, mode, evidence: ev.into_iter().collect() })
        .collect()
}

/// Returns `(sensitive_reads, sensitive_writes)`.
pub fn classify_files(events: &[TraceEvent], cfg: &DynamicConfig) -> (Vec<FileFinding>, Vec<FileFinding>) {
    let mut reads: BTreeMap<(String, RunMode), BTreeSet<EvidenceRef>> = BTreeMap::new();
    let mut writes = reads.clone();
    for e in events {
        match &e.detail {
            EventDetail::FileRead { path } if cfg.sensitive_reads.matches(path) => {
                reads.entry((normalize_path(path), e.mode)).or_default().insert(EvidenceRef::of(e));
            }
            EventDetail::FileWrite { path } if cfg.sensitive_writes.matches(path) => {
                writes.entry((normalize_path(path), e.mode)).or_default().insert(EvidenceRef::of(e));
            }
            _ => {}
        }
    }
    let collect = |m: BTreeMap<(String, RunMode), BTreeSet<EvidenceRef>>| {
        m.into_iter().map(|((path, mode), ev)| FileFinding { path, mode, evidence: ev.into_iter().collect() }).collect()
    };
    (collect(reads), collect(writes))
}

fn exe_name(arg0: &str) -> &str {
    arg0.rsplit('/').next().unwrap_or(arg0)
}

pub fn classify_processes(events: &[TraceEvent], registry: Registry, cfg: &DynamicConfig) -> Vec<ProcessFinding> {
    let empty = BTreeSet::new();
    let roots = cfg.expected_roots.get(&registry).unwrap_or(&empty);
    let mut found: BTreeMap<(Vec<String>, Vec<String>, RunMode), BTreeSet<EvidenceRef>> = BTreeMap::new();
    for e in events {
        let EventDetail::ProcSpawn { argv, parents } = &e.detail else { continue };
        let exe = exe_name(&argv[0]);
        if roots.contains(exe) {
            continue;
        }
        let under_client = parents.iter().any(|p| roots.contains(exe_name(p)));
        if e.mode == RunMode::Install && under_client && cfg.build_tools.contains(exe) {
            continue;
        }
        found.entry((argv.clone(), parents.clone(), e.mode)).or_default().insert(EvidenceRef::of(e));
    }
    found
        .into_iter()
        .map(|((argv, parents, mode), ev)| ProcessFinding { argv, parents, mode, evidence: ev.into_iter().collect() })
        .collect()
}

/// A finding moved to a dependency that exhibits the same evidence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attributed {
    pub to: PackageCoordinate,
    pub kind: String,
    pub key: String,
    pub mode: RunMode,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicFindings {
    pub coordinate: PackageCoordinate,
    pub unexpected_endpoints: Vec<EndpointFinding>,
    pub sensitive_reads: Vec<FileFinding>,
    pub sensitive_writes: Vec<FileFinding>,
    pub unexpected_processes: Vec<ProcessFinding>,
    /// Findings re-attributed to dependencies; not evaluated for this package.
    #[serde(default)]
    pub attributed: Vec<Attributed>,
    /// Trace files that were analyzed.
    #[serde(default)]
    pub runs: Vec<String>,
}

impl DynamicFindings {
    pub fn empty(coordinate: PackageCoordinate) -> DynamicFindings {
        DynamicFindings {
            coordinate,
            unexpected_endpoints: Vec::new(),
            sensitive_reads: Vec::new(),
            sensitive_writes: Vec::new(),
            unexpected_processes: Vec::new(),
            attributed: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.unexpected_endpoints.is_empty()
            && self.sensitive_reads.is_empty()
            && self.sensitive_writes.is_empty()
            && self.unexpected_processes.is_empty()
    }

    /// Evidence entries across active and attributed findings.
    pub fn evidence_count(&self) -> usize {
        self.unexpected_endpoints.iter().map(|f| f.evidence.len()).sum::<usize>()
            + self.sensitive_reads.iter().map(|f| f.evidence.len()).sum::<usize>()
            + self.sensitive_writes.iter().map(|f| f.evidence.len()).sum::<usize>()
            + self.unexpected_processes.iter().map(|f| f.evidence.len()).sum::<usize>()
            + self.attributed.iter().map(|a| a.evidence.len()).sum::<usize>()
    }

    /// `(kind, key)` of every active finding.
    fn keys(&self) -> BTreeSet<(&'static str, String)> {
        let mut out = BTreeSet::new();
        out.extend(self.unexpected_endpoints.iter().map(|f| ("endpoint", f.endpoint.clone())));
        out.extend(self.sensitive_reads.iter().map(|f| ("read", f.path.clone())));
        out.extend(self.sensitive_writes.iter().map(|f| ("write", f.path.clone())));
        out.extend(self.unexpected_processes.iter().map(|f| ("process", f.argv.join(" "))));
        out
    }
}

/// Classifies already-parsed events of one package.
pub fn classify(coordinate: &PackageCoordinate, events: &[TraceEvent], cfg: &DynamicConfig) -> DynamicFindings {
    let (sensitive_reads, sensitive_writes) = classify_files(events, cfg);
    let mut runs: Vec<String> = events.iter().map(|e| e.run.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    runs.sort();
    DynamicFindings {
        coordinate: coordinate.clone(),
        unexpected_endpoints: classify_network(events, cfg),
        sensitive_reads,
        sensitive_writes,
        unexpected_processes: classify_processes(events, coordinate.registry, cfg),
        attributed: Vec::new(),
        runs,
    }
}

/// Moves each INSTALL-mode finding of a package to the first transitive
/// dependency (in `deps_of` order) whose own findings show the same
/// evidence. `order` must list dependencies before dependents.
pub fn attribute_findings(
    findings: &mut BTreeMap<PackageCoordinate, DynamicFindings>,
    order: &[PackageCoordinate],
    deps_of: impl Fn(&PackageCoordinate) -> Vec<PackageCoordinate>,
) {
    // Keys are taken from each package's own findings before any suppression
    // of its dependents, so processing order does not matter for the result.
    let own_keys: BTreeMap<PackageCoordinate, BTreeSet<(&'static str, String)>> =
        findings.iter().map(|(c, f)| (c.clone(), f.keys())).collect();
    for coord in order {
        let deps = deps_of(coord);
        let Some(f) = findings.get_mut(coord) else { continue };
        let owner = |kind: &'static str, key: &str| {
            deps.iter().find(|d| own_keys.get(*d).is_some_and(|k| k.contains(&(kind, key.to_string())))).cloned()
        };
        let mut moved = Vec::new();
        f.unexpected_endpoints.retain(|x| match (x.mode, owner("endpoint", &x.endpoint)) {
            (RunMode::Install, Some(to)) => {
                moved.push(Attributed { to, kind: "endpoint".into(), key: x.endpoint.clone(), mode: x.mode, evidence: x.evidence.clone() });
                false
            }
            _ => true,
        });
        f.sensitive_reads.retain(|x| match (x.mode, owner("read", &x.path)) {
            (RunMode::Install, Some(to)) => {
                moved.push(Attributed { to, kind: "read".into(), key: x.path.clone(), mode: x.mode, evidence: x.evidence.clone() });
                false
            }
            _ => true,
        });
        f.sensitive_writes.retain(|x| match (x.mode, owner("write", &x.path)) {
            (RunMode::Install, Some(to)) => {
                moved.push(Attributed { to, kind: "write".into(), key: x.path.clone(), mode: x.mode, evidence: x.evidence.clone() });
                false
            }
            _ => true,
        });
        f.unexpected_processes.retain(|x| {
            let key = x.argv.join(" ");
            match (x.mode, owner("process", &key)) {
                (RunMode::Install, Some(to)) => {
                    moved.push(Attributed { to, kind: "process".into(), key, mode: x.mode, evidence: x.evidence.clone() });
                    false
                }
                _ => true,
            }
        });
        f.attributed.extend(moved);
        f.attributed.sort();
    }
}
