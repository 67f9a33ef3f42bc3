//! End-to-end orchestration: analyzers in dependency order, cached reports,
//! rule evaluation and the review queue.

use crate::cache::{AnalyzerKind, CacheError, CacheKey, DigestBuilder, ReportCache};
use crate::config::Inputs;
use crate::dynamic::{analyze_traces, attribute_findings, DynamicFindings};
use crate::exec::{self, ExecMode};
use crate::graph::{build_graph, DependencyGraph};
use crate::heuristics::{
    amplified_downloads, evaluate_all, rank_queue, EvaluationInput, Facts, QueueEntry, StaticFacts, SuspicionReport,
    TriageLog,
};
use crate::metadata::{self, MetadataContext, MetadataFindings, NameIndex};
use crate::registry::{ArchiveContents, PackageCoordinate, PackageMetadata};
use crate::static_analysis::flow::{index_exports, ExportIndex};
use crate::static_analysis::package::analyze_component;
use crate::static_analysis::{diff_api_categories, ApiCategory, CombinedApis, StaticError, StaticInput, UsageSummary};
use crate::version::Version;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const METADATA_ANALYZER_VERSION: &str = "1.0.0";
pub const STATIC_ANALYZER_VERSION: &str = "1.0.0";
pub const DYNAMIC_ANALYZER_VERSION: &str = "1.0.0";

/// Number of packages each analyzer actually processed (cache hits excluded).
#[derive(Debug, Default)]
pub struct AnalyzerCounters {
    pub metadata: AtomicUsize,
    pub static_analysis: AtomicUsize,
    pub dynamic: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub metadata: usize,
    pub static_analysis: usize,
    pub dynamic: usize,
}

impl AnalyzerCounters {
    pub fn snapshot(&self) -> RunCounts {
        RunCounts {
            metadata: self.metadata.load(Ordering::Relaxed),
            static_analysis: self.static_analysis.load(Ordering::Relaxed),
            dynamic: self.dynamic.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        for c in [&self.metadata, &self.static_analysis, &self.dynamic] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Static(#[from] StaticError),
}

/// A package an analyzer could not process; its report is absent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnalyzerFailure {
    pub coordinate: PackageCoordinate,
    pub analyzer: AnalyzerKind,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub metas: BTreeMap<PackageCoordinate, PackageMetadata>,
    pub graph: DependencyGraph,
    pub metadata: BTreeMap<PackageCoordinate, MetadataFindings>,
    pub statics: BTreeMap<PackageCoordinate, UsageSummary>,
    /// Categories gained relative to the preceding ingested version.
    pub new_apis: BTreeMap<PackageCoordinate, BTreeSet<ApiCategory>>,
    /// Findings after attribution to dependencies.
    pub dynamic: BTreeMap<PackageCoordinate, DynamicFindings>,
    pub failures: Vec<AnalyzerFailure>,
}

impl Analysis {
    pub fn static_facts(&self, coord: &PackageCoordinate) -> Option<StaticFacts> {
        let s = self.statics.get(coord)?;
        Some(StaticFacts::from_summary(s, self.new_apis.get(coord).cloned().unwrap_or_default()))
    }

    pub fn facts(&self, coord: &PackageCoordinate) -> Facts {
        Facts {
            metadata: self.metadata.get(coord).cloned(),
            static_facts: self.static_facts(coord),
            dynamic: self.dynamic.get(coord).cloned(),
        }
    }

    /// Packages with at least one analyzer report, with their facts.
    pub fn evaluation_inputs(&self) -> Vec<EvaluationInput> {
        self.metas
            .values()
            .map(|m| EvaluationInput {
                coordinate: m.coordinate.clone(),
                authors: m.authors.clone(),
                release_time: m.release_time,
                facts: self.facts(&m.coordinate),
            })
            .filter(|i| i.facts.missing().len() < 3)
            .collect()
    }

    pub fn amplified(&self) -> BTreeMap<PackageCoordinate, u64> {
        amplified_downloads(&self.graph)
    }
}

/// One line of source quoted at a flow hop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Excerpt {
    pub file: String,
    pub line: u32,
    pub text: String,
}

/// Everything known about one package, for analyst review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub coordinate: PackageCoordinate,
    pub package: PackageMetadata,
    pub report: Option<SuspicionReport>,
    pub facts: Facts,
    pub excerpts: Vec<Excerpt>,
    pub amplified_downloads: u64,
}

pub struct Pipeline {
    pub inputs: Inputs,
    pub cache: Option<ReportCache>,
    pub exec: ExecMode,
    /// Worker threads; 0 uses the default pool.
    pub jobs: usize,
    pub counters: AnalyzerCounters,
}

fn content_hash(archive: &ArchiveContents) -> String {
    let mut h = Sha256::new();
    for f in &archive.files {
        h.update((f.path.len() as u64).to_le_bytes());
        h.update(f.path.as_bytes());
        h.update((f.bytes.len() as u64).to_le_bytes());
        h.update(&f.bytes);
    }
    hex::encode(h.finalize())
}

/// Identity-relevant fields of the whole corpus, for metadata digests.
fn corpus_digest(metas: &BTreeMap<PackageCoordinate, PackageMetadata>) -> String {
    let mut b = DigestBuilder::new();
    for m in metas.values() {
        b = b.json("coordinate", &m.coordinate)
            .json("authors", &m.authors)
            .json("release_time", &m.release_time)
            .json("downloads", &m.downloads)
            .json("deps", &m.declared_deps)
            .json("inventory", &m.file_inventory);
    }
    b.finish()
}

/// Nearest ingested version of the same package below `coord`.
fn predecessor<'a>(coord: &PackageCoordinate, metas: &'a BTreeMap<PackageCoordinate, PackageMetadata>) -> Option<&'a PackageCoordinate> {
    let own = Version::parse(&coord.version)?;
    metas
        .keys()
        .filter(|c| c.same_package(coord))
        .filter_map(|c| Version::parse(&c.version).map(|v| (v, c)))
        .filter(|(v, _)| *v < own)
        .max_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, c)| c)
}

struct ComponentResult {
    summaries: Vec<(PackageCoordinate, UsageSummary, String)>,
    failures: Vec<AnalyzerFailure>,
}

impl Pipeline {
    pub fn new(inputs: Inputs, cache: Option<ReportCache>) -> Pipeline {
        Pipeline { inputs, cache, exec: ExecMode::Parallel, jobs: 0, counters: AnalyzerCounters::default() }
    }

    pub fn with_exec(mut self, exec: ExecMode, jobs: usize) -> Pipeline {
        self.exec = exec;
        self.jobs = jobs;
        self.inputs.settings.static_analysis.exec = exec;
        self
    }

    fn key(&self, coordinate: &PackageCoordinate, analyzer: AnalyzerKind, digest: &str) -> CacheKey {
        let analyzer_version = match analyzer {
            AnalyzerKind::Metadata => METADATA_ANALYZER_VERSION,
            AnalyzerKind::Static => STATIC_ANALYZER_VERSION,
            AnalyzerKind::Dynamic => DYNAMIC_ANALYZER_VERSION,
        };
        CacheKey {
            coordinate: coordinate.clone(),
            analyzer,
            analyzer_version: analyzer_version.to_string(),
            config_digest: digest.to_string(),
        }
    }

    fn cached<T: serde::de::DeserializeOwned>(&self, key: &CacheKey) -> Result<Option<T>, CacheError> {
        match &self.cache {
            Some(c) => c.get_json(key),
            None => Ok(None),
        }
    }

    fn store<T: Serialize>(&self, key: &CacheKey, value: &T) -> Result<(), CacheError> {
        if let Some(c) = &self.cache {
            c.put_json(key, value)?;
        }
        Ok(())
    }

    /// Builds the graph and runs the selected analyzers.
    pub fn analyze(&self, metas: Vec<PackageMetadata>, analyzers: &BTreeSet<AnalyzerKind>) -> Result<Analysis, PipelineError> {
        exec::with_jobs(self.exec, self.jobs, || self.analyze_inner(metas, analyzers))
    }

    fn analyze_inner(&self, metas: Vec<PackageMetadata>, analyzers: &BTreeSet<AnalyzerKind>) -> Result<Analysis, PipelineError> {
        let graph = build_graph(&metas, self.inputs.settings.resolution);
        let metas: BTreeMap<PackageCoordinate, PackageMetadata> = metas.into_iter().map(|m| (m.coordinate.clone(), m)).collect();
        let mut analysis = Analysis {
            metas,
            graph,
            metadata: BTreeMap::new(),
            statics: BTreeMap::new(),
            new_apis: BTreeMap::new(),
            dynamic: BTreeMap::new(),
            failures: Vec::new(),
        };
        if analyzers.contains(&AnalyzerKind::Metadata) {
            self.run_metadata(&mut analysis)?;
        }
        if analyzers.contains(&AnalyzerKind::Static) {
            self.run_static(&mut analysis)?;
        }
        if analyzers.contains(&AnalyzerKind::Dynamic) {
            self.run_dynamic(&mut analysis)?;
        }
        analysis.failures.sort();
        Ok(analysis)
    }

    /// (Re)computes metadata findings, for instance after the known-malware
    /// list grew.
    pub fn run_metadata(&self, analysis: &mut Analysis) -> Result<(), PipelineError> {
        let digest = DigestBuilder::new()
            .bytes("inputs", self.inputs.metadata_digest().as_bytes())
            .bytes("corpus", corpus_digest(&analysis.metas).as_bytes())
            .finish();
        let all: Vec<PackageMetadata> = analysis.metas.values().cloned().collect();
        let ctx = MetadataContext {
            config: self.inputs.settings.metadata.clone(),
            popular: self.inputs.popular.clone(),
            malware: self.inputs.malware.clone(),
            names: NameIndex::from_sources(&self.inputs.popular, &all),
        };
        let results = exec::map(self.exec, &all, |m| -> Result<MetadataFindings, CacheError> {
            let key = self.key(&m.coordinate, AnalyzerKind::Metadata, &digest);
            if let Some(hit) = self.cached(&key)? {
                return Ok(hit);
            }
            let history: Vec<&PackageMetadata> = all.iter().filter(|h| h.coordinate.same_package(&m.coordinate)).collect();
            self.counters.metadata.fetch_add(1, Ordering::Relaxed);
            let findings = metadata::analyze(m, &history, &ctx);
            self.store(&key, &findings)?;
            Ok(findings)
        });
        analysis.metadata.clear();
        for r in results {
            let f = r?;
            analysis.metadata.insert(f.coordinate.clone(), f);
        }
        Ok(())
    }

    fn run_static(&self, analysis: &mut Analysis) -> Result<(), PipelineError> {
        let config_digest = self.inputs.static_digest();
        // Summaries of every analyzed package, including those whose report
        // is withheld because the archive was unavailable.
        let mut summaries: BTreeMap<PackageCoordinate, UsageSummary> = BTreeMap::new();
        let mut digests: BTreeMap<PackageCoordinate, String> = BTreeMap::new();
        let mut withheld = BTreeSet::new();
        for wave in analysis.graph.waves() {
            let results = exec::map(self.exec, &wave, |component| {
                self.static_component(component, analysis, &summaries, &digests, &config_digest)
            });
            for r in results {
                let r = r?;
                for f in &r.failures {
                    withheld.insert(f.coordinate.clone());
                }
                analysis.failures.extend(r.failures);
                for (c, s, d) in r.summaries {
                    digests.insert(c.clone(), d);
                    summaries.insert(c, s);
                }
            }
        }
        let min = self.inputs.settings.new_api_min_confidence;
        for (coord, summary) in &summaries {
            if withheld.contains(coord) {
                continue;
            }
            let new = match predecessor(coord, &analysis.metas).and_then(|p| summaries.get(p).filter(|_| !withheld.contains(p))) {
                Some(prev) => diff_api_categories(prev, summary, min)?,
                None => BTreeSet::new(),
            };
            analysis.new_apis.insert(coord.clone(), new);
        }
        analysis.statics = summaries.into_iter().filter(|(c, _)| !withheld.contains(c)).collect();
        Ok(())
    }

    fn static_component(
        &self,
        component: &[PackageCoordinate],
        analysis: &Analysis,
        summaries: &BTreeMap<PackageCoordinate, UsageSummary>,
        digests: &BTreeMap<PackageCoordinate, String>,
        config_digest: &str,
    ) -> Result<ComponentResult, PipelineError> {
        let members: BTreeSet<&PackageCoordinate> = component.iter().collect();
        let mut failures = Vec::new();
        let mut archives = Vec::new();
        for c in component {
            let meta = &analysis.metas[c];
            let archive = match &meta.archive {
                Some(path) => ArchiveContents::open(path).unwrap_or_else(|e| {
                    failures.push(AnalyzerFailure { coordinate: c.clone(), analyzer: AnalyzerKind::Static, message: e.to_string() });
                    ArchiveContents::default()
                }),
                None => {
                    failures.push(AnalyzerFailure {
                        coordinate: c.clone(),
                        analyzer: AnalyzerKind::Static,
                        message: "no archive available".into(),
                    });
                    ArchiveContents::default()
                }
            };
            archives.push(archive);
        }
        let deps: Vec<Vec<PackageCoordinate>> = component
            .iter()
            .map(|c| analysis.graph.dependencies(c).unwrap_or_default().into_iter().filter(|d| !members.contains(d)).collect())
            .collect();
        let mut b = DigestBuilder::new().bytes("config", config_digest.as_bytes());
        for (i, c) in component.iter().enumerate() {
            let meta = &analysis.metas[c];
            b = b
                .json("member", c)
                .json("language", &meta.subject_language)
                .bytes("module", meta.module_name().as_bytes())
                .bytes("content", content_hash(&archives[i]).as_bytes());
            for d in &deps[i] {
                b = b.json("dep", d).bytes("dep_digest", digests.get(d).map_or("", String::as_str).as_bytes());
            }
        }
        let digest = b.finish();
        let keys: Vec<CacheKey> = component.iter().map(|c| self.key(c, AnalyzerKind::Static, &digest)).collect();

        let mut cached = Vec::new();
        for k in &keys {
            match self.cached::<UsageSummary>(k)? {
                Some(s) => cached.push(s),
                None => break,
            }
        }
        let fresh = if cached.len() == keys.len() {
            cached
        } else {
            let mut dep_combined: BTreeMap<PackageCoordinate, CombinedApis> = BTreeMap::new();
            let mut dep_exports = ExportIndex::new();
            for d in deps.iter().flatten() {
                let Some(s) = summaries.get(d) else {
                    return Err(StaticError::MissingDepSummary(d.to_string()).into());
                };
                dep_combined.insert(d.clone(), s.combined_apis.clone());
                index_exports(&mut dep_exports, &analysis.metas[d].module_name(), &s.exports);
            }
            let module_names: Vec<String> = component.iter().map(|c| analysis.metas[c].module_name()).collect();
            let inputs: Vec<StaticInput<'_>> = component
                .iter()
                .enumerate()
                .map(|(i, c)| StaticInput {
                    coordinate: c,
                    language: analysis.metas[c].subject_language,
                    module_name: &module_names[i],
                    archive: &archives[i],
                    deps: &deps[i],
                    dep_combined: &dep_combined,
                    dep_exports: &dep_exports,
                })
                .collect();
            self.counters.static_analysis.fetch_add(component.len(), Ordering::Relaxed);
            let out = analyze_component(&inputs, &self.inputs.labels, &self.inputs.settings.static_analysis)?;
            for (k, s) in keys.iter().zip(&out) {
                self.store(k, s)?;
            }
            out
        };
        Ok(ComponentResult {
            summaries: component.iter().cloned().zip(fresh).map(|(c, s)| (c, s, digest.clone())).collect(),
            failures,
        })
    }

    fn run_dynamic(&self, analysis: &mut Analysis) -> Result<(), PipelineError> {
        let config_digest = self.inputs.dynamic_digest();
        let traced: Vec<&PackageMetadata> = analysis.metas.values().filter(|m| !m.traces.is_empty()).collect();
        let results = exec::map(self.exec, &traced, |m| -> Result<Result<DynamicFindings, AnalyzerFailure>, CacheError> {
            let fail = |message: String| AnalyzerFailure { coordinate: m.coordinate.clone(), analyzer: AnalyzerKind::Dynamic, message };
            let mut b = DigestBuilder::new().bytes("config", config_digest.as_bytes());
            for t in &m.traces {
                match std::fs::read(t) {
                    Ok(bytes) => b = b.bytes("trace", &bytes),
                    Err(e) => return Ok(Err(fail(format!("{}: {e}", t.display())))),
                }
            }
            let key = self.key(&m.coordinate, AnalyzerKind::Dynamic, &b.finish());
            if let Some(hit) = self.cached(&key)? {
                return Ok(Ok(hit));
            }
            self.counters.dynamic.fetch_add(1, Ordering::Relaxed);
            match analyze_traces(&m.coordinate, &m.traces, &self.inputs.dynamic) {
                Ok(f) => {
                    self.store(&key, &f)?;
                    Ok(Ok(f))
                }
                Err(e) => Ok(Err(fail(e.to_string()))),
            }
        });
        let mut findings = BTreeMap::new();
        for r in results {
            match r? {
                Ok(f) => {
                    findings.insert(f.coordinate.clone(), f);
                }
                Err(failure) => analysis.failures.push(failure),
            }
        }
        let order: Vec<PackageCoordinate> = analysis.graph.topo_order().into_iter().flatten().collect();
        let graph = &analysis.graph;
        attribute_findings(&mut findings, &order, |c| {
            let direct = graph.dependencies(c).unwrap_or_default();
            let mut all = direct.clone();
            for t in graph.transitive_dependencies(c).unwrap_or_default() {
                if !direct.contains(&t) {
                    all.push(t);
                }
            }
            all
        });
        analysis.dynamic = findings;
        Ok(())
    }

    /// Evaluates every package with at least one report.
    pub fn flag(&self, analysis: &Analysis, log: &TriageLog) -> Vec<SuspicionReport> {
        evaluate_all(&analysis.evaluation_inputs(), &self.inputs.rules, log, self.exec)
    }

    /// Ranked queue over `reports`.
    pub fn queue(analysis: &Analysis, reports: &[SuspicionReport], include_excluded: bool) -> Vec<QueueEntry> {
        rank_queue(reports, &analysis.amplified(), include_excluded)
    }

    pub fn evidence(&self, analysis: &Analysis, coord: &PackageCoordinate, report: Option<&SuspicionReport>) -> Option<EvidenceBundle> {
        let meta = analysis.metas.get(coord)?;
        let facts = analysis.facts(coord);
        let excerpts = match (&meta.archive, &facts.static_facts) {
            (Some(path), Some(s)) => match ArchiveContents::open(path) {
                Ok(archive) => excerpts(&archive, s.flows.iter().flat_map(|f| f.path.iter().map(|l| (l.file.as_str(), l.line)))),
                Err(_) => Vec::new(),
            },
            _ => Vec::new(),
        };
        Some(EvidenceBundle {
            coordinate: coord.clone(),
            package: meta.clone(),
            report: report.cloned(),
            facts,
            excerpts,
            amplified_downloads: analysis.graph.reverse_deps(coord).map(|r| r.amplified_downloads).unwrap_or(meta.downloads),
        })
    }
}

/// Quotes the source line at each `(file, line)` hop that exists.
pub fn excerpts<'a>(archive: &ArchiveContents, hops: impl IntoIterator<Item = (&'a str, u32)>) -> Vec<Excerpt> {
    let mut out = BTreeSet::new();
    for (file, line) in hops {
        let Some(text) = archive.get(file).and_then(|f| f.text()) else { continue };
        if let Some(src) = line.checked_sub(1).and_then(|i| text.lines().nth(i as usize)) {
            out.insert(Excerpt { file: file.to_string(), line, text: src.trim().to_string() });
        }
    }
    out.into_iter().collect()
}
