#![allow(dead_code)]
pub mod oracles;

use pkgvet::cache::AnalyzerKind;
use pkgvet::config::{Inputs, Settings};
use pkgvet::registry::{FixtureSource, PackageMetadata};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn seeded_dir() -> PathBuf {
    fixtures().join("seeded")
}

pub fn seeded_inputs() -> Inputs {
    Settings::load(&seeded_dir().join("pkgvet.toml")).unwrap().resolve().unwrap()
}

pub fn seeded_packages() -> Vec<PackageMetadata> {
    FixtureSource::open(seeded_dir().join("packages")).unwrap().load_all(None).unwrap()
}

pub fn all_analyzers() -> BTreeSet<AnalyzerKind> {
    [AnalyzerKind::Metadata, AnalyzerKind::Static, AnalyzerKind::Dynamic].into_iter().collect()
}

/// Outcome of one rule fixture: the rules fired on the target and on any
/// other package in the fixture.
pub struct RuleFixtureOutcome {
    pub rule: String,
    pub target_rules: Vec<String>,
    pub others: Vec<(String, Vec<String>)>,
}

pub fn run_rule_fixtures() -> Vec<RuleFixtureOutcome> {
    use pkgvet::heuristics::TriageLog;
    use pkgvet::pipeline::Pipeline;

    let root = fixtures().join("rules");
    let inputs = Settings::load(&root.join("pkgvet.toml")).unwrap().resolve().unwrap();
    let mut dirs: Vec<PathBuf> =
        std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    dirs.iter()
        .map(|dir| {
            let expected: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
            let target = expected["target"].as_str().unwrap();
            let metas = FixtureSource::open(dir).unwrap().load_all(None).unwrap();
            let pipeline = Pipeline::new(inputs.clone(), None);
            let analysis = pipeline.analyze(metas, &all_analyzers()).unwrap();
            let mut target_rules = Vec::new();
            let mut others = Vec::new();
            for report in pipeline.flag(&analysis, &TriageLog::in_memory()) {
                let ids: Vec<String> = report.rule_ids().map(str::to_string).collect();
                if report.coordinate.to_string() == target {
                    target_rules = ids;
                } else if !ids.is_empty() {
                    others.push((report.coordinate.to_string(), ids));
                }
            }
            RuleFixtureOutcome { rule: expected["rule"].as_str().unwrap().to_string(), target_rules, others }
        })
        .collect()
}

pub type Pair = (String, String);

/// One two-package flow fixture analyzed both ways.
pub struct FlowCase {
    pub name: String,
    pub expected: BTreeSet<Pair>,
    /// Dependency analyzed first; the dependent sees only its export summaries.
    pub composed: BTreeSet<Pair>,
    /// Both packages analyzed as one program.
    pub inline: BTreeSet<Pair>,
}

pub fn run_flow_fixtures() -> Vec<FlowCase> {
    use pkgvet::registry::{ArchiveContents, PackageCoordinate, Registry};
    use pkgvet::static_analysis::package::analyze_component;
    use pkgvet::static_analysis::{analyze_package, index_exports, ApiLabelSet, ExportIndex, StaticConfig, StaticInput};
    use std::collections::BTreeMap;

    let labels = ApiLabelSet::defaults();
    let cfg = StaticConfig::default();
    let root = fixtures().join("flows");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs.iter()
        .map(|dir| {
            let case: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join("case.json")).unwrap()).unwrap();
            let registry: Registry = case["registry"].as_str().unwrap().parse().unwrap();
            let coord = |side: &str| PackageCoordinate::new(registry, case[side]["name"].as_str().unwrap(), "1.0.0").unwrap();
            let (app, dep) = (coord("app"), coord("dep"));
            let app_archive = ArchiveContents::open(&dir.join("app")).unwrap();
            let dep_archive = ArchiveContents::open(&dir.join("dep")).unwrap();
            let no_combined = BTreeMap::new();
            let no_exports = ExportIndex::new();
            let dep_input = StaticInput {
                coordinate: &dep,
                language: registry.language(),
                module_name: case["dep"]["module"].as_str().unwrap(),
                archive: &dep_archive,
                deps: &[],
                dep_combined: &no_combined,
                dep_exports: &no_exports,
            };
            let app_input = StaticInput {
                coordinate: &app,
                module_name: case["app"]["module"].as_str().unwrap(),
                archive: &app_archive,
                deps: std::slice::from_ref(&dep),
                ..dep_input
            };

            let dep_summary = analyze_package(&dep_input, &labels, &cfg).unwrap();
            let mut exports = ExportIndex::new();
            index_exports(&mut exports, dep_input.module_name, &dep_summary.exports);
            let combined = BTreeMap::from([(dep.clone(), dep_summary.combined_apis.clone())]);
            let composed = analyze_package(
                &StaticInput { dep_combined: &combined, dep_exports: &exports, ..app_input },
                &labels,
                &cfg,
            )
            .unwrap();
            let inline = analyze_component(&[app_input, dep_input], &labels, &cfg).unwrap().remove(0);

            let pairs = |flows: &[pkgvet::static_analysis::FlowFinding]| -> BTreeSet<Pair> {
                flows.iter().map(|f| f.terminal_pair()).collect()
            };
            let expected = case["expected"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| (e["source"].as_str().unwrap().to_string(), e["sink"].as_str().unwrap().to_string()))
                .collect();
            FlowCase {
                name: dir.file_name().unwrap().to_string_lossy().into_owned(),
                expected,
                composed: pairs(&composed.flows),
                inline: pairs(&inline.flows),
            }
        })
        .collect()
}

/// `(name, matches golden, found paths)` for every trace golden.
pub fn run_trace_goldens() -> Vec<(String, bool, Vec<String>)> {
    use pkgvet::dynamic::{analyze_traces, DynamicConfig};
    use pkgvet::registry::PackageCoordinate;

    let cfg = DynamicConfig::defaults();
    let coord: PackageCoordinate = "pypi/trace-subject@1.0.0".parse().unwrap();
    let root = fixtures().join("traces");
    let mut traces: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    traces.sort();
    traces
        .iter()
        .map(|t| {
            let name = t.file_stem().unwrap().to_string_lossy().into_owned();
            let findings = analyze_traces(&coord, std::slice::from_ref(t), &cfg).unwrap();
            let golden: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(root.join(format!("{name}.golden.json"))).unwrap()).unwrap();
            let matches = serde_json::to_value(&findings).unwrap() == golden;
            let found = findings
                .sensitive_reads
                .iter()
                .map(|f| format!("read {}", f.path))
                .chain(findings.sensitive_writes.iter().map(|f| format!("write {}", f.path)))
                .collect();
            (name, matches, found)
        })
        .collect()
}

pub struct SeededOutcome {
    /// Every package, with the rules that fired on it.
    pub fired: std::collections::BTreeMap<String, Vec<String>>,
    pub expected: std::collections::BTreeMap<String, Vec<String>>,
    pub max_benign_flagged: usize,
    /// Queue after every flagged benign package was labeled BENIGN once.
    pub queue_after_labels: Vec<String>,
    pub elapsed: std::time::Duration,
}

impl SeededOutcome {
    pub fn benign_flagged(&self) -> Vec<&String> {
        self.fired.iter().filter(|(c, r)| !r.is_empty() && !self.expected.contains_key(*c)).map(|(c, _)| c).collect()
    }

    /// Malicious packages missing one of their expected rules.
    pub fn missed(&self) -> Vec<&String> {
        self.expected
            .iter()
            .filter(|(c, want)| {
                let got = self.fired.get(*c).cloned().unwrap_or_default();
                !want.iter().all(|w| got.contains(w))
            })
            .map(|(c, _)| c)
            .collect()
    }
}

pub fn run_seeded() -> SeededOutcome {
    use pkgvet::heuristics::{LabelRequest, LabelScope, TriageLog, Verdict};
    use pkgvet::pipeline::Pipeline;
    use std::collections::BTreeMap;

    let started = std::time::Instant::now();
    let expected_doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(seeded_dir().join("expected.json")).unwrap()).unwrap();
    let expected: BTreeMap<String, Vec<String>> = serde_json::from_value(expected_doc["malicious"].clone()).unwrap();
    let pipeline = Pipeline::new(seeded_inputs(), None);
    let analysis = pipeline.analyze(seeded_packages(), &all_analyzers()).unwrap();
    let mut log = TriageLog::in_memory();
    let mut reports = pipeline.flag(&analysis, &log);
    let fired = reports.iter().map(|r| (r.coordinate.to_string(), r.rule_ids().map(str::to_string).collect())).collect();

    let now = chrono::Utc::now();
    for r in reports.iter_mut() {
        if r.triggered.is_empty() || expected.contains_key(&r.coordinate.to_string()) {
            continue;
        }
        let req = LabelRequest {
            coordinate: r.coordinate.clone(),
            verdict: Verdict::Benign,
            scope: LabelScope::Package,
            analyst: "analyst".into(),
            note: "native build step".into(),
        };
        *r = log.apply_label(Some(r), &req, None, now).unwrap().report;
    }
    let queue_after_labels = Pipeline::queue(&analysis, &reports, false).into_iter().map(|q| q.coordinate.to_string()).collect();
    SeededOutcome {
        fired,
        expected,
        max_benign_flagged: expected_doc["max_benign_flagged"].as_u64().unwrap() as usize,
        queue_after_labels,
        elapsed: started.elapsed(),
    }
}

pub struct InvalidationOutcome {
    pub cold: pkgvet::pipeline::RunCounts,
    pub warm: pkgvet::pipeline::RunCounts,
    pub rule_edit: pkgvet::pipeline::RunCounts,
    /// Scores differ after the rule edit even though nothing reran.
    pub rule_edit_rescored: bool,
    pub label_edit: pkgvet::pipeline::RunCounts,
}

/// Runs the seeded corpus against one cache four times: cold, warm, after a
/// rule weight edit and after a label-file edit.
pub fn run_invalidation(cache_dir: &Path) -> InvalidationOutcome {
    use pkgvet::cache::ReportCache;
    use pkgvet::heuristics::{RuleSet, TriageLog, DEFAULT_RULES};
    use pkgvet::pipeline::Pipeline;
    use pkgvet::static_analysis::ApiLabelSet;

    let run = |inputs: Inputs| {
        let pipeline = Pipeline::new(inputs, Some(ReportCache::open(cache_dir).unwrap()));
        let analysis = pipeline.analyze(seeded_packages(), &all_analyzers()).unwrap();
        let scores: Vec<f64> = pipeline.flag(&analysis, &TriageLog::in_memory()).iter().map(|r| r.score).collect();
        (pipeline.counters.snapshot(), scores)
    };
    let base = seeded_inputs();
    let (cold, base_scores) = run(base.clone());
    let (warm, _) = run(base.clone());

    let mut reweighted = base.clone();
    let edited = DEFAULT_RULES.replacen("predicate = \"static.has_install_hook\"", "predicate = \"static.has_install_hook\"\nweight = 0.25", 1);
    reweighted.rules = RuleSet::parse(&edited, "edited rules").unwrap();
    let (rule_edit, new_scores) = run(reweighted);

    let labels_dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/labels");
    let mut paths = Vec::new();
    for f in ["node.tsv", "python.tsv", "ruby.tsv"] {
        let mut text = std::fs::read_to_string(src.join(f)).unwrap();
        if f == "node.tsv" {
            text.push_str("JS\tdns.lookup\tNETWORK\tSOURCE\tQUALIFIED_STATIC\n");
        }
        let p = labels_dir.path().join(f);
        std::fs::write(&p, text).unwrap();
        paths.push(p);
    }
    let mut relabeled = base;
    relabeled.labels = ApiLabelSet::load(&paths).unwrap();
    let (label_edit, _) = run(relabeled);

    InvalidationOutcome { cold, warm, rule_edit, rule_edit_rescored: base_scores != new_scores, label_edit }
}
