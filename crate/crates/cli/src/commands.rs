use crate::cli::*;
use crate::error::{CliError, EXIT_OK, EXIT_PARTIAL};
use chrono::Utc;
use pkgvet::cache::{AnalyzerKind, ReportCache};
use pkgvet::config::{Inputs, Settings};
use pkgvet::dynamic::runplan::make_run_plan;
use pkgvet::exec::ExecMode;
use pkgvet::graph::{build_graph, DependencyGraph, GraphDocument};
use pkgvet::heuristics::{
    amplified_downloads, queue_to_json, queue_to_table, select_queue, LabelRequest, LabelScope, RuleSet,
    SuspicionReport, TriageLog,
};
use pkgvet::heuristics::triage::{EXCLUSIONS_FILE, LABELS_FILE};
use pkgvet::pipeline::{Analysis, Pipeline};
use pkgvet::registry::{FixtureSource, PackageCoordinate, PackageMetadata};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

type Exit = Result<i32, CliError>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.display().to_string(), source })?;
            }
            // Write then rename so a failed run never leaves half a file.
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, text).map_err(|source| CliError::Io { path: tmp.display().to_string(), source })?;
            std::fs::rename(&tmp, path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

fn write_json<T: Serialize + ?Sized>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_text(out, &text)
}

fn inputs(global: &GlobalOpts, rules: Option<&Path>) -> Result<Inputs, CliError> {
    let settings = match &global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let mut inputs = settings.resolve()?;
    if let Some(path) = rules {
        inputs.rules = RuleSet::load(path).map_err(pkgvet::config::ConfigError::from)?;
    }
    Ok(inputs)
}

fn pipeline(global: &GlobalOpts, inputs: Inputs, jobs: usize) -> Result<Pipeline, CliError> {
    let cache = if global.no_cache { None } else { Some(ReportCache::open(&global.cache)?) };
    let exec = if global.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    Ok(Pipeline::new(inputs, cache).with_exec(exec, jobs))
}

fn analyze(global: &GlobalOpts, opts: &AnalysisOpts, rules: Option<&Path>) -> Result<(Pipeline, Analysis), CliError> {
    let pipeline = pipeline(global, inputs(global, rules)?, opts.jobs)?;
    let metas: Vec<PackageMetadata> = read_json(&opts.input)?;
    let analyzers: BTreeSet<AnalyzerKind> = opts.analyzers.iter().copied().collect();
    let analysis = pipeline.analyze(metas, &analyzers)?;
    for f in &analysis.failures {
        tracing::warn!(coordinate = %f.coordinate, analyzer = %f.analyzer, message = %f.message, "analyzer failed");
    }
    Ok((pipeline, analysis))
}

/// Opens the exclusion and label logs. Either path defaults to its usual
/// file name beside the other; with neither the log lives in memory.
fn triage_log(files: &TriageFiles, default_dir: Option<&Path>) -> Result<TriageLog, CliError> {
    let sibling = |p: &Path, name: &str| p.parent().unwrap_or(Path::new(".")).join(name);
    let (exclusions, labels) = match (&files.exclusions, &files.labels, default_dir) {
        (Some(e), Some(l), _) => (e.clone(), l.clone()),
        (Some(e), None, _) => (e.clone(), sibling(e, LABELS_FILE)),
        (None, Some(l), _) => (sibling(l, EXCLUSIONS_FILE), l.clone()),
        (None, None, Some(dir)) => (dir.join(EXCLUSIONS_FILE), dir.join(LABELS_FILE)),
        (None, None, None) => return Ok(TriageLog::in_memory()),
    };
    Ok(TriageLog::open_files(&exclusions, &labels)?)
}

fn ingest(_global: &GlobalOpts, args: &IngestArgs) -> Exit {
    let registry = args.registry.registry();
    let mut metas = Vec::new();
    let mut failed = 0usize;
    if let Some(root) = &args.from_fixtures {
        let root = std::fs::canonicalize(root).map_err(|e| CliError::input(root, e))?;
        let source = FixtureSource::open(&root)?;
        for coord in source.coordinates().filter(|c| registry.is_none_or(|r| c.registry == r)) {
            match source.fetch_metadata(coord) {
                Ok(m) => metas.push(m),
                Err(err) => {
                    failed += 1;
                    tracing::error!(%coord, %err, "ingest failed");
                }
            }
        }
    } else {
        let coords = args.coords.as_deref().expect("clap requires --coords with --live");
        let archives = args
            .archives
            .clone()
            .unwrap_or_else(|| args.out.parent().unwrap_or(Path::new(".")).join("archives"));
        let (fetched, errors) = live_ingest(coords, &archives, registry)?;
        metas = fetched;
        failed = errors;
    }
    metas.sort_by(|a, b| a.coordinate.cmp(&b.coordinate));
    write_json(Some(&args.out), &metas)?;
    tracing::info!(packages = metas.len(), failed, out = %args.out.display(), "ingested");
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

#[cfg(feature = "live")]
fn read_coords(path: &Path) -> Result<Vec<PackageCoordinate>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().map_err(|e| CliError::input(path, e)))
        .collect()
}

#[cfg(feature = "live")]
fn live_ingest(
    coords: &Path,
    archives: &Path,
    registry: Option<pkgvet::registry::Registry>,
) -> Result<(Vec<PackageMetadata>, usize), CliError> {
    use pkgvet::registry::live::{LiveClient, LiveConfig};

    let coords: Vec<PackageCoordinate> =
        read_coords(coords)?.into_iter().filter(|c| registry.is_none_or(|r| c.registry == r)).collect();
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "<runtime>".into(), source })?;
    rt.block_on(async {
        let client = LiveClient::new(LiveConfig::default())?;
        let mut metas = Vec::new();
        let mut failed = 0;
        for (coord, result) in client.fetch_many(&coords).await {
            let fetched = match result {
                Ok(f) => f,
                Err(err) => {
                    failed += 1;
                    tracing::error!(%coord, %err, "fetch failed");
                    continue;
                }
            };
            let mut meta = fetched.metadata;
            if let Some(url) = fetched.archive_url {
                let dir = archives.join(coord.registry.as_str().to_lowercase()).join(&coord.name).join(&coord.version);
                match client.download_archive(&url, &dir).await {
                    Ok(path) => meta.archive = Some(path),
                    Err(err) => {
                        failed += 1;
                        tracing::error!(%coord, %err, "archive download failed");
                    }
                }
            }
            metas.push(meta);
        }
        Ok((metas, failed))
    })
}

#[cfg(not(feature = "live"))]
fn live_ingest(
    _coords: &Path,
    _archives: &Path,
    _registry: Option<pkgvet::registry::Registry>,
) -> Result<(Vec<PackageMetadata>, usize), CliError> {
    Err(CliError::Usage("this build has no live registry support (feature `live`)".into()))
}

fn graph(global: &GlobalOpts, args: &GraphArgs) -> Exit {
    let settings = inputs(global, None)?.settings;
    let metas: Vec<PackageMetadata> = read_json(&args.input)?;
    let graph = build_graph(&metas, settings.resolution);
    for w in graph.warnings() {
        tracing::warn!(warning = %w, "graph");
    }
    write_text(args.out.as_deref(), &graph.to_json())?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct AnalyzeSummary {
    packages: usize,
    analyzers: Vec<AnalyzerKind>,
    ran: pkgvet::pipeline::RunCounts,
    cache_hits: usize,
    cache_misses: usize,
    cache_corrupt: usize,
    failures: Vec<pkgvet::pipeline::AnalyzerFailure>,
}

fn analyze_cmd(global: &GlobalOpts, args: &AnalyzeArgs) -> Exit {
    let (pipeline, analysis) = analyze(global, &args.analysis, None)?;
    let (cache_hits, cache_misses, cache_corrupt, _) = pipeline.cache.as_ref().map(|c| c.stats.snapshot()).unwrap_or_default();
    let summary = AnalyzeSummary {
        packages: analysis.metas.len(),
        analyzers: args.analysis.analyzers.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        ran: pipeline.counters.snapshot(),
        cache_hits,
        cache_misses,
        cache_corrupt,
        failures: analysis.failures.clone(),
    };
    write_json(None, &summary)?;
    Ok(if analysis.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn flag(global: &GlobalOpts, args: &FlagArgs) -> Exit {
    let (pipeline, analysis) = analyze(global, &args.analysis, args.rules.as_deref())?;
    let log = triage_log(&args.triage, None)?;
    let reports = pipeline.flag(&analysis, &log);
    let queued = select_queue(&reports, &BTreeMap::new(), None, None).len();
    write_json(args.out.as_deref(), &reports)?;
    tracing::info!(reports = reports.len(), queued, failures = analysis.failures.len(), "flagged");
    Ok(if analysis.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn report(global: &GlobalOpts, args: &ReportArgs) -> Exit {
    let reports: Vec<SuspicionReport> = read_json(&args.reports)?;
    let amplified = if let Some(path) = &args.graph {
        let doc: GraphDocument = read_json(path)?;
        amplified_downloads(&DependencyGraph::from_document(&doc).map_err(|e| CliError::input(path, e))?)
    } else if let Some(path) = &args.input {
        let metas: Vec<PackageMetadata> = read_json(path)?;
        amplified_downloads(&build_graph(&metas, inputs(global, None)?.settings.resolution))
    } else {
        tracing::info!("no --in or --graph; amplified downloads count as 0");
        BTreeMap::new()
    };
    let queue = select_queue(&reports, &amplified, args.status, args.top);
    let text = match args.format {
        Format::Json => queue_to_json(&queue),
        Format::Table => queue_to_table(&queue),
    };
    write_text(args.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn parse_scope(raw: &str) -> Result<LabelScope, CliError> {
    match raw.split_once(':') {
        None if raw.eq_ignore_ascii_case("package") => Ok(LabelScope::Package),
        Some((kind, rule)) if kind.eq_ignore_ascii_case("rule") && !rule.is_empty() => {
            Ok(LabelScope::PackageRule { rule: rule.to_string() })
        }
        Some((kind, author)) if kind.eq_ignore_ascii_case("author") && !author.is_empty() => {
            Ok(LabelScope::Author { author: author.to_string() })
        }
        _ => Err(CliError::Usage(format!("invalid scope `{raw}`: expected package, rule:<ID> or author:<NAME>"))),
    }
}

#[derive(Serialize)]
struct LabelOutput<'a> {
    report: &'a SuspicionReport,
    exclusion: Option<&'a pkgvet::heuristics::ExclusionRecord>,
    recorded: bool,
    also_updated: Vec<&'a PackageCoordinate>,
}

fn label(global: &GlobalOpts, args: &LabelArgs) -> Exit {
    let scope = parse_scope(&args.scope)?;
    if args.verdict == pkgvet::heuristics::Verdict::Malicious && scope != LabelScope::Package {
        return Err(CliError::Usage("a MALICIOUS label applies to the package only".into()));
    }
    let mut reports: Vec<SuspicionReport> = read_json(&args.reports)?;
    let default_dir = args.reports.parent().map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p });
    let mut log = triage_log(&args.triage, default_dir)?;
    let known_malware: Option<PathBuf> = match &args.known_malware {
        Some(p) => Some(p.clone()),
        None => match &global.config {
            Some(path) => Settings::load(path)?.known_malware,
            None => None,
        },
    };
    let req = LabelRequest {
        coordinate: args.coord.clone(),
        verdict: args.verdict,
        scope,
        analyst: args.analyst.clone(),
        note: args.note.clone(),
    };
    let target = reports.iter().find(|r| r.coordinate == args.coord);
    let outcome = log.apply_label(target, &req, known_malware.as_deref(), Utc::now())?;
    let mut changed = BTreeSet::new();
    for r in &mut reports {
        let before = r.clone();
        if r.coordinate == args.coord {
            *r = outcome.report.clone();
        } else {
            r.reapply(&log);
        }
        if *r != before && r.coordinate != args.coord {
            changed.insert(r.coordinate.clone());
        }
    }
    let mut text = serde_json::to_string_pretty(&reports).expect("reports serialize");
    text.push('\n');
    write_text(Some(&args.reports), &text)?;
    let out = LabelOutput {
        report: &outcome.report,
        exclusion: outcome.exclusion.as_ref(),
        recorded: outcome.recorded,
        also_updated: changed.iter().collect(),
    };
    write_json(None, &out)?;
    Ok(EXIT_OK)
}

fn serve(global: &GlobalOpts, args: &ServeArgs) -> Exit {
    let (pipeline, analysis) = analyze(global, &args.analysis, args.rules.as_deref())?;
    let partial = !analysis.failures.is_empty();
    let log = triage_log(&args.triage, None)?;
    let known_malware = args.known_malware.clone().or_else(|| pipeline.inputs.settings.known_malware.clone());
    let state = std::sync::Arc::new(pkgvet_triage::TriageState::new(
        pkgvet_triage::Snapshot { pipeline, analysis },
        log,
        known_malware,
    ));
    let app = pkgvet_triage::router(state, &args.cors_origins);
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "<runtime>".into(), source })?;
    rt.block_on(pkgvet_triage::serve(args.addr, app))
        .map_err(|source| CliError::Io { path: args.addr.to_string(), source })?;
    Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
}

fn runplan(global: &GlobalOpts, args: &RunplanArgs) -> Exit {
    let metas: Vec<PackageMetadata> = read_json(&args.input)?;
    let meta = metas
        .iter()
        .find(|m| m.coordinate == args.coord)
        .cloned()
        .ok_or_else(|| CliError::input(&args.input, format!("no package {}", args.coord)))?;
    let pipeline = pipeline(global, inputs(global, None)?, 0)?;
    let analysis = pipeline.analyze(metas, &[AnalyzerKind::Static].into())?;
    let exports: Vec<String> = analysis
        .statics
        .get(&args.coord)
        .map(|s| s.exports.iter().map(|e| e.export_name.clone()).collect())
        .unwrap_or_default();
    let mut text = make_run_plan(&meta, &exports).to_json();
    text.push('\n');
    write_text(None, &text)?;
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Exit {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(a) => ingest(g, a),
        Command::Graph(a) => graph(g, a),
        Command::Analyze(a) => analyze_cmd(g, a),
        Command::Flag(a) => flag(g, a),
        Command::Report(a) => report(g, a),
        Command::Label(a) => label(g, a),
        Command::Serve(a) => serve(g, a),
        Command::Runplan(a) => runplan(g, a),
    }
}
