use clap::{Args, Parser, Subcommand, ValueEnum};
use pkgvet::cache::AnalyzerKind;
use pkgvet::heuristics::{ReportStatus, Verdict};
use pkgvet::registry::{PackageCoordinate, Registry};
use std::net::SocketAddr;
use std::path::PathBuf;

/// Vet packages from PyPI, npm and RubyGems for signs of malicious intent.
///
/// A typical run: `ingest` writes package metadata, `analyze` fills the
/// report cache, `flag` evaluates the rules into reports, `report` prints
/// the ranked review queue and `label` records analyst verdicts.
#[derive(Debug, Parser)]
#[command(name = "pkgvet", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Settings file (TOML); relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "PKGVET_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Report cache root.
    #[arg(long, global = true, env = "PKGVET_CACHE", value_name = "DIR", default_value = ".pkgvet-cache")]
    pub cache: PathBuf,

    /// Do not read or write the report cache.
    #[arg(long, global = true)]
    pub no_cache: bool,

    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect package metadata from fixtures or the live registries.
    Ingest(IngestArgs),
    /// Build the dependency graph of ingested packages.
    Graph(GraphArgs),
    /// Run analyzers and fill the report cache.
    Analyze(AnalyzeArgs),
    /// Evaluate the rules and write suspicion reports.
    Flag(FlagArgs),
    /// Print the ranked review queue.
    Report(ReportArgs),
    /// Record an analyst verdict on one report.
    Label(LabelArgs),
    /// Serve the triage HTTP API over a fresh evaluation.
    Serve(ServeArgs),
    /// Print the dynamic-analysis run plan for one package.
    Runplan(RunplanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegistryArg {
    All,
    Npm,
    Pypi,
    Rubygems,
}

impl RegistryArg {
    pub fn registry(self) -> Option<Registry> {
        match self {
            RegistryArg::All => None,
            RegistryArg::Npm => Some(Registry::Npm),
            RegistryArg::Pypi => Some(Registry::Pypi),
            RegistryArg::Rubygems => Some(Registry::Rubygems),
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["from_fixtures", "live"]))]
pub struct IngestArgs {
    /// Only packages from this registry.
    #[arg(long, value_enum, default_value = "all")]
    pub registry: RegistryArg,

    /// Fixture tree holding one metadata.json per package version.
    #[arg(long, value_name = "DIR")]
    pub from_fixtures: Option<PathBuf>,

    /// Fetch from the public registry APIs.
    #[arg(long, requires = "coords")]
    pub live: bool,

    /// Coordinates to fetch with --live, one `registry/name@version` per line.
    #[arg(long, value_name = "FILE")]
    pub coords: Option<PathBuf>,

    /// Where --live stores downloaded archives [default: <out dir>/archives].
    #[arg(long, value_name = "DIR")]
    pub archives: Option<PathBuf>,

    /// Output file (JSON array of package metadata).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Packages written by `ingest`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalysisOpts {
    /// Packages written by `ingest`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Analyzers to run: m(etadata), s(tatic), d(ynamic).
    #[arg(long, value_delimiter = ',', default_value = "m,s,d")]
    pub analyzers: Vec<AnalyzerKind>,

    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub analysis: AnalysisOpts,
}

#[derive(Debug, Args, Default)]
pub struct TriageFiles {
    /// Exclusion log (JSONL); created on first write.
    #[arg(long, value_name = "FILE")]
    pub exclusions: Option<PathBuf>,

    /// Label log (JSONL) [default: labels.jsonl beside --exclusions].
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[command(flatten)]
    pub analysis: AnalysisOpts,

    /// Rule file replacing the configured rules.
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,

    #[command(flatten)]
    pub triage: TriageFiles,

    /// Output file (JSON array of reports); stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Reports written by `flag`.
    #[arg(long, value_name = "FILE")]
    pub reports: PathBuf,

    /// Packages written by `ingest`, for amplified download counts.
    #[arg(long = "in", value_name = "FILE", conflicts_with = "graph")]
    pub input: Option<PathBuf>,

    /// Graph written by `graph`, for amplified download counts.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,

    /// Keep only the first K entries.
    #[arg(long, value_name = "K")]
    pub top: Option<usize>,

    /// Only entries with this status; EXCLUDED lists excluded reports.
    #[arg(long)]
    pub status: Option<ReportStatus>,

    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Reports written by `flag`; rewritten with the updated statuses.
    #[arg(long, value_name = "FILE")]
    pub reports: PathBuf,

    /// Package to label, as `registry/name@version`.
    #[arg(long, value_name = "COORD")]
    pub coord: PackageCoordinate,

    /// MALICIOUS or BENIGN.
    #[arg(long)]
    pub verdict: Verdict,

    /// Reach of a BENIGN label: `package`, `rule:<RULE_ID>` or `author:<NAME>`.
    #[arg(long, default_value = "package")]
    pub scope: String,

    #[arg(long, default_value = "")]
    pub note: String,

    #[arg(long, env = "USER", default_value = "analyst")]
    pub analyst: String,

    /// Known-malware list a MALICIOUS label appends to [default: from settings].
    #[arg(long, value_name = "FILE")]
    pub known_malware: Option<PathBuf>,

    /// Exclusion and label logs [default: beside --reports].
    #[command(flatten)]
    pub triage: TriageFiles,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub analysis: AnalysisOpts,

    /// Listen address; loopback unless deliberately changed.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,

    /// Rule file replacing the configured rules.
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,

    #[command(flatten)]
    pub triage: TriageFiles,

    /// Known-malware list MALICIOUS labels append to [default: from settings].
    #[arg(long, value_name = "FILE")]
    pub known_malware: Option<PathBuf>,

    /// Extra browser origin allowed by CORS; loopback origins always are.
    #[arg(long = "cors-origin", value_name = "ORIGIN")]
    pub cors_origins: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunplanArgs {
    /// Packages written by `ingest`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Package to plan, as `registry/name@version`.
    #[arg(long, value_name = "COORD")]
    pub coord: PackageCoordinate,
}
