//! Rule evaluation and queue ranking.

use super::rules::{RuleFamily, RuleSet};
use super::triage::{ExclusionScope, TriageLog, Verdict};
use crate::dynamic::DynamicFindings;
use crate::exec::{self, ExecMode};
use crate::graph::DependencyGraph;
use crate::metadata::MetadataFindings;
use crate::registry::PackageCoordinate;
use crate::static_analysis::{ApiCategory, FlowFinding, InstallHook, StaticSignal, UnitIssue, UsageSummary};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

/// Static analyzer output as seen by rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticFacts {
    pub has_install_hook: bool,
    pub install_hooks: Vec<InstallHook>,
    /// Categories present in this version but absent from its predecessor.
    pub new_api_categories: Vec<ApiCategory>,
    pub combined_categories: Vec<ApiCategory>,
    pub flows: Vec<FlowFinding>,
    pub signals: Vec<StaticSignal>,
    pub parse_errors: Vec<UnitIssue>,
}

impl StaticFacts {
    pub fn from_summary(summary: &UsageSummary, new_api_categories: BTreeSet<ApiCategory>) -> StaticFacts {
        let combined: BTreeSet<ApiCategory> = summary.combined_apis.values().map(|r| r.category).collect();
        StaticFacts {
            has_install_hook: summary.has_install_hook,
            install_hooks: summary.install_hooks.clone(),
            new_api_categories: new_api_categories.into_iter().collect(),
            combined_categories: combined.into_iter().collect(),
            flows: summary.flows.clone(),
            signals: summary.signals.clone(),
            parse_errors: summary.parse_errors.clone(),
        }
    }
}

/// The facts document rules are evaluated against. A `None` section means
/// that analyzer produced no report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Facts {
    pub metadata: Option<MetadataFindings>,
    #[serde(rename = "static")]
    pub static_facts: Option<StaticFacts>,
    pub dynamic: Option<DynamicFindings>,
}

impl Facts {
    pub fn missing(&self) -> Vec<RuleFamily> {
        let mut out = Vec::new();
        if self.metadata.is_none() {
            out.push(RuleFamily::Metadata);
        }
        if self.static_facts.is_none() {
            out.push(RuleFamily::Static);
        }
        if self.dynamic.is_none() {
            out.push(RuleFamily::Dynamic);
        }
        out
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("facts serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationInput {
    pub coordinate: PackageCoordinate,
    pub authors: Vec<String>,
    pub release_time: DateTime<Utc>,
    pub facts: Facts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredRule {
    pub rule: String,
    pub family: RuleFamily,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gray: bool,
    /// Paths into the facts document, such as `static.flows[0]`.
    pub evidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_by: Option<ExclusionScope>,
}

impl TriggeredRule {
    pub fn excluded(&self) -> bool {
        self.excluded_by.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReportStatus {
    /// Nothing triggered; never queued.
    Clean,
    Flagged,
    Excluded,
    ConfirmedMalicious,
    ConfirmedBenign,
}

impl ReportStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportStatus::Clean => "CLEAN",
            ReportStatus::Flagged => "FLAGGED",
            ReportStatus::Excluded => "EXCLUDED",
            ReportStatus::ConfirmedMalicious => "CONFIRMED_MALICIOUS",
            ReportStatus::ConfirmedBenign => "CONFIRMED_BENIGN",
        }
    }
}

impl fmt::Display for ReportStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReportStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ReportStatus::Clean,
            ReportStatus::Flagged,
            ReportStatus::Excluded,
            ReportStatus::ConfirmedMalicious,
            ReportStatus::ConfirmedBenign,
        ]
        .into_iter()
        .find(|st| st.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionReport {
    pub coordinate: PackageCoordinate,
    pub authors: Vec<String>,
    pub release_time: DateTime<Utc>,
    pub triggered: Vec<TriggeredRule>,
    pub score: f64,
    pub status: ReportStatus,
    /// Analyzer families without a report; their rules were not evaluated.
    pub missing_reports: Vec<RuleFamily>,
}

impl SuspicionReport {
    pub fn rule_ids(&self) -> impl Iterator<Item = &str> {
        self.triggered.iter().map(|t| t.rule.as_str())
    }

    /// Sum of weights over triggers not tagged policy-gray.
    pub fn substantive_score(&self) -> f64 {
        self.triggered.iter().filter(|t| !t.gray).fold(0.0, |acc, t| acc + t.weight)
    }

    /// Refreshes exclusion marks and status from the triage log, leaving
    /// the triggered list itself untouched.
    pub fn reapply(&mut self, log: &TriageLog) {
        for t in &mut self.triggered {
            t.excluded_by = log.exclusion_for(&self.coordinate, &self.authors, &t.rule).map(|e| e.scope.clone());
        }
        self.status = if self.triggered.is_empty() {
            ReportStatus::Clean
        } else if log.latest_verdict(&self.coordinate) == Some(Verdict::Malicious) {
            ReportStatus::ConfirmedMalicious
        } else if self.triggered.iter().all(TriggeredRule::excluded) {
            ReportStatus::Excluded
        } else {
            ReportStatus::Flagged
        };
    }
}

/// Evaluates every enabled rule over one package's facts.
pub fn evaluate(input: &EvaluationInput, rules: &RuleSet, log: &TriageLog) -> SuspicionReport {
    let missing = input.facts.missing();
    let doc = input.facts.to_value();
    let mut triggered = Vec::new();
    for rule in rules.enabled() {
        if missing.contains(&rule.spec.family) {
            continue;
        }
        let mut evidence = Vec::new();
        if rule.predicate.eval(&doc, &mut evidence) {
            evidence.sort();
            evidence.dedup();
            triggered.push(TriggeredRule {
                rule: rule.spec.id.clone(),
                family: rule.spec.family,
                weight: rule.spec.weight,
                gray: rule.is_gray(),
                evidence,
                excluded_by: None,
            });
        }
    }
    let score = triggered.iter().fold(0.0, |acc, t| acc + t.weight);
    let mut report = SuspicionReport {
        coordinate: input.coordinate.clone(),
        authors: input.authors.clone(),
        release_time: input.release_time,
        triggered,
        score,
        status: ReportStatus::Clean,
        missing_reports: missing,
    };
    report.reapply(log);
    report
}

/// Evaluates many packages, in parallel when `mode` allows; output follows
/// input order.
pub fn evaluate_all(inputs: &[EvaluationInput], rules: &RuleSet, log: &TriageLog, mode: ExecMode) -> Vec<SuspicionReport> {
    exec::map(mode, inputs, |i| evaluate(i, rules, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub rank: usize,
    pub coordinate: PackageCoordinate,
    pub status: ReportStatus,
    pub score: f64,
    pub rules: Vec<String>,
    pub amplified_downloads: u64,
    pub release_time: DateTime<Utc>,
}

/// Amplified download counts for every graph node.
pub fn amplified_downloads(graph: &DependencyGraph) -> BTreeMap<PackageCoordinate, u64> {
    graph
        .nodes()
        .filter_map(|c| graph.reverse_deps(c).ok().map(|r| (c.clone(), r.amplified_downloads)))
        .collect()
}

/// Orders reports for review. Clean reports are dropped, as are excluded
/// ones unless `include_excluded`. Ordering: substantive (non-gray) score,
/// total score, amplified downloads and release time, all descending, then
/// coordinate.
pub fn rank_queue(
    reports: &[SuspicionReport],
    amplified: &BTreeMap<PackageCoordinate, u64>,
    include_excluded: bool,
) -> Vec<QueueEntry> {
    let mut picked: Vec<&SuspicionReport> = reports
        .iter()
        .filter(|r| r.status != ReportStatus::Clean && (include_excluded || r.status != ReportStatus::Excluded))
        .collect();
    let amp = |r: &SuspicionReport| amplified.get(&r.coordinate).copied().unwrap_or(0);
    picked.sort_by(|a, b| {
        b.substantive_score()
            .total_cmp(&a.substantive_score())
            .then(b.score.total_cmp(&a.score))
            .then(amp(b).cmp(&amp(a)))
            .then(b.release_time.cmp(&a.release_time))
            .then(a.coordinate.cmp(&b.coordinate))
    });
    picked
        .into_iter()
        .enumerate()
        .map(|(i, r)| QueueEntry {
            rank: i + 1,
            coordinate: r.coordinate.clone(),
            status: r.status,
            score: r.score,
            rules: r.triggered.iter().filter(|t| !t.excluded()).map(|t| t.rule.clone()).collect(),
            amplified_downloads: amp(r),
            release_time: r.release_time,
        })
        .collect()
}

/// Queue view with an optional status filter and length limit. Without a
/// status this is the default queue; asking for EXCLUDED includes excluded
/// reports. Ranks are renumbered after filtering.
pub fn select_queue(
    reports: &[SuspicionReport],
    amplified: &BTreeMap<PackageCoordinate, u64>,
    status: Option<ReportStatus>,
    top: Option<usize>,
) -> Vec<QueueEntry> {
    let mut queue = rank_queue(reports, amplified, status == Some(ReportStatus::Excluded));
    if let Some(st) = status {
        queue.retain(|q| q.status == st);
        for (i, q) in queue.iter_mut().enumerate() {
            q.rank = i + 1;
        }
    }
    if let Some(k) = top {
        queue.truncate(k);
    }
    queue
}

pub fn queue_to_json(queue: &[QueueEntry]) -> String {
    let mut s = serde_json::to_string_pretty(queue).expect("queue serializes");
    s.push('\n');
    s
}

pub fn queue_to_table(queue: &[QueueEntry]) -> String {
    let width = queue.iter().map(|e| e.coordinate.to_string().len()).max().unwrap_or(0).max("COORDINATE".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<width$}  {:<19}  {:>6}  {:>12}  RULES", "RANK", "COORDINATE", "STATUS", "SCORE", "AMPLIFIED");
    for e in queue {
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:<19}  {:>6.2}  {:>12}  {}",
            e.rank,
            e.coordinate.to_string(),
            e.status.as_str(),
            e.score,
            e.amplified_downloads,
            e.rules.join(",")
        );
    }
    out
}
