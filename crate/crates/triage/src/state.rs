use crate::ApiError;
use chrono::Utc;
use pkgvet::heuristics::{
    rule_stats, select_queue, ExclusionRecord, ExclusionScope, LabelRequest, LabelScope, QueueEntry, ReportStatus, RuleStat,
    SuspicionReport, TriageError, TriageLog, Verdict,
};
use pkgvet::pipeline::{Analysis, EvidenceBundle, Pipeline};
use pkgvet::registry::PackageCoordinate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

/// One finished analysis and the pipeline that produced it.
pub struct Snapshot {
    pub pipeline: Pipeline,
    pub analysis: Analysis,
}

struct Inner {
    reports: BTreeMap<PackageCoordinate, SuspicionReport>,
    revisions: BTreeMap<PackageCoordinate, u64>,
    log: TriageLog,
}

pub struct TriageState {
    snapshot: Snapshot,
    amplified: BTreeMap<PackageCoordinate, u64>,
    known_malware: Option<PathBuf>,
    inner: Mutex<Inner>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CoordinateField {
    Text(String),
    Object(PackageCoordinate),
}

/// Body of `POST /label`. `coordinate` is either `"npm/name@1.0.0"` or a
/// coordinate object; `revision`, when present, must match the package's
/// current revision.
#[derive(Debug, Clone, Deserialize)]
pub struct LabelBody {
    coordinate: CoordinateField,
    verdict: String,
    #[serde(default)]
    scope: Option<serde_json::Value>,
    #[serde(default)]
    analyst: String,
    #[serde(default)]
    note: String,
    #[serde(default)]
    revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelResponse {
    pub revision: u64,
    pub report: SuspicionReport,
    pub exclusion: Option<ExclusionRecord>,
    pub recorded: bool,
    /// Other coordinates whose report changed, e.g. through an author exclusion.
    pub also_updated: Vec<PackageCoordinate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackageResponse {
    pub revision: u64,
    #[serde(flatten)]
    pub evidence: EvidenceBundle,
}

impl LabelBody {
    fn into_request(self) -> Result<(LabelRequest, Option<u64>), ApiError> {
        let coordinate = match self.coordinate {
            CoordinateField::Object(c) => c,
            CoordinateField::Text(s) => s.parse().map_err(|_| ApiError::NotFound(format!("no package `{s}`")))?,
        };
        let verdict: Verdict = self.verdict.parse().map_err(ApiError::Invalid)?;
        let scope = match self.scope {
            None | Some(serde_json::Value::Null) => LabelScope::Package,
            Some(v) => serde_json::from_value(v).map_err(|e| ApiError::Invalid(format!("invalid scope: {e}")))?,
        };
        if verdict == Verdict::Malicious && scope != LabelScope::Package {
            return Err(ApiError::Invalid("a MALICIOUS label applies to the package only".into()));
        }
        Ok((LabelRequest { coordinate, verdict, scope, analyst: self.analyst, note: self.note }, self.revision))
    }
}

fn triage_error(e: TriageError) -> ApiError {
    match e {
        TriageError::UnknownReport(c) => ApiError::UnknownReport(format!("no report for {c}")),
        TriageError::InvalidScope(m) => ApiError::Invalid(m),
        other => ApiError::Internal(other.to_string()),
    }
}

impl TriageState {
    /// Evaluates every package against `log` and holds the result.
    pub fn new(snapshot: Snapshot, log: TriageLog, known_malware: Option<PathBuf>) -> TriageState {
        let reports = snapshot.pipeline.flag(&snapshot.analysis, &log);
        let revisions = reports.iter().map(|r| (r.coordinate.clone(), 0)).collect();
        let reports = reports.into_iter().map(|r| (r.coordinate.clone(), r)).collect();
        TriageState { amplified: snapshot.analysis.amplified(), snapshot, known_malware, inner: Mutex::new(Inner { reports, revisions, log }) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn report_count(&self) -> usize {
        self.lock().reports.len()
    }

    pub fn reports(&self) -> Vec<SuspicionReport> {
        self.lock().reports.values().cloned().collect()
    }

    /// Ranked queue, identical to the report export for the same reports.
    pub fn queue(&self, status: Option<ReportStatus>, top: Option<usize>) -> Vec<QueueEntry> {
        select_queue(&self.reports(), &self.amplified, status, top)
    }

    pub fn package(&self, coordinate: &PackageCoordinate) -> Result<PackageResponse, ApiError> {
        let (report, revision) = {
            let inner = self.lock();
            (inner.reports.get(coordinate).cloned(), inner.revisions.get(coordinate).copied().unwrap_or(0))
        };
        let evidence = self
            .snapshot
            .pipeline
            .evidence(&self.snapshot.analysis, coordinate, report.as_ref())
            .ok_or_else(|| ApiError::NotFound(format!("no package {coordinate}")))?;
        Ok(PackageResponse { revision, evidence })
    }

    pub fn rule_stats(&self) -> BTreeMap<String, RuleStat> {
        let inner = self.lock();
        let reports: Vec<SuspicionReport> = inner.reports.values().cloned().collect();
        let ids = self.snapshot.pipeline.inputs.rules.enabled().map(|r| r.id());
        rule_stats(ids, &reports, &inner.log)
    }

    /// Applies one analyst label and re-evaluates the reports it affects.
    pub fn label(&self, body: LabelBody) -> Result<LabelResponse, ApiError> {
        let (req, revision) = body.into_request()?;
        let mut inner = self.lock();
        let Inner { reports, revisions, log } = &mut *inner;
        let current = *revisions
            .get(&req.coordinate)
            .ok_or_else(|| ApiError::NotFound(format!("no package {}", req.coordinate)))?;
        match revision {
            Some(r) if r != current => {
                return Err(ApiError::Conflict(format!(
                    "{} is at revision {current}, request was based on {r}",
                    req.coordinate
                )))
            }
            None => {
                if let Some(v) = log.latest_verdict(&req.coordinate).filter(|v| *v != req.verdict) {
                    return Err(ApiError::Conflict(format!(
                        "{} is already labeled {v}; resubmit with revision {current} to change it",
                        req.coordinate
                    )));
                }
            }
            _ => {}
        }
        let outcome = log
            .apply_label(reports.get(&req.coordinate), &req, self.known_malware.as_deref(), Utc::now())
            .map_err(triage_error)?;

        let mut also_updated = Vec::new();
        if let Some(ExclusionRecord { scope: scope @ ExclusionScope::Author { .. }, .. }) = &outcome.exclusion {
            for (coord, report) in reports.iter_mut() {
                if coord == &req.coordinate || !report.triggered.iter().any(|t| scope.covers(coord, &report.authors, &t.rule)) {
                    continue;
                }
                let before = report.clone();
                report.reapply(log);
                if *report != before {
                    *revisions.entry(coord.clone()).or_default() += 1;
                    also_updated.push(coord.clone());
                }
            }
        }
        let revision = revisions.entry(req.coordinate.clone()).or_default();
        if outcome.recorded || reports.get(&req.coordinate) != Some(&outcome.report) {
            *revision += 1;
        }
        let revision = *revision;
        reports.insert(req.coordinate.clone(), outcome.report.clone());
        tracing::info!(coordinate = %req.coordinate, verdict = %req.verdict, revision, "label applied");
        Ok(LabelResponse {
            revision,
            report: outcome.report,
            exclusion: outcome.exclusion,
            recorded: outcome.recorded,
            also_updated,
        })
    }
}
