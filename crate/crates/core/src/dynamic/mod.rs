//! Run plans and classification of captured system-call traces.

pub mod classify;
pub mod runplan;
pub mod strace;
pub mod trace;

pub use classify::{
    attribute_findings, classify, classify_files, classify_network, classify_processes, Attributed, DynamicConfig,
    DynamicConfigError, DynamicFindings, EndpointFinding, EvidenceRef, FileFinding, PathPatterns, ProcessFinding,
};
pub use runplan::{make_run_plan, RunPlan, RunStep};
pub use trace::{decode_run, encode_run, parse_trace, EventDetail, RunMode, TraceError, TraceEvent};

use crate::registry::PackageCoordinate;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DynamicError {
    #[error("{path}: {source}")]
    Trace {
        path: String,
        #[source]
        source: TraceError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses and classifies the trace files of one package. Events whose run
/// belongs to a different coordinate are ignored.
pub fn analyze_traces(
    coordinate: &PackageCoordinate,
    traces: &[impl AsRef<Path>],
    cfg: &DynamicConfig,
) -> Result<DynamicFindings, DynamicError> {
    let mut events = Vec::new();
    for path in traces {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DynamicError::Io { path: path.display().to_string(), source })?;
        let parsed =
            parse_trace(&text).map_err(|source| DynamicError::Trace { path: path.display().to_string(), source })?;
        for e in parsed {
            match decode_run(&e.run) {
                Some((c, _)) if c == *coordinate => events.push(e),
                _ => tracing::warn!(run = %e.run, %coordinate, "trace event for another package ignored"),
            }
        }
    }
    events.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(classify(coordinate, &events, cfg))
}
