//! Normalized trace format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"run":"npm/x@1.0.0#INSTALL#0","mode":"INSTALL","ts":0.42,"kind":"DNS_QUERY","detail":{"domain":"pastebin.com"}}
//! ```
//!
//! `run` is `<coordinate>#<mode>#<n>`; its coordinate and mode must agree
//! with the `mode` field. `ts` is seconds since the start of the run.
//! `detail` depends on `kind`:
//!
//! | kind          | detail                                                |
//! |---------------|-------------------------------------------------------|
//! | `NET_CONNECT` | `{"ip": "1.2.3.4", "port": 443, "domain": "x.org"?}`  |
//! | `DNS_QUERY`   | `{"domain": "x.org"}`                                 |
//! | `FILE_READ`   | `{"path": "/etc/shadow"}`                             |
//! | `FILE_WRITE`  | `{"path": "/tmp/x"}`                                  |
//! | `PROC_SPAWN`  | `{"argv": ["sh", "-c", "id"], "parents": ["npm"]}`    |
//!
//! `parents` lists the spawning chain from the outermost process inward and
//! is never empty.

use crate::registry::PackageCoordinate;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunMode {
    Install,
    EmbeddedBinary,
    Import,
    Functional,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [RunMode::Install, RunMode::EmbeddedBinary, RunMode::Import, RunMode::Functional];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Install => "INSTALL",
            RunMode::EmbeddedBinary => "EMBEDDED_BINARY",
            RunMode::Import => "IMPORT",
            RunMode::Functional => "FUNCTIONAL",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventDetail {
    NetConnect {
        ip: String,
        port: u16,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<String>,
    },
    DnsQuery {
        domain: String,
    },
    FileRead {
        path: String,
    },
    FileWrite {
        path: String,
    },
    ProcSpawn {
        argv: Vec<String>,
        parents: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run: String,
    pub mode: RunMode,
    pub ts: f64,
    #[serde(flatten)]
    pub detail: EventDetail,
    /// 1-based line in the source stream.
    #[serde(skip)]
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("TRACE_MALFORMED at line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Splits `<coordinate>#<mode>[#<n>]`.
pub fn decode_run(run: &str) -> Option<(PackageCoordinate, RunMode)> {
    let mut parts = run.split('#');
    let coordinate = parts.next()?.parse().ok()?;
    let mode = parts.next()?.parse().ok()?;
    Some((coordinate, mode))
}

pub fn encode_run(coordinate: &PackageCoordinate, mode: RunMode, n: usize) -> String {
    format!("{coordinate}#{mode}#{n}")
}

/// Parses a trace stream, returning events stably ordered by timestamp.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| TraceError { line, message };
        let mut ev: TraceEvent = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        ev.line = line;
        let (_, mode) = decode_run(&ev.run).ok_or_else(|| err(format!("undecodable run `{}`", ev.run)))?;
        if mode != ev.mode {
            return Err(err(format!("run mode {mode} disagrees with mode {}", ev.mode)));
        }
        if !ev.ts.is_finite() || ev.ts < 0.0 {
            return Err(err(format!("bad timestamp {}", ev.ts)));
        }
        match &ev.detail {
            EventDetail::ProcSpawn { argv, parents } if argv.is_empty() || parents.is_empty() => {
                return Err(err("PROC_SPAWN needs argv and a non-empty parent chain".into()));
            }
            EventDetail::FileRead { path } | EventDetail::FileWrite { path } if !path.starts_with('/') => {
                return Err(err(format!("path `{path}` is not absolute")));
            }
            EventDetail::DnsQuery { domain } if domain.trim().is_empty() => {
                return Err(err("empty domain".into()));
            }
            _ => {}
        }
        events.push(ev);
    }
    events.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(events)
}

pub fn to_ndjson(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = "npm/x@1.0.0#INSTALL#0";

    fn line(ts: f64, kind_detail: &str) -> String {
        format!(r#"{{"run":"{RUN}","mode":"INSTALL","ts":{ts},{kind_detail}}}"#)
    }

    #[test]
    fn parses_and_orders() {
        let text = [
            line(2.0, r#""kind":"DNS_QUERY","detail":{"domain":"pastebin.com"}"#),
            String::new(),
            line(1.0, r#""kind":"FILE_READ","detail":{"path":"/etc/shadow"}"#),
            line(1.0, r#""kind":"PROC_SPAWN","detail":{"argv":["sh"],"parents":["npm"]}"#),
        ]
        .join("\n");
        let ev = parse_trace(&text).unwrap();
        assert_eq!(ev.iter().map(|e| e.line).collect::<Vec<_>>(), [3, 4, 1]);
        assert_eq!(ev[2].detail, EventDetail::DnsQuery { domain: "pastebin.com".into() });
        assert!(parse_trace("").unwrap().is_empty());
        let round = parse_trace(&to_ndjson(&ev)).unwrap();
        assert_eq!(round.iter().map(|e| &e.detail).collect::<Vec<_>>(), ev.iter().map(|e| &e.detail).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = format!("{}\n{{not json", line(0.0, r#""kind":"DNS_QUERY","detail":{"domain":"a.org"}"#));
        assert_eq!(parse_trace(&text).unwrap_err().line, 2);
        let orphan = line(0.0, r#""kind":"PROC_SPAWN","detail":{"argv":["sh"],"parents":[]}"#);
        assert_eq!(parse_trace(&orphan).unwrap_err().line, 1);
        let wrong_mode = line(0.0, r#""kind":"DNS_QUERY","detail":{"domain":"a.org"}"#).replace("\"mode\":\"INSTALL\"", "\"mode\":\"IMPORT\"");
        assert!(parse_trace(&wrong_mode).is_err());
    }

    #[test]
    fn run_names_round_trip() {
        let c: PackageCoordinate = "pypi/sysinfo-agent@0.3.1".parse().unwrap();
        assert_eq!(decode_run(&encode_run(&c, RunMode::Functional, 2)), Some((c, RunMode::Functional)));
    }
}
