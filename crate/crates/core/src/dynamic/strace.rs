//! Converter from `strace -f -tt` output to the normalized trace format.
//!
//! Expected invocation:
//! `strace -f -tt -e trace=openat,open,creat,connect,execve,clone,clone3,fork,vfork -o out.txt <cmd>`.
//! Lines are `<pid> <HH:MM:SS.micros> <syscall>(<args>) = <ret>`. Failed
//! calls and `<unfinished ...>` fragments are skipped. DNS queries are not
//! visible at this level; connects to port 53 are dropped.

use super::trace::{encode_run, EventDetail, RunMode, TraceEvent};
use crate::registry::PackageCoordinate;
use std::collections::HashMap;

struct Line<'a> {
    pid: u32,
    ts: f64,
    call: &'a str,
    args: &'a str,
    ret: &'a str,
}

fn split_line(raw: &str) -> Option<Line<'_>> {
    let mut rest = raw.trim();
    let (pid, after) = rest.split_once(' ')?;
    let pid = pid.trim_start_matches("[pid").trim().parse().ok()?;
    rest = after.trim_start();
    let (clock, after) = rest.split_once(' ')?;
    let ts = parse_clock(clock)?;
    let open = after.find('(')?;
    let close = after.rfind(") = ")?;
    Some(Line { pid, ts, call: &after[..open], args: &after[open + 1..close], ret: after[close + 4..].trim() })
}

fn parse_clock(s: &str) -> Option<f64> {
    let mut parts = s.split(':');
    let h: f64 = parts.next()?.parse().ok()?;
    let m: f64 = parts.next()?.parse().ok()?;
    let sec: f64 = parts.next()?.parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + sec)
}

/// First double-quoted string in `s`, with C escapes left as written.
fn first_quoted(s: &str) -> Option<&str> {
    let start = s.find('"')? + 1;
    let end = start + s[start..].find('"')?;
    Some(&s[start..end])
}

fn quoted_list(s: &str) -> Vec<String> {
    let Some(open) = s.find('[') else { return Vec::new() };
    let Some(close) = s[open..].find(']') else { return Vec::new() };
    s[open + 1..open + close].split(", ").filter_map(|p| first_quoted(p).map(str::to_string)).collect()
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let i = s.find(start)? + start.len();
    let j = i + s[i..].find(end)?;
    Some(&s[i..j])
}

fn exe_base(path: &str) -> String {
    path.rsplit('/').next().unwrap_or(path).to_string()
}

/// Converts one strace capture of a single run. `root` names the process
/// that started the run (`npm`, `pip`, `gem`, a runtime).
pub fn convert(text: &str, coordinate: &PackageCoordinate, mode: RunMode, n: usize, root: &str) -> Vec<TraceEvent> {
    let run = encode_run(coordinate, mode, n);
    let mut exe: HashMap<u32, String> = HashMap::new();
    let mut parent: HashMap<u32, u32> = HashMap::new();
    let mut t0 = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let Some(l) = split_line(raw) else { continue };
        if l.ret.starts_with('-') || l.ret.starts_with('?') {
            continue;
        }
        let t0 = *t0.get_or_insert(l.ts);
        let detail = match l.call {
            "clone" | "clone3" | "fork" | "vfork" => {
                if let Ok(child) = l.ret.split_whitespace().next().unwrap_or("").parse::<u32>() {
                    parent.insert(child, l.pid);
                    if let Some(e) = exe.get(&l.pid).cloned() {
                        exe.insert(child, e);
                    }
                }
                continue;
            }
            "execve" => {
                let Some(path) = first_quoted(l.args) else { continue };
                let mut argv = quoted_list(l.args);
                if argv.is_empty() {
                    argv.push(path.to_string());
                }
                let mut chain = Vec::new();
                let mut cur = l.pid;
                while let Some(&p) = parent.get(&cur) {
                    chain.push(exe.get(&p).cloned().unwrap_or_else(|| root.to_string()));
                    cur = p;
                    if chain.len() > 64 {
                        break;
                    }
                }
                if chain.last().map(String::as_str) != Some(root) {
                    chain.push(root.to_string());
                }
                chain.reverse();
                let first_exec = !exe.contains_key(&l.pid) && !parent.contains_key(&l.pid);
                exe.insert(l.pid, exe_base(path));
                if first_exec {
                    // The traced root itself.
                    continue;
                }
                EventDetail::ProcSpawn { argv, parents: chain }
            }
            "open" | "openat" | "creat" => {
                let Some(path) = first_quoted(l.args) else { continue };
                let writes = l.call == "creat" || ["O_WRONLY", "O_RDWR", "O_CREAT", "O_TRUNC", "O_APPEND"].iter().any(|f| l.args.contains(f));
                if !path.starts_with('/') {
                    continue;
                }
                if writes {
                    EventDetail::FileWrite { path: path.to_string() }
                } else {
                    EventDetail::FileRead { path: path.to_string() }
                }
            }
            "connect" => {
                let port = between(l.args, "htons(", ")").and_then(|p| p.parse::<u16>().ok());
                let ip = between(l.args, "inet_addr(\"", "\"").or_else(|| between(l.args, "inet_pton(AF_INET6, \"", "\""));
                match (ip, port) {
                    (Some(_), Some(53)) => continue,
                    (Some(ip), Some(port)) => EventDetail::NetConnect { ip: ip.to_string(), port, domain: None },
                    _ => continue,
                }
            }
            _ => continue,
        };
        out.push(TraceEvent { run: run.clone(), mode, ts: ((l.ts - t0) * 1e6).round() / 1e6, detail, line: i + 1 });
    }
    out
}
