use serde_json::Value;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn seeded() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/seeded")
}

/// A scratch directory with its own cache, configured for the seeded corpus.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pkgvet"));
        cmd.args(args)
            .current_dir(self.dir.path())
            .env("PKGVET_CACHE", self.path("cache"))
            .env("PKGVET_CONFIG", seeded().join("pkgvet.toml"))
            .env_remove("RUST_LOG");
        cmd
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    /// Runs and requires exit code `code`; returns stdout.
    fn expect(&self, args: &[&str], code: i32) -> String {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn ingest(&self) {
        let fixtures = seeded().join("packages");
        self.expect(&["ingest", "--from-fixtures", fixtures.to_str().unwrap(), "--out", "packages.json"], 0);
    }
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    json(stderr.lines().last().unwrap())
}

fn queue_names(queue: &Value) -> Vec<String> {
    queue.as_array().unwrap().iter().map(|q| q["coordinate"]["name"].as_str().unwrap().to_string()).collect()
}

#[test]
fn ingest_filters_by_registry() {
    let ws = Workspace::new();
    ws.ingest();
    let all: Value = json(&std::fs::read_to_string(ws.path("packages.json")).unwrap());
    assert_eq!(all.as_array().unwrap().len(), 12);
    let fixtures = seeded().join("packages");
    ws.expect(&["ingest", "--registry", "npm", "--from-fixtures", fixtures.to_str().unwrap(), "--out", "npm.json"], 0);
    let npm: Value = json(&std::fs::read_to_string(ws.path("npm.json")).unwrap());
    assert_eq!(npm.as_array().unwrap().len(), 6);
    assert!(npm.as_array().unwrap().iter().all(|m| m["coordinate"]["registry"] == "NPM"));
}

#[test]
fn graph_lists_every_package() {
    let ws = Workspace::new();
    ws.ingest();
    let doc = json(&ws.expect(&["graph", "--in", "packages.json"], 0));
    assert_eq!(doc["nodes"].as_array().unwrap().len(), 12);
    assert!(!doc["edges"].as_array().unwrap().is_empty());
}

#[test]
fn second_analyze_is_all_cache_hits() {
    let ws = Workspace::new();
    ws.ingest();
    let first = json(&ws.expect(&["analyze", "--in", "packages.json", "--analyzers", "m,s,d", "--jobs", "2"], 0));
    assert_eq!(first["ran"]["metadata"], 12);
    assert_eq!(first["ran"]["static_analysis"], 12);
    assert_eq!(first["cache_hits"], 0);
    let second = json(&ws.expect(&["analyze", "--in", "packages.json", "--analyzers", "m,s,d", "--jobs", "2"], 0));
    assert_eq!(second["ran"], serde_json::json!({"metadata": 0, "static_analysis": 0, "dynamic": 0}));
    assert_eq!(second["cache_misses"], 0);
    assert_eq!(second["cache_hits"], first["cache_misses"]);
}

#[test]
fn analyzer_subset_runs_only_those() {
    let ws = Workspace::new();
    ws.ingest();
    let out = json(&ws.expect(&["--no-cache", "analyze", "--in", "packages.json", "--analyzers", "metadata"], 0));
    assert_eq!(out["analyzers"], serde_json::json!(["METADATA"]));
    assert_eq!(out["ran"]["static_analysis"], 0);
}

#[test]
fn benign_label_shrinks_queue_by_exactly_that_entry() {
    let ws = Workspace::new();
    ws.ingest();
    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let before = json(&ws.expect(&["report", "--reports", "reports.json", "--in", "packages.json", "--format", "json"], 0));
    assert_eq!(queue_names(&before).len(), 5);

    let labeled = json(&ws.expect(
        &["label", "--reports", "reports.json", "--coord", "npm/sqlite-bindings@5.1.0", "--verdict", "BENIGN", "--note", "native build"],
        0,
    ));
    assert_eq!(labeled["report"]["status"], "EXCLUDED");
    assert_eq!(labeled["recorded"], true);
    assert!(ws.path("exclusions.jsonl").is_file());
    assert!(ws.path("labels.jsonl").is_file());

    let after = json(&ws.expect(&["report", "--reports", "reports.json", "--in", "packages.json", "--format", "json"], 0));
    let mut expected = queue_names(&before);
    expected.retain(|n| n != "sqlite-bindings");
    assert_eq!(queue_names(&after), expected);

    // Re-flagging with the exclusion log gives the same queue.
    ws.expect(&["flag", "--in", "packages.json", "--exclusions", "exclusions.jsonl", "--out", "reflagged.json"], 0);
    let reflagged = json(&ws.expect(&["report", "--reports", "reflagged.json", "--in", "packages.json", "--format", "json"], 0));
    assert_eq!(reflagged, after);

    let excluded = json(&ws.expect(
        &["report", "--reports", "reflagged.json", "--in", "packages.json", "--format", "json", "--status", "excluded"],
        0,
    ));
    assert_eq!(queue_names(&excluded), ["sqlite-bindings"]);
}

#[test]
fn author_scope_label_updates_other_reports() {
    let ws = Workspace::new();
    ws.ingest();
    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let out = json(&ws.expect(
        &["label", "--reports", "reports.json", "--coord", "rubygems/fast_json_ext@1.2.0", "--verdict", "benign", "--scope", "author:fastjson-maintainers"],
        0,
    ));
    assert_eq!(out["exclusion"]["scope"], serde_json::json!({"kind": "author", "author": "fastjson-maintainers"}));
    assert_eq!(out["also_updated"], serde_json::json!([]));
}

#[test]
fn report_table_and_top() {
    let ws = Workspace::new();
    ws.ingest();
    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let table = ws.expect(&["report", "--reports", "reports.json", "--in", "packages.json", "--top", "2"], 0);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].starts_with("RANK"));
    assert!(lines[1].contains("npm/eslint-scope@3.7.2"));
}

#[test]
fn report_matches_http_queue() {
    let ws = Workspace::new();
    ws.ingest();
    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let report = json(&ws.expect(&["report", "--reports", "reports.json", "--in", "packages.json", "--format", "json"], 0));

    let mut child = ws
        .cmd(&["-v", "serve", "--in", "packages.json", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let deadline = Instant::now() + Duration::from_secs(60);
    let addr = loop {
        let mut line = String::new();
        assert!(stderr.read_line(&mut line).unwrap() > 0 && Instant::now() < deadline, "server exited early");
        if let Some(rest) = line.split("addr=").nth(1) {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /queue HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body = response.split("\r\n\r\n").nth(1).unwrap();
    assert_eq!(json(body), report);
}

#[test]
fn sequential_and_parallel_reports_are_identical() {
    let ws = Workspace::new();
    ws.ingest();
    ws.expect(&["--no-cache", "flag", "--in", "packages.json", "--out", "par.json"], 0);
    ws.expect(&["--no-cache", "--sequential", "flag", "--in", "packages.json", "--out", "seq.json", "--jobs", "1"], 0);
    assert_eq!(std::fs::read(ws.path("par.json")).unwrap(), std::fs::read(ws.path("seq.json")).unwrap());
}

#[test]
fn rules_override_is_applied() {
    let ws = Workspace::new();
    ws.ingest();
    let rules = "[[rule]]\nid = \"S_INSTALL_HOOK\"\nfamily = \"STATIC\"\npredicate = \"static.has_install_hook\"\n";
    std::fs::write(ws.path("rules.toml"), rules).unwrap();
    let reports = json(&ws.expect(&["flag", "--in", "packages.json", "--rules", "rules.toml"], 0));
    let flagged: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["status"] == "FLAGGED")
        .map(|r| r["coordinate"]["name"].as_str().unwrap())
        .collect();
    assert_eq!(flagged, ["eslint-scope", "sqlite-bindings", "fast_json_ext"]);
}

#[test]
fn missing_archive_is_a_partial_failure() {
    let ws = Workspace::new();
    ws.ingest();
    let mut metas = json(&std::fs::read_to_string(ws.path("packages.json")).unwrap());
    let left_pad = metas.as_array_mut().unwrap().iter_mut().find(|m| m["coordinate"]["name"] == "left-pad").unwrap();
    left_pad["archive"] = Value::String("/nonexistent/left-pad.tgz".into());
    std::fs::write(ws.path("broken.json"), metas.to_string()).unwrap();

    let out = json(&ws.expect(&["analyze", "--in", "broken.json"], 3));
    assert_eq!(out["failures"].as_array().unwrap().len(), 1);
    assert_eq!(out["failures"][0]["coordinate"]["name"], "left-pad");
    assert_eq!(out["ran"]["metadata"], 12, "other packages are still analyzed");
    let reports = json(&ws.expect(&["flag", "--in", "broken.json"], 3));
    assert_eq!(reports.as_array().unwrap().len(), 12);
}

#[test]
fn runplan_orders_steps() {
    let ws = Workspace::new();
    ws.ingest();
    let plan = json(&ws.expect(&["runplan", "--in", "packages.json", "--coord", "npm/eslint-scope@3.7.2"], 0));
    let modes: Vec<&str> = plan["steps"].as_array().unwrap().iter().map(|s| s["mode"].as_str().unwrap()).collect();
    assert_eq!(modes.first(), Some(&"INSTALL"));
    assert!(modes.contains(&"IMPORT"));
    assert_eq!(plan["coordinate"]["name"], "eslint-scope");
    let again = json(&ws.expect(&["runplan", "--in", "packages.json", "--coord", "npm/eslint-scope@3.7.2"], 0));
    assert_eq!(plan, again);
}

#[test]
fn usage_errors_exit_1() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&[]).status.code(), Some(1));
    assert_eq!(ws.run(&["report"]).status.code(), Some(1));
    assert_eq!(ws.run(&["ingest", "--out", "x.json"]).status.code(), Some(1), "a source is required");
    assert_eq!(ws.run(&["analyze", "--in", "p.json", "--analyzers", "m,x"]).status.code(), Some(1));
    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(1));

    ws.ingest();
    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let out = ws.run(&["label", "--reports", "reports.json", "--coord", "npm/left-pad@1.3.0", "--verdict", "benign", "--scope", "everything"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "USAGE");
}

#[test]
fn config_and_input_errors_exit_2_with_json() {
    let ws = Workspace::new();
    let out = ws.cmd(&["graph", "--in", "packages.json"]).env("PKGVET_CONFIG", "/nonexistent/pkgvet.toml").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "CONFIG_INVALID");
    assert_eq!(err["exit_code"], 2);

    let out = ws.run(&["graph", "--in", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "INPUT_INVALID");

    std::fs::write(ws.path("bad.toml"), "[[rule]]\nid = \"X\"\nfamily = \"STATIC\"\npredicate = \"static.nope ==\"\n").unwrap();
    ws.ingest();
    let out = ws.run(&["flag", "--in", "packages.json", "--rules", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "CONFIG_INVALID");

    ws.expect(&["flag", "--in", "packages.json", "--out", "reports.json"], 0);
    let out = ws.run(&["label", "--reports", "reports.json", "--coord", "npm/nothing@1.0.0", "--verdict", "benign"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "UNKNOWN_REPORT");
}

#[test]
fn help_documents_every_flag() {
    let ws = Workspace::new();
    let top = ws.expect(&["--help"], 0);
    for sub in ["ingest", "graph", "analyze", "flag", "report", "label", "serve", "runplan"] {
        assert!(top.contains(sub), "{sub}");
    }
    assert!(top.contains("PKGVET_CACHE"));
    let cases: [(&str, &[&str]); 8] = [
        ("ingest", &["--registry", "--from-fixtures", "--live", "--coords", "--archives", "--out"]),
        ("graph", &["--in", "--out"]),
        ("analyze", &["--in", "--analyzers", "--jobs"]),
        ("flag", &["--rules", "--exclusions", "--labels", "--out", "--jobs"]),
        ("report", &["--reports", "--format", "--top", "--status", "--graph"]),
        ("label", &["--coord", "--verdict", "--scope", "--note", "--analyst", "--known-malware"]),
        ("serve", &["--addr", "--cors-origin", "--exclusions", "--known-malware"]),
        ("runplan", &["--coord", "--in"]),
    ];
    for (sub, flags) in cases {
        let help = ws.expect(&[sub, "--help"], 0);
        for flag in flags {
            assert!(help.contains(flag), "{sub} {flag}\n{help}");
        }
    }
}
