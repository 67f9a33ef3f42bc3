//! Install-time code execution declared by package manifests.

use super::labels::{ApiCategory, ApiLabelSet, Confidence};
use super::parse::parse_unit;
use super::usage::{match_label, Scope};
use crate::registry::{ArchiveContents, SubjectLanguage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("MANIFEST_UNPARSEABLE: {path}: {message}")]
pub struct HookError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstallHook {
    /// Manifest or build file declaring the hook.
    pub manifest: String,
    /// `postinstall`, `binding.gyp`, `cmdclass`, `extensions`, ...
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

const NPM_SCRIPTS: [&str; 3] = ["preinstall", "install", "postinstall"];

/// Hooks that run code when the package is installed.
pub fn detect_install_hook(
    language: SubjectLanguage,
    archive: &ArchiveContents,
    labels: &ApiLabelSet,
) -> Result<Vec<InstallHook>, HookError> {
    let mut hooks = match language {
        SubjectLanguage::Js => npm_hooks(archive)?,
        SubjectLanguage::Py => python_hooks(archive, labels)?,
        SubjectLanguage::Rb => ruby_hooks(archive)?,
    };
    hooks.sort();
    hooks.dedup();
    Ok(hooks)
}

fn npm_hooks(archive: &ArchiveContents) -> Result<Vec<InstallHook>, HookError> {
    let mut out = Vec::new();
    if let Some(file) = archive.get("package.json") {
        let err = |message: String| HookError { path: file.path.clone(), message };
        let text = file.text().ok_or_else(|| err("not UTF-8".into()))?;
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if let Some(scripts) = doc.get("scripts").and_then(|s| s.as_object()) {
            for name in NPM_SCRIPTS {
                if let Some(cmd) = scripts.get(name).and_then(|c| c.as_str()) {
                    out.push(InstallHook {
                        manifest: file.path.clone(),
                        kind: name.to_string(),
                        command: Some(cmd.to_string()),
                    });
                }
            }
        }
    }
    // npm runs node-gyp for a top-level binding.gyp even without scripts.
    if archive.get("binding.gyp").is_some() {
        out.push(InstallHook { manifest: "binding.gyp".into(), kind: "binding.gyp".into(), command: None });
    }
    Ok(out)
}

fn python_hooks(archive: &ArchiveContents, labels: &ApiLabelSet) -> Result<Vec<InstallHook>, HookError> {
    let Some(file) = archive.get("setup.py") else { return Ok(Vec::new()) };
    let err = |message: String| HookError { path: file.path.clone(), message };
    let text = file.text().ok_or_else(|| err("not UTF-8".into()))?;
    let tree = parse_unit(&file.path, text, SubjectLanguage::Py).map_err(|e| err(e.message))?.tree;
    let mut out = Vec::new();
    if text.contains("cmdclass") {
        out.push(InstallHook { manifest: file.path.clone(), kind: "cmdclass".into(), command: None });
    }
    let scope = Scope::of(&tree);
    for stmt in &tree.functions[0].body {
        let mut hit = None;
        stmt.value().visit_calls(&mut |callee, _, line| {
            if hit.is_some() {
                return;
            }
            if let Some(m) = match_label(callee, &scope, labels, SubjectLanguage::Py) {
                if m.label.category != ApiCategory::Filesystem && m.confidence >= Confidence::Medium {
                    hit = Some((m.label.qualified_name.clone(), line));
                }
            }
        });
        if let Some((api, line)) = hit {
            out.push(InstallHook {
                manifest: file.path.clone(),
                kind: "module-level-call".into(),
                command: Some(format!("{api} (line {line})")),
            });
        }
    }
    Ok(out)
}

fn ruby_hooks(archive: &ArchiveContents) -> Result<Vec<InstallHook>, HookError> {
    let mut out = Vec::new();
    for file in archive.files.iter().filter(|f| !f.path.contains('/') && f.path.ends_with(".gemspec")) {
        let err = |message: String| HookError { path: file.path.clone(), message };
        let text = file.text().ok_or_else(|| err("not UTF-8".into()))?;
        parse_unit(&file.path, text, SubjectLanguage::Rb).map_err(|e| err(e.message))?;
        let declares =
            text.lines().map(str::trim).any(|l| l.contains(".extensions") && l.contains('=') && !l.ends_with("[]"));
        if declares {
            out.push(InstallHook { manifest: file.path.clone(), kind: "extensions".into(), command: None });
        }
    }
    if let Some(meta) = archive.get("metadata").and_then(|m| m.text()) {
        if gem_metadata_extensions(meta) {
            out.push(InstallHook { manifest: "metadata".into(), kind: "extensions".into(), command: None });
        }
    }
    for f in &archive.files {
        if f.path.starts_with("ext/") && f.path.ends_with("/extconf.rb") {
            out.push(InstallHook { manifest: f.path.clone(), kind: "extconf".into(), command: None });
        }
    }
    Ok(out)
}

/// True when the gem metadata YAML lists at least one extension.
fn gem_metadata_extensions(yaml: &str) -> bool {
    let mut lines = yaml.lines().skip_while(|l| !l.starts_with("extensions:"));
    match lines.next() {
        Some(head) if head.trim_end().ends_with("[]") => false,
        Some(_) => lines.next().is_some_and(|l| l.trim_start().starts_with("- ")),
        None => false,
    }
}
