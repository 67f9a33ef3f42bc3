//! Execution plans for eliciting runtime behavior.

use super::trace::RunMode;
use crate::registry::{PackageCoordinate, PackageMetadata, Registry};
use serde::{Deserialize, Serialize};

/// Attribute recursion depth for functional fuzzing.
pub const FUZZ_DEPTH: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStep {
    pub mode: RunMode,
    /// Argument vector, executed without a shell.
    pub command: Vec<String>,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub coordinate: PackageCoordinate,
    pub steps: Vec<RunStep>,
}

impl RunPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run plans serialize")
    }

    pub fn modes(&self) -> Vec<RunMode> {
        self.steps.iter().map(|s| s.mode).collect()
    }
}

fn js_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Script invoking every callable attribute of the module with null
/// arguments, recursing into results up to [`FUZZ_DEPTH`].
fn functional_script(registry: Registry, module: &str, targets: &[String]) -> Vec<String> {
    let names = serde_json::to_string(targets).expect("strings serialize");
    match registry {
        Registry::Npm => vec![
            "node".into(),
            "-e".into(),
            format!(
                "const m=require({m});const seen=new Set();\
                 function go(o,d){{if(d>{FUZZ_DEPTH}||o==null||seen.has(o))return;seen.add(o);\
                 for(const k of Object.keys(o)){{let v;try{{v=o[k]}}catch(e){{continue}}\
                 if(typeof v!=='function')continue;let r;try{{r=v(null)}}catch(e){{}}try{{r=new v(null)}}catch(e){{}}go(r,d+1)}}}}\
                 const t={names};if(typeof m==='function'){{try{{m(null)}}catch(e){{}}}}\
                 go(t.length?Object.fromEntries(t.filter(k=>k in m).map(k=>[k,m[k]])):m,0);",
                m = js_string(module)
            ),
        ],
        Registry::Pypi => vec![
            "python3".into(),
            "-c".into(),
            format!(
                "import importlib\nm=importlib.import_module({m})\nseen=set()\n\
                 def go(o,d):\n    if d>{FUZZ_DEPTH} or o is None or id(o) in seen: return\n    seen.add(id(o))\n\
                 \x20   for k in dir(o):\n        if k.startswith('_'): continue\n        try: v=getattr(o,k)\n        except Exception: continue\n\
                 \x20       if not callable(v): continue\n        try: r=v()\n        except Exception:\n            try: r=v(None)\n            except Exception: r=None\n\
                 \x20       go(r,d+1)\n\
                 t={names}\ngo(type('T',(),{{k:staticmethod(getattr(m,k)) for k in t if hasattr(m,k)}}) if t else m,0)\n",
                m = js_string(module)
            ),
        ],
        Registry::Rubygems => vec![
            "ruby".into(),
            "-e".into(),
            format!(
                "require {m}\nseen={{}}\ngo=lambda do |o,d|\n  return if d>{FUZZ_DEPTH} || o.nil? || seen[o.object_id]\n  seen[o.object_id]=true\n\
                 \x20 (o.respond_to?(:constants) ? o.constants.map {{ |c| o.const_get(c) rescue nil }} : []).each {{ |c| go.(c,d+1) }}\n\
                 \x20 o.public_methods(false).each do |name|\n    r=(o.public_send(name) rescue (o.public_send(name,nil) rescue nil))\n    go.(r,d+1)\n  end\nend\n\
                 t={names}\nObject.constants.each {{ |c| k=Object.const_get(c) rescue next; go.(k,0) if t.empty? || t.include?(c.to_s) }}\n",
                m = js_string(module)
            ),
        ],
    }
}

/// Deterministic plan: INSTALL, one EMBEDDED_BINARY step per executable,
/// IMPORT, then FUNCTIONAL over `exports` (names callers use).
pub fn make_run_plan(meta: &PackageMetadata, exports: &[String]) -> RunPlan {
    let c = &meta.coordinate;
    let module = meta.module_name();
    let install = match c.registry {
        Registry::Npm => vec!["npm".into(), "install".into(), "--no-audit".into(), "--no-fund".into(), format!("{}@{}", c.name, c.version)],
        Registry::Pypi => vec!["pip".into(), "install".into(), "--no-cache-dir".into(), format!("{}=={}", c.name, c.version)],
        Registry::Rubygems => vec!["gem".into(), "install".into(), c.name.clone(), "-v".into(), c.version.clone()],
    };
    let mut steps = vec![RunStep { mode: RunMode::Install, command: install, timeout_secs: 600 }];
    let mut binaries: Vec<&str> = meta.executables().map(|f| f.path.as_str()).collect();
    binaries.sort();
    for b in binaries {
        steps.push(RunStep { mode: RunMode::EmbeddedBinary, command: vec![format!("./{b}")], timeout_secs: 120 });
    }
    let import = match c.registry {
        Registry::Npm => vec!["node".into(), "-e".into(), format!("require({})", js_string(&module))],
        Registry::Pypi => vec!["python3".into(), "-c".into(), format!("import {module}")],
        Registry::Rubygems => vec!["ruby".into(), "-e".into(), format!("require {}", js_string(&module))],
    };
    steps.push(RunStep { mode: RunMode::Import, command: import, timeout_secs: 60 });
    let mut targets: Vec<String> = exports
        .iter()
        .map(|e| {
            let local = e.strip_prefix(&format!("{module}.")).unwrap_or(e);
            local.split('.').next().unwrap_or(local).to_string()
        })
        .filter(|t| !t.is_empty() && *t != module)
        .collect();
    targets.sort();
    targets.dedup();
    steps.push(RunStep { mode: RunMode::Functional, command: functional_script(c.registry, &module, &targets), timeout_secs: 300 });
    RunPlan { coordinate: c.clone(), steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{FileEntry, FileKind, SubjectLanguage};

    fn meta(files: Vec<FileEntry>) -> PackageMetadata {
        PackageMetadata {
            coordinate: "pypi/demo-pkg@1.0.0".parse().unwrap(),
            authors: vec![],
            release_time: chrono::DateTime::UNIX_EPOCH,
            downloads: 0,
            provenance: vec![],
            declared_deps: vec![],
            subject_language: SubjectLanguage::Py,
            file_inventory: files,
            import_name: None,
            archive: None,
            traces: vec![],
        }
    }

    #[test]
    fn modes_follow_inventory() {
        let lib = make_run_plan(&meta(vec![]), &["demo_pkg.run".into()]);
        assert_eq!(lib.modes(), [RunMode::Install, RunMode::Import, RunMode::Functional]);
        assert_eq!(lib.steps[1].command[2], "import demo_pkg");
        let bin = FileEntry { path: "bin/helper".into(), byte_size: 10, kind: FileKind::ElfBinary, magic_prefix: "7f454c46".into() };
        let with_bin = make_run_plan(&meta(vec![bin]), &[]);
        assert_eq!(with_bin.modes(), [RunMode::Install, RunMode::EmbeddedBinary, RunMode::Import, RunMode::Functional]);
        assert_eq!(with_bin.to_json(), make_run_plan(&meta(with_bin_inventory()), &[]).to_json());
    }

    fn with_bin_inventory() -> Vec<FileEntry> {
        vec![FileEntry { path: "bin/helper".into(), byte_size: 10, kind: FileKind::ElfBinary, magic_prefix: "7f454c46".into() }]
    }
}
