//! Language-neutral view of one source unit.
//!
//! Control flow is discarded: every statement of a function body, including
//! nested blocks, appears once in `body`. Closures passed inline keep their
//! own [`Function`] and are referenced by index.

use crate::registry::SubjectLanguage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedTree {
    pub path: String,
    pub language: SubjectLanguage,
    pub line_count: u32,
    pub imports: Vec<Import>,
    /// `functions[0]` is the module body.
    pub functions: Vec<Function>,
    pub exports: Vec<Export>,
    pub literals: Vec<Literal>,
}

impl NormalizedTree {
    pub fn empty(path: &str, language: SubjectLanguage, line_count: u32) -> NormalizedTree {
        NormalizedTree {
            path: path.to_string(),
            language,
            line_count,
            imports: Vec::new(),
            functions: vec![Function::module_body()],
            exports: Vec::new(),
            literals: Vec::new(),
        }
    }

    /// Every call in the unit, depth first, in statement order.
    pub fn calls(&self) -> Vec<(&Expr, &[Expr], u32)> {
        let mut out = Vec::new();
        for f in &self.functions {
            for s in &f.body {
                s.value().visit_calls(&mut |callee, args, line| out.push((callee, args, line)));
            }
        }
        out
    }

    /// Callee paths as written, with import aliases resolved.
    pub fn call_paths(&self) -> Vec<String> {
        let aliases = self.alias_map();
        self.calls().into_iter().filter_map(|(callee, _, _)| callee.static_path(&aliases)).collect()
    }

    /// Local name -> module path for every import and alias-valued assignment.
    pub fn alias_map(&self) -> std::collections::HashMap<String, String> {
        let mut map: std::collections::HashMap<String, String> =
            self.imports.iter().map(|i| (i.local.clone(), i.path.clone())).collect();
        // Aliases can chain (`const r = require('x'); const p = r.post`).
        loop {
            let mut changed = false;
            for f in &self.functions {
                for s in &f.body {
                    if let Stmt::Assign { target, value, .. } = s {
                        if map.contains_key(target) {
                            continue;
                        }
                        if let Some(path) = value.alias_path(&map) {
                            map.insert(target.clone(), path);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return map;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Import {
    /// Name bound in the unit.
    pub local: String,
    /// Dotted module path (`os.path`, `https`, `./lib/util` resolved to `~/lib/util`).
    pub path: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    /// Name callers use inside the unit; empty for anonymous closures.
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub line: u32,
}

impl Function {
    pub fn module_body() -> Function {
        Function { name: String::new(), params: Vec::new(), body: Vec::new(), line: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Export {
    /// Exported name; empty when the module object itself is callable.
    pub name: String,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub text: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stmt {
    Assign { target: String, value: Expr, line: u32 },
    Expr { value: Expr, line: u32 },
    Return { value: Expr, line: u32 },
}

impl Stmt {
    pub fn value(&self) -> &Expr {
        match self {
            Stmt::Assign { value, .. } | Stmt::Expr { value, .. } | Stmt::Return { value, .. } => value,
        }
    }

    pub fn line(&self) -> u32 {
        match self {
            Stmt::Assign { line, .. } | Stmt::Expr { line, .. } | Stmt::Return { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Name(String),
    Literal(String),
    Attr(Box<Expr>, String),
    Call { callee: Box<Expr>, args: Vec<Expr>, line: u32 },
    /// Index into the unit's `functions`.
    Lambda(usize),
    /// Any expression combining its parts (operators, containers, templates).
    Group(Vec<Expr>),
    /// Result of a module import expression (`require('x')`).
    ModuleRef(String),
    Unknown,
}

impl Expr {
    pub fn call(callee: Expr, args: Vec<Expr>, line: u32) -> Expr {
        Expr::Call { callee: Box::new(callee), args, line }
    }

    pub fn attr(object: Expr, name: &str) -> Expr {
        Expr::Attr(Box::new(object), name.to_string())
    }

    /// Pre-order walk over calls, including calls nested in arguments.
    pub fn visit_calls<'a>(&'a self, f: &mut impl FnMut(&'a Expr, &'a [Expr], u32)) {
        match self {
            Expr::Call { callee, args, line } => {
                f(callee, args, *line);
                callee.visit_calls(f);
                for a in args {
                    a.visit_calls(f);
                }
            }
            Expr::Attr(obj, _) => obj.visit_calls(f),
            Expr::Group(parts) => parts.iter().for_each(|p| p.visit_calls(f)),
            Expr::Name(_) | Expr::Literal(_) | Expr::Lambda(_) | Expr::ModuleRef(_) | Expr::Unknown => {}
        }
    }

    /// Module path when the expression denotes an imported module or one of
    /// its members.
    pub fn alias_path(&self, aliases: &std::collections::HashMap<String, String>) -> Option<String> {
        match self {
            Expr::ModuleRef(m) => Some(m.clone()),
            Expr::Name(n) => aliases.get(n).cloned(),
            Expr::Attr(obj, name) => obj.alias_path(aliases).map(|p| format!("{p}.{name}")),
            _ => None,
        }
    }

    /// Static dotted path with aliases resolved; unbound names stand for
    /// themselves (globals, Ruby constants).
    pub fn static_path(&self, aliases: &std::collections::HashMap<String, String>) -> Option<String> {
        match self {
            Expr::ModuleRef(m) => Some(m.clone()),
            Expr::Name(n) => Some(aliases.get(n).cloned().unwrap_or_else(|| n.clone())),
            Expr::Attr(obj, name) => obj.static_path(aliases).map(|p| format!("{p}.{name}")),
            _ => None,
        }
    }
}
