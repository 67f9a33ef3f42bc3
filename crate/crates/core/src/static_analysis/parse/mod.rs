//! Tree-sitter front ends lowering each subject language into
//! [`NormalizedTree`].

mod js;
pub(crate) use python::module_name as python_module_name;
mod python;
mod ruby;

use super::tree::{Expr, Function, Literal, NormalizedTree};
use crate::registry::SubjectLanguage;
use tree_sitter::{Node, Parser};

/// Expression nesting beyond this is cut off and reported.
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("PARSE_ERROR in {path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedUnit {
    pub tree: NormalizedTree,
    /// Nesting exceeded [`MAX_DEPTH`] somewhere in the unit.
    pub truncated: bool,
}

pub fn parse_unit(path: &str, text: &str, language: SubjectLanguage) -> Result<ParsedUnit, ParseError> {
    let line_count = text.lines().count().max(1) as u32;
    if text.trim().is_empty() {
        return Ok(ParsedUnit { tree: NormalizedTree::empty(path, language, line_count), truncated: false });
    }
    let ts_language: tree_sitter::Language = match language {
        SubjectLanguage::Js => tree_sitter_javascript::LANGUAGE.into(),
        SubjectLanguage::Py => tree_sitter_python::LANGUAGE.into(),
        SubjectLanguage::Rb => tree_sitter_ruby::LANGUAGE.into(),
    };
    let err = |message: String| ParseError { path: path.to_string(), message };
    let mut parser = Parser::new();
    parser.set_language(&ts_language).map_err(|e| err(e.to_string()))?;
    let parsed = parser.parse(text, None).ok_or_else(|| err("parser produced no tree".into()))?;
    let root = parsed.root_node();
    if root.has_error() {
        let at = first_error(root).map(|n| n.start_position().row + 1).unwrap_or(1);
        return Err(err(format!("syntax error near line {at}")));
    }
    let mut b = Builder::new(path, text.as_bytes(), language, line_count);
    match language {
        SubjectLanguage::Js => js::lower(&mut b, root),
        SubjectLanguage::Py => python::lower(&mut b, root),
        SubjectLanguage::Rb => ruby::lower(&mut b, root),
    }
    let truncated = b.truncated;
    Ok(ParsedUnit { tree: b.finish(), truncated })
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    let mut cursor = node.walk();
    let children: Vec<Node<'_>> = node.children(&mut cursor).filter(|c| c.has_error()).collect();
    children.into_iter().find_map(first_error)
}

pub(crate) struct Builder<'s> {
    pub path: String,
    src: &'s [u8],
    pub tree: NormalizedTree,
    depth: usize,
    pub truncated: bool,
}

impl<'s> Builder<'s> {
    fn new(path: &str, src: &'s [u8], language: SubjectLanguage, line_count: u32) -> Builder<'s> {
        Builder { path: path.to_string(), src, tree: NormalizedTree::empty(path, language, line_count), depth: 0, truncated: false }
    }

    fn finish(self) -> NormalizedTree {
        self.tree
    }

    pub fn text(&self, node: Node<'_>) -> &'s str {
        node.utf8_text(self.src).unwrap_or("")
    }

    pub fn line(node: Node<'_>) -> u32 {
        node.start_position().row as u32 + 1
    }

    pub fn literal(&mut self, text: &str, node: Node<'_>) -> Expr {
        self.tree.literals.push(Literal { text: text.to_string(), line: Self::line(node) });
        Expr::Literal(text.to_string())
    }

    /// Reserves a function slot so nested closures get later indices.
    pub fn new_function(&mut self, name: &str, line: u32) -> usize {
        self.tree.functions.push(Function { name: name.to_string(), params: Vec::new(), body: Vec::new(), line });
        self.tree.functions.len() - 1
    }

    /// Runs `f` one nesting level deeper; past the limit yields `Unknown`.
    pub fn nested(&mut self, f: impl FnOnce(&mut Self) -> Expr) -> Expr {
        if self.depth >= MAX_DEPTH {
            self.truncated = true;
            return Expr::Unknown;
        }
        self.depth += 1;
        let e = f(self);
        self.depth -= 1;
        e
    }
}

pub(crate) fn named_children<'t>(node: Node<'t>) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).filter(|c| !c.is_extra()).collect()
}

/// `./a/../b` relative to `dir`, as a `~/`-rooted package path.
pub(crate) fn join_relative(unit_path: &str, spec: &str) -> String {
    let mut parts: Vec<&str> = unit_path.split('/').collect();
    parts.pop();
    for seg in spec.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            s => parts.push(s),
        }
    }
    format!("~/{}", parts.join("/"))
}
