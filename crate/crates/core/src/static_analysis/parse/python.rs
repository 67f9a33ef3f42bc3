use super::{named_children, Builder};
use crate::static_analysis::tree::{Export, Expr, Import, Stmt};
use tree_sitter::Node;

/// Dotted module name of a unit path (`src/pkg/__init__.py` -> `pkg`).
pub(crate) fn module_name(path: &str) -> String {
    let p = path.strip_prefix("src/").unwrap_or(path);
    let p = p.strip_suffix(".py").unwrap_or(p);
    let p = p.strip_suffix("/__init__").unwrap_or(p);
    p.replace('/', ".")
}

pub(super) fn lower(b: &mut Builder<'_>, root: Node<'_>) {
    let mut body = Vec::new();
    for child in named_children(root) {
        stmt(b, child, &mut body, None, true);
    }
    b.tree.functions[0].body = body;
}

/// `class_name` is set inside a class body; `top` marks module level.
fn stmt(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>, class_name: Option<&str>, top: bool) {
    let line = Builder::line(node);
    match node.kind() {
        "comment" | "pass_statement" | "break_statement" | "continue_statement" | "future_import_statement" => {}
        "import_statement" => import(b, node),
        "import_from_statement" => import_from(b, node, top),
        "function_definition" => {
            let name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
            let qualified = match class_name {
                Some(c) => format!("{c}.{name}"),
                None => name.to_string(),
            };
            let idx = function(b, node, &qualified);
            if top && !name.starts_with('_') {
                b.tree.exports.push(Export { name: name.to_string(), value: Expr::Lambda(idx) });
            }
        }
        "decorated_definition" => {
            if let Some(def) = node.child_by_field_name("definition") {
                stmt(b, def, out, class_name, top);
            }
        }
        "class_definition" => {
            let name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("").to_string();
            if let Some(body) = node.child_by_field_name("body") {
                for s in named_children(body) {
                    stmt(b, s, out, Some(&name), false);
                }
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
        "for_statement" => {
            let right = node.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
            if let Some(left) = node.child_by_field_name("left") {
                bind(b, left, right, line, out);
            }
            for part in ["body", "alternative"] {
                if let Some(n) = node.child_by_field_name(part) {
                    stmt(b, n, out, class_name, false);
                }
            }
        }
        "with_statement" => {
            for child in named_children(node) {
                if child.kind() == "with_clause" {
                    for item in named_children(child) {
                        with_item(b, item, out);
                    }
                } else {
                    stmt(b, child, out, class_name, false);
                }
            }
        }
        "except_clause" => {
            for child in named_children(node) {
                if child.kind() == "block" {
                    stmt(b, child, out, class_name, false);
                } else if child.kind() == "as_pattern" {
                    if let Some(t) = child.child_by_field_name("alias") {
                        bind(b, t, Expr::Unknown, line, out);
                    }
                }
            }
        }
        kind if is_compound(kind) => {
            for child in named_children(node) {
                if is_compound(child.kind()) || child.kind().ends_with("_statement") || child.kind().ends_with("_definition") {
                    stmt(b, child, out, class_name, top && kind == "if_statement");
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

fn is_compound(kind: &str) -> bool {
    matches!(
        kind,
        "block"
            | "if_statement"
            | "elif_clause"
            | "else_clause"
            | "while_statement"
            | "try_statement"
            | "finally_clause"
            | "match_statement"
            | "case_clause"
            | "delete_statement"
            | "raise_statement"
            | "assert_statement"
            | "global_statement"
            | "nonlocal_statement"
            | "print_statement"
            | "exec_statement"
    ) || kind.ends_with("_statement")
}

fn push_expr(out: &mut Vec<Stmt>, value: Expr, line: u32) {
    if !matches!(value, Expr::Unknown | Expr::Literal(_) | Expr::Name(_)) {
        out.push(Stmt::Expr { value, line });
    }
}

fn with_item(b: &mut Builder<'_>, item: Node<'_>, out: &mut Vec<Stmt>) {
    let line = Builder::line(item);
    let Some(value) = item.child_by_field_name("value") else { return };
    if value.kind() == "as_pattern" {
        let source = named_children(value).first().map_or(Expr::Unknown, |c| expr(b, *c, out));
        match value.child_by_field_name("alias") {
            Some(alias) => bind(b, alias, source, line, out),
            None => push_expr(out, source, line),
        }
    } else {
        let v = expr(b, value, out);
        push_expr(out, v, line);
    }
}

/// Assigns `value` to every name in a target pattern; attribute and
/// subscript targets update their base name.
fn bind(b: &mut Builder<'_>, target: Node<'_>, value: Expr, line: u32, out: &mut Vec<Stmt>) {
    match target.kind() {
        "identifier" => out.push(Stmt::Assign { target: b.text(target).to_string(), value, line }),
        "attribute" => {
            if let Some(obj) = target.child_by_field_name("object") {
                bind(b, obj, value, line, out);
            }
        }
        "subscript" => {
            if let Some(obj) = target.child_by_field_name("value") {
                bind(b, obj, value, line, out);
            }
        }
        _ => {
            for c in named_children(target) {
                bind(b, c, value.clone(), line, out);
            }
        }
    }
}

fn function(b: &mut Builder<'_>, node: Node<'_>, name: &str) -> usize {
    let idx = b.new_function(name, Builder::line(node));
    let mut params = Vec::new();
    let mut body = Vec::new();
    if let Some(ps) = node.child_by_field_name("parameters") {
        for p in named_children(ps) {
            let id = match p.kind() {
                "identifier" => Some(p),
                "default_parameter" | "typed_default_parameter" => p.child_by_field_name("name"),
                "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                    named_children(p).into_iter().find(|c| c.kind() == "identifier")
                }
                _ => None,
            };
            if let Some(id) = id {
                params.push(b.text(id).to_string());
            }
        }
    }
    if let Some(body_node) = node.child_by_field_name("body") {
        if node.kind() == "lambda" {
            let value = expr(b, body_node, &mut body);
            body.push(Stmt::Return { value, line: Builder::line(body_node) });
        } else {
            for s in named_children(body_node) {
                stmt(b, s, &mut body, None, false);
            }
        }
    }
    let f = &mut b.tree.functions[idx];
    f.params = params;
    f.body = body;
    idx
}

fn import(b: &mut Builder<'_>, node: Node<'_>) {
    let line = Builder::line(node);
    for child in named_children(node) {
        match child.kind() {
            "dotted_name" => {
                let full = b.text(child);
                let head = full.split('.').next().unwrap_or(full).to_string();
                b.tree.imports.push(Import { local: head.clone(), path: head, line });
            }
            "aliased_import" => {
                let name = child.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
                let alias = child.child_by_field_name("alias").map(|n| b.text(n)).unwrap_or(name);
                b.tree.imports.push(Import { local: alias.to_string(), path: name.to_string(), line });
            }
            _ => {}
        }
    }
}

fn import_from(b: &mut Builder<'_>, node: Node<'_>, top: bool) {
    let line = Builder::line(node);
    let Some(module_node) = node.child_by_field_name("module_name") else { return };
    let relative = module_node.kind() == "relative_import";
    let module = if relative {
        resolve_relative(b, module_node)
    } else {
        b.text(module_node).to_string()
    };
    let mut cursor = node.walk();
    let names: Vec<Node<'_>> = node.children_by_field_name("name", &mut cursor).collect();
    for n in names {
        let (name, local) = match n.kind() {
            "aliased_import" => {
                let name = n.child_by_field_name("name").map(|x| b.text(x)).unwrap_or("");
                (name, n.child_by_field_name("alias").map(|x| b.text(x)).unwrap_or(name))
            }
            _ => (b.text(n), b.text(n)),
        };
        let path = if module.is_empty() { name.to_string() } else { format!("{module}.{name}") };
        b.tree.imports.push(Import { local: local.to_string(), path, line });
        // Relative imports at module level are re-exports of the package.
        if top && relative && !local.starts_with('_') {
            b.tree.exports.push(Export { name: local.to_string(), value: Expr::Name(local.to_string()) });
        }
    }
}

fn resolve_relative(b: &Builder<'_>, node: Node<'_>) -> String {
    let text = b.text(node);
    let dots = text.chars().take_while(|&c| c == '.').count();
    let rest = text[dots..].trim();
    let own = module_name(&b.path);
    let is_package = b.path.ends_with("__init__.py");
    let mut parts: Vec<&str> = own.split('.').filter(|s| !s.is_empty()).collect();
    if !is_package {
        parts.pop();
    }
    for _ in 1..dots {
        parts.pop();
    }
    if !rest.is_empty() {
        parts.push(rest);
    }
    parts.join(".")
}

fn expr(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    b.nested(|b| expr_inner(b, node, out))
}

fn expr_inner(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    let line = Builder::line(node);
    match node.kind() {
        "identifier" => Expr::Name(b.text(node).to_string()),
        "integer" | "float" | "true" | "false" | "none" | "ellipsis" => Expr::Literal(b.text(node).to_string()),
        "string" => {
            let interpolations: Vec<Node<'_>> =
                named_children(node).into_iter().filter(|c| c.kind() == "interpolation").collect();
            let content: String = named_children(node)
                .into_iter()
                .filter(|c| c.kind() == "string_content")
                .map(|c| b.text(c))
                .collect();
            let lit = b.literal(&content, node);
            if interpolations.is_empty() {
                lit
            } else {
                let mut parts = vec![lit];
                for i in interpolations {
                    parts.extend(named_children(i).into_iter().map(|c| expr(b, c, out)));
                }
                Expr::Group(parts)
            }
        }
        "attribute" => {
            let object = node.child_by_field_name("object").map_or(Expr::Unknown, |o| expr(b, o, out));
            let attr = node.child_by_field_name("attribute").map(|a| b.text(a)).unwrap_or("");
            Expr::attr(object, attr)
        }
        "call" => {
            let callee = node.child_by_field_name("function").map_or(Expr::Unknown, |f| expr(b, f, out));
            let args = node
                .child_by_field_name("arguments")
                .map(named_children)
                .unwrap_or_default()
                .into_iter()
                .filter(|a| a.kind() != "comment")
                .map(|a| expr(b, a, out))
                .collect();
            Expr::call(callee, args, line)
        }
        "keyword_argument" => node.child_by_field_name("value").map_or(Expr::Unknown, |v| expr(b, v, out)),
        "pair" => node.child_by_field_name("value").map_or(Expr::Unknown, |v| expr(b, v, out)),
        "lambda" => Expr::Lambda(function(b, node, "")),
        "assignment" => {
            let value = match node.child_by_field_name("right") {
                Some(r) if r.kind() == "lambda" => {
                    let name = node.child_by_field_name("left").filter(|l| l.kind() == "identifier").map(|l| b.text(l)).unwrap_or("");
                    Expr::Lambda(function(b, r, name))
                }
                Some(r) => expr(b, r, out),
                None => return Expr::Unknown,
            };
            if let Some(left) = node.child_by_field_name("left") {
                bind(b, left, value.clone(), line, out);
            }
            value
        }
        "augmented_assignment" => {
            let right = node.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
            if let Some(left) = node.child_by_field_name("left") {
                let current = expr(b, left, out);
                bind(b, left, Expr::Group(vec![current, right.clone()]), line, out);
            }
            right
        }
        "named_expression" => {
            let value = node.child_by_field_name("value").map_or(Expr::Unknown, |v| expr(b, v, out));
            if let Some(name) = node.child_by_field_name("name") {
                bind(b, name, value.clone(), line, out);
            }
            value
        }
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
