use super::{named_children, Builder};
use crate::static_analysis::tree::{Export, Expr, Stmt};
use tree_sitter::Node;

pub(super) fn lower(b: &mut Builder<'_>, root: Node<'_>) {
    let mut body = Vec::new();
    let mut ns = Vec::new();
    for child in named_children(root) {
        stmt(b, child, &mut body, &mut ns, false);
    }
    b.tree.functions[0].body = body;
}

/// `ns` is the enclosing module/class path; `singleton` is set inside
/// `class << self`.
fn stmt(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>, ns: &mut Vec<String>, singleton: bool) {
    let line = Builder::line(node);
    match node.kind() {
        "comment" | "empty_statement" => {}
        "module" | "class" => {
            let name = node.child_by_field_name("name").map(|n| constant_path(b, n)).unwrap_or_default();
            ns.push(name);
            for child in named_children(node) {
                if matches!(child.kind(), "body_statement" | "block_body") {
                    for s in named_children(child) {
                        stmt(b, s, out, ns, false);
                    }
                }
            }
            ns.pop();
        }
        "singleton_class" => {
            for child in named_children(node) {
                if matches!(child.kind(), "body_statement" | "block_body") {
                    for s in named_children(child) {
                        stmt(b, s, out, ns, true);
                    }
                }
            }
        }
        "method" | "singleton_method" => {
            let name = node.child_by_field_name("name").map(|n| b.text(n)).unwrap_or("");
            let owner = ns.join("::");
            let class_level = singleton || node.kind() == "singleton_method";
            let qualified = match (owner.is_empty(), class_level) {
                (true, _) => name.to_string(),
                (false, true) => format!("{owner}.{name}"),
                (false, false) => format!("{owner}#{name}"),
            };
            let idx = function(b, node, &qualified);
            if owner.is_empty() || class_level {
                b.tree.exports.push(Export { name: qualified, value: Expr::Lambda(idx) });
            }
        }
        "return" => {
            let value = named_children(node).first().map_or(Expr::Unknown, |c| expr(b, *c, out));
            out.push(Stmt::Return { value, line });
        }
        kind if is_compound(kind) => {
            for child in named_children(node) {
                if is_compound(child.kind()) || matches!(child.kind(), "method" | "singleton_method" | "return") {
                    stmt(b, child, out, ns, singleton);
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
        "body_statement"
            | "block_body"
            | "begin"
            | "then"
            | "else"
            | "elsif"
            | "if"
            | "unless"
            | "if_modifier"
            | "unless_modifier"
            | "while"
            | "until"
            | "while_modifier"
            | "until_modifier"
            | "case"
            | "when"
            | "rescue"
            | "rescue_modifier"
            | "ensure"
            | "do"
            | "parenthesized_statements"
            | "begin_block"
            | "end_block"
    )
}

fn push_expr(out: &mut Vec<Stmt>, value: Expr, line: u32) {
    if !matches!(value, Expr::Unknown | Expr::Literal(_)) {
        out.push(Stmt::Expr { value, line });
    }
}

fn constant_path(b: &Builder<'_>, node: Node<'_>) -> String {
    b.text(node).trim_start_matches("::").to_string()
}

fn function(b: &mut Builder<'_>, node: Node<'_>, name: &str) -> usize {
    let idx = b.new_function(name, Builder::line(node));
    let mut params = Vec::new();
    let mut body = Vec::new();
    let params_node = node
        .child_by_field_name("parameters")
        .or_else(|| named_children(node).into_iter().find(|c| c.kind() == "block_parameters"));
    if let Some(ps) = params_node {
        for p in named_children(ps) {
            let id = if p.kind() == "identifier" {
                Some(p)
            } else {
                p.child_by_field_name("name").or_else(|| named_children(p).into_iter().find(|c| c.kind() == "identifier"))
            };
            if let Some(id) = id {
                params.push(b.text(id).to_string());
            }
        }
    }
    let mut ns = Vec::new();
    for child in named_children(node) {
        if matches!(child.kind(), "body_statement" | "block_body") {
            for s in named_children(child) {
                stmt(b, s, &mut body, &mut ns, false);
            }
        }
    }
    // The last expression of a method or block is its value.
    if let Some(Stmt::Expr { value, line }) = body.last().cloned() {
        body.pop();
        body.push(Stmt::Return { value, line });
    } else if let Some(last) = named_children(node).into_iter().rev().find(|c| matches!(c.kind(), "body_statement" | "block_body")) {
        if let Some(tail) = named_children(last).last().filter(|t| matches!(t.kind(), "identifier" | "instance_variable")) {
            body.push(Stmt::Return { value: Expr::Name(b.text(*tail).to_string()), line: Builder::line(*tail) });
        }
    }
    let f = &mut b.tree.functions[idx];
    f.params = params;
    f.body = body;
    idx
}

/// Base variable written by an assignment target.
fn target_name(b: &Builder<'_>, node: Node<'_>) -> Option<String> {
    match node.kind() {
        "identifier" | "instance_variable" | "class_variable" | "global_variable" | "constant" => {
            Some(b.text(node).to_string())
        }
        "call" => target_name(b, node.child_by_field_name("receiver")?),
        "element_reference" => target_name(b, node.child_by_field_name("object")?),
        "scope_resolution" => Some(constant_path(b, node)),
        _ => None,
    }
}

fn expr(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    b.nested(|b| expr_inner(b, node, out))
}

fn expr_inner(b: &mut Builder<'_>, node: Node<'_>, out: &mut Vec<Stmt>) -> Expr {
    let line = Builder::line(node);
    match node.kind() {
        "identifier" | "instance_variable" | "class_variable" | "global_variable" | "constant" | "self" => {
            Expr::Name(b.text(node).to_string())
        }
        "scope_resolution" => Expr::Name(constant_path(b, node)),
        "integer" | "float" | "true" | "false" | "nil" | "simple_symbol" | "regex" => Expr::Literal(b.text(node).to_string()),
        "string" | "subshell" | "heredoc_body" => {
            let content: String = named_children(node)
                .into_iter()
                .filter(|c| matches!(c.kind(), "string_content" | "heredoc_content"))
                .map(|c| b.text(c))
                .collect();
            let interpolations: Vec<Node<'_>> =
                named_children(node).into_iter().filter(|c| c.kind() == "interpolation").collect();
            let lit = b.literal(&content, node);
            let value = if interpolations.is_empty() {
                lit
            } else {
                let mut parts = vec![lit];
                for i in interpolations {
                    parts.extend(named_children(i).into_iter().map(|c| expr(b, c, out)));
                }
                Expr::Group(parts)
            };
            if node.kind() == "subshell" {
                // Backticks run a shell command.
                Expr::call(Expr::Name("system".into()), vec![value], line)
            } else {
                value
            }
        }
        "call" => {
            let method = node.child_by_field_name("method").map(|m| b.text(m)).unwrap_or("");
            let callee = match node.child_by_field_name("receiver") {
                Some(r) => {
                    let recv = expr(b, r, out);
                    if method.is_empty() {
                        return recv;
                    }
                    Expr::attr(recv, method)
                }
                None => Expr::Name(method.to_string()),
            };
            let mut args: Vec<Expr> = node
                .child_by_field_name("arguments")
                .map(named_children)
                .unwrap_or_default()
                .into_iter()
                .filter(|a| a.kind() != "comment")
                .map(|a| expr(b, a, out))
                .collect();
            if let Some(block) = node.child_by_field_name("block") {
                args.push(Expr::Lambda(function(b, block, "")));
            }
            Expr::call(callee, args, line)
        }
        "assignment" | "operator_assignment" => {
            let right = node.child_by_field_name("right").map_or(Expr::Unknown, |r| expr(b, r, out));
            let Some(left) = node.child_by_field_name("left") else { return right };
            let value = if node.kind() == "operator_assignment" {
                Expr::Group(vec![expr(b, left, out), right])
            } else {
                right
            };
            if left.kind() == "left_assignment_list" {
                for t in named_children(left) {
                    if let Some(target) = target_name(b, t) {
                        out.push(Stmt::Assign { target, value: value.clone(), line });
                    }
                }
            } else if let Some(target) = target_name(b, left) {
                out.push(Stmt::Assign { target, value: value.clone(), line });
            }
            value
        }
        "pair" => node.child_by_field_name("value").map_or(Expr::Unknown, |v| expr(b, v, out)),
        "lambda" | "block" | "do_block" => Expr::Lambda(function(b, node, "")),
        "comment" => Expr::Unknown,
        "method" | "singleton_method" | "module" | "class" => {
            let mut ns = Vec::new();
            stmt(b, node, out, &mut ns, false);
            Expr::Unknown
        }
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
