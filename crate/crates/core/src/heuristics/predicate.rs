//! Rule predicate language.
//!
//! ```text
//! expr    := and ("or" and)*
//! and     := unary ("and" unary)*
//! unary   := "not" unary | primary
//! primary := "(" expr ")"
//!          | "ANY" path "(" expr ")"
//!          | operand (cmp operand | "IN" "[" literal ("," literal)* "]")?
//! cmp     := "==" | "!=" | "<" | "<=" | ">" | ">="
//! operand := path | "it" | string | number | "true" | "false" | "null"
//! ```
//!
//! Keywords are case-insensitive. Paths rooted at `metadata`, `static` or
//! `dynamic` are absolute; inside `ANY` other paths name fields of the
//! current element and `it` is the element itself. An operand standing
//! alone is tested for truthiness: non-empty lists and strings, non-zero
//! numbers, `true` and objects are truthy.

use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;

pub const ROOTS: [&str; 3] = ["metadata", "static", "dynamic"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} (at offset {offset})")]
pub struct PredicateError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    /// Absolute when the first segment is a root, else element-relative.
    Path(Vec<String>),
    It,
    Lit(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Or(Vec<Predicate>),
    And(Vec<Predicate>),
    Not(Box<Predicate>),
    Any { path: Vec<String>, body: Box<Predicate> },
    Cmp { left: Operand, op: CmpOp, right: Operand },
    In { left: Operand, set: Vec<Value> },
    Truthy(Operand),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Dot,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, PredicateError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset, message: &str| PredicateError { offset, message: message.to_string() };
    while i < chars.len() {
        let (at, c) = chars[i];
        let next = chars.get(i + 1).map(|x| x.1);
        match c {
            c if c.is_whitespace() => i += 1,
            '(' | ')' | '[' | ']' | ',' | '.' => {
                out.push((
                    at,
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '[' => Tok::LBrack,
                        ']' => Tok::RBrack,
                        ',' => Tok::Comma,
                        _ => Tok::Dot,
                    },
                ));
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(err(at, "expected comparison operator")),
                };
                out.push((at, Tok::Op(op)));
                i += len;
            }
            '"' | '\'' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(err(at, "unterminated string")),
                        Some((_, q)) if *q == c => break,
                        Some((_, '\\')) => {
                            if let Some((_, e)) = chars.get(j + 1) {
                                s.push(*e);
                            }
                            j += 2;
                        }
                        Some((_, ch)) => {
                            s.push(*ch);
                            j += 1;
                        }
                    }
                }
                out.push((at, Tok::Str(s)));
                i = j + 1;
            }
            c if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let mut j = i + 1;
                while chars.get(j).is_some_and(|x| x.1.is_ascii_digit() || x.1 == '.') {
                    j += 1;
                }
                let end = chars.get(j).map_or(src.len(), |x| x.0);
                let n: f64 = src[at..end].parse().map_err(|_| err(at, "bad number"))?;
                out.push((at, Tok::Num(n)));
                i = j;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while chars.get(j).is_some_and(|x| x.1.is_alphanumeric() || x.1 == '_') {
                    j += 1;
                }
                let end = chars.get(j).map_or(src.len(), |x| x.0);
                out.push((at, Tok::Ident(src[at..end].to_string())));
                i = j;
            }
            _ => return Err(err(at, &format!("unexpected character `{c}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, PredicateError> {
        Err(PredicateError { offset: self.offset(), message: message.into() })
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), PredicateError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Predicate, PredicateError> {
        let mut parts = vec![self.and()?];
        while self.keyword("or") {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Or(parts) })
    }

    fn and(&mut self) -> Result<Predicate, PredicateError> {
        let mut parts = vec![self.unary()?];
        while self.keyword("and") {
            self.pos += 1;
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::And(parts) })
    }

    fn unary(&mut self) -> Result<Predicate, PredicateError> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn path(&mut self) -> Result<Vec<String>, PredicateError> {
        let mut segs = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Ident(s)) => {
                    segs.push(s.clone());
                    self.pos += 1;
                }
                _ => return self.err("expected field name"),
            }
            if self.peek() == Some(&Tok::Dot) {
                self.pos += 1;
            } else {
                return Ok(segs);
            }
        }
    }

    fn literal(&mut self) -> Result<Value, PredicateError> {
        let v = match self.peek() {
            Some(Tok::Str(s)) => Value::String(s.clone()),
            Some(Tok::Num(n)) => serde_json::Number::from_f64(*n).map(Value::Number).unwrap_or(Value::Null),
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("true") => Value::Bool(true),
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("false") => Value::Bool(false),
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("null") => Value::Null,
            _ => return self.err("expected literal"),
        };
        self.pos += 1;
        Ok(v)
    }

    fn operand(&mut self) -> Result<Operand, PredicateError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("it") => {
                self.pos += 1;
                Ok(Operand::It)
            }
            Some(Tok::Ident(s)) if ["true", "false", "null"].iter().any(|k| s.eq_ignore_ascii_case(k)) => {
                Ok(Operand::Lit(self.literal()?))
            }
            Some(Tok::Ident(_)) => Ok(Operand::Path(self.path()?)),
            Some(Tok::Str(_) | Tok::Num(_)) => Ok(Operand::Lit(self.literal()?)),
            _ => self.err("expected operand"),
        }
    }

    fn primary(&mut self) -> Result<Predicate, PredicateError> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        if self.keyword("any") {
            self.pos += 1;
            let path = self.path()?;
            self.expect(Tok::LParen, "`(` after ANY path")?;
            let body = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Predicate::Any { path, body: Box::new(body) });
        }
        let left = self.operand()?;
        if let Some(Tok::Op(op)) = self.peek().cloned() {
            self.pos += 1;
            let right = self.operand()?;
            return Ok(Predicate::Cmp { left, op, right });
        }
        if self.keyword("in") {
            self.pos += 1;
            self.expect(Tok::LBrack, "`[`")?;
            let mut set = vec![self.literal()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                set.push(self.literal()?);
            }
            self.expect(Tok::RBrack, "`]`")?;
            return Ok(Predicate::In { left, set });
        }
        Ok(Predicate::Truthy(left))
    }
}

pub fn parse(src: &str) -> Result<Predicate, PredicateError> {
    let mut p = Parser { toks: lex(src)?, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// Shape of the facts document, used to reject unknown fields.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldType {
    Bool,
    Num,
    Str,
    List(Box<FieldType>),
    Object(BTreeMap<&'static str, FieldType>),
}

fn obj(fields: Vec<(&'static str, FieldType)>) -> FieldType {
    FieldType::Object(fields.into_iter().collect())
}

fn list(t: FieldType) -> FieldType {
    FieldType::List(Box::new(t))
}

/// Documented fields of the facts document.
pub fn facts_schema() -> FieldType {
    use FieldType::{Bool, Num, Str};
    let coordinate = || obj(vec![("registry", Str), ("name", Str), ("version", Str)]);
    let evidence = || list(obj(vec![("run", Str), ("line", Num)]));
    let endpoint = || obj(vec![("api", Str), ("category", Str), ("via", list(Str))]);
    let file_finding = || list(obj(vec![("path", Str), ("mode", Str), ("evidence", evidence())]));
    obj(vec![
        (
            "metadata",
            obj(vec![
                ("coordinate", coordinate()),
                ("typosquat_of", list(obj(vec![("popular_name", Str), ("distance", Num)]))),
                ("cross_registry_hits", list(obj(vec![("registry", Str), ("name", Str), ("author_mismatch", Bool)]))),
                ("related_malware", list(obj(vec![("malware", coordinate()), ("relation", Str)]))),
                (
                    "binary_flags",
                    list(obj(vec![("path", Str), ("byte_size", Num), ("kind", Str), ("magic_prefix", Str)])),
                ),
            ]),
        ),
        (
            "static",
            obj(vec![
                ("has_install_hook", Bool),
                ("install_hooks", list(obj(vec![("manifest", Str), ("kind", Str), ("command", Str)]))),
                ("new_api_categories", list(Str)),
                ("combined_categories", list(Str)),
                (
                    "flows",
                    list(obj(vec![
                        ("source", endpoint()),
                        ("sink", endpoint()),
                        ("source_category", Str),
                        ("sink_category", Str),
                        ("confidence", Str),
                        ("path", list(obj(vec![("file", Str), ("line", Num)]))),
                    ])),
                ),
                ("signals", list(Str)),
                ("parse_errors", list(obj(vec![("path", Str), ("message", Str)]))),
            ]),
        ),
        (
            "dynamic",
            obj(vec![
                ("unexpected_endpoints", list(obj(vec![("endpoint", Str), ("mode", Str), ("evidence", evidence())]))),
                ("sensitive_reads", file_finding()),
                ("sensitive_writes", file_finding()),
                (
                    "unexpected_processes",
                    list(obj(vec![("argv", list(Str)), ("parents", list(Str)), ("mode", Str), ("evidence", evidence())])),
                ),
            ]),
        ),
    ])
}

fn resolve_type<'a>(mut t: &'a FieldType, path: &[String]) -> Option<&'a FieldType> {
    for seg in path {
        match t {
            FieldType::Object(fields) => t = fields.get(seg.as_str())?,
            _ => return None,
        }
    }
    Some(t)
}

fn is_absolute(path: &[String]) -> bool {
    path.first().is_some_and(|p| ROOTS.contains(&p.as_str()))
}

impl Predicate {
    /// Checks every field reference against `schema`.
    pub fn validate(&self, schema: &FieldType) -> Result<(), String> {
        self.validate_in(schema, None)
    }

    fn validate_in(&self, schema: &FieldType, elem: Option<&FieldType>) -> Result<(), String> {
        let check_operand = |o: &Operand| -> Result<(), String> {
            match o {
                Operand::Path(p) if is_absolute(p) => {
                    resolve_type(schema, p).map(|_| ()).ok_or_else(|| format!("unknown field `{}`", p.join(".")))
                }
                Operand::Path(p) => match elem {
                    Some(t) => resolve_type(t, p).map(|_| ()).ok_or_else(|| format!("unknown element field `{}`", p.join("."))),
                    None => Err(format!("unknown field `{}`", p.join("."))),
                },
                Operand::It if elem.is_none() => Err("`it` used outside ANY".into()),
                _ => Ok(()),
            }
        };
        match self {
            Predicate::Or(ps) | Predicate::And(ps) => ps.iter().try_for_each(|p| p.validate_in(schema, elem)),
            Predicate::Not(p) => p.validate_in(schema, elem),
            Predicate::Any { path, body } => {
                let t = if is_absolute(path) {
                    resolve_type(schema, path)
                } else {
                    elem.and_then(|e| resolve_type(e, path))
                };
                match t {
                    Some(FieldType::List(inner)) => body.validate_in(schema, Some(inner)),
                    Some(_) => Err(format!("`{}` is not a list", path.join("."))),
                    None => Err(format!("unknown field `{}`", path.join("."))),
                }
            }
            Predicate::Cmp { left, right, .. } => {
                check_operand(left)?;
                check_operand(right)
            }
            Predicate::In { left, .. } | Predicate::Truthy(left) => check_operand(left),
        }
    }

    /// Evaluates against the facts document, collecting references to the
    /// facts that made it true.
    pub fn eval(&self, root: &Value, evidence: &mut Vec<String>) -> bool {
        self.eval_in(root, None, evidence)
    }

    fn eval_in(&self, root: &Value, elem: Option<&Value>, evidence: &mut Vec<String>) -> bool {
        match self {
            Predicate::Or(ps) => {
                let mut any = false;
                for p in ps {
                    any |= p.eval_in(root, elem, evidence);
                }
                any
            }
            Predicate::And(ps) => {
                let mut local = Vec::new();
                let all = ps.iter().all(|p| p.eval_in(root, elem, &mut local));
                if all {
                    evidence.extend(local);
                }
                all
            }
            Predicate::Not(p) => !p.eval_in(root, elem, &mut Vec::new()),
            Predicate::Any { path, body } => {
                let Some(Value::Array(items)) = lookup(root, elem, path) else { return false };
                let mut any = false;
                for (i, item) in items.iter().enumerate() {
                    if body.eval_in(root, Some(item), &mut Vec::new()) {
                        any = true;
                        if is_absolute(path) {
                            evidence.push(format!("{}[{i}]", path.join(".")));
                        }
                    }
                }
                any
            }
            Predicate::Cmp { left, op, right } => {
                let (l, r) = (operand(root, elem, left), operand(root, elem, right));
                compare(&l, *op, &r)
            }
            Predicate::In { left, set } => {
                let l = operand(root, elem, left);
                set.iter().any(|v| compare(&l, CmpOp::Eq, v))
            }
            Predicate::Truthy(o) => {
                let hit = truthy(&operand(root, elem, o));
                if hit {
                    if let Operand::Path(p) = o {
                        if is_absolute(p) {
                            evidence.push(p.join("."));
                        }
                    }
                }
                hit
            }
        }
    }
}

fn lookup<'a>(root: &'a Value, elem: Option<&'a Value>, path: &[String]) -> Option<&'a Value> {
    let mut cur = if is_absolute(path) { root } else { elem? };
    for seg in path {
        cur = cur.get(seg.as_str())?;
    }
    Some(cur)
}

fn operand(root: &Value, elem: Option<&Value>, o: &Operand) -> Value {
    match o {
        Operand::Path(p) => lookup(root, elem, p).cloned().unwrap_or(Value::Null),
        Operand::It => elem.cloned().unwrap_or(Value::Null),
        Operand::Lit(v) => v.clone(),
    }
}

pub fn truthy(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64().is_some_and(|x| x != 0.0),
        Value::String(s) => !s.is_empty(),
        Value::Array(a) => !a.is_empty(),
        Value::Object(_) => true,
    }
}

fn compare(l: &Value, op: CmpOp, r: &Value) -> bool {
    use std::cmp::Ordering;
    let ord = match (l, r) {
        (Value::Number(a), Value::Number(b)) => a.as_f64().zip(b.as_f64()).and_then(|(a, b)| a.partial_cmp(&b)),
        (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
        (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
        (Value::Null, Value::Null) => Some(Ordering::Equal),
        _ => None,
    };
    match (op, ord) {
        (CmpOp::Eq, o) => o == Some(Ordering::Equal),
        (CmpOp::Ne, o) => o != Some(Ordering::Equal),
        (CmpOp::Lt, Some(o)) => o == Ordering::Less,
        (CmpOp::Le, Some(o)) => o != Ordering::Greater,
        (CmpOp::Gt, Some(o)) => o == Ordering::Greater,
        (CmpOp::Ge, Some(o)) => o != Ordering::Less,
        _ => false,
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn check(src: &str, facts: Value) -> (bool, Vec<String>) {
        let p = parse(src).unwrap();
        p.validate(&facts_schema()).unwrap();
        let mut ev = Vec::new();
        (p.eval(&facts, &mut ev), ev)
    }

    #[test]
    fn any_and_in() {
        let facts = json!({"static": {"flows": [
            {"source_category": "NETWORK", "sink_category": "CODEGEN", "confidence": "LOW"},
            {"source_category": "NETWORK", "sink_category": "PROCESS", "confidence": "HIGH"}
        ]}});
        let (hit, ev) = check(
            r#"ANY static.flows (source_category == "NETWORK" and sink_category IN ["CODEGEN", "PROCESS"] and confidence != "LOW")"#,
            facts,
        );
        assert!(hit);
        assert_eq!(ev, ["static.flows[1]"]);
    }

    #[test]
    fn truthiness_and_missing_sections() {
        assert!(check("dynamic.sensitive_reads", json!({"dynamic": {"sensitive_reads": [{}]}})).0);
        assert!(!check("dynamic.sensitive_reads", json!({"dynamic": {"sensitive_reads": []}})).0);
        assert!(!check("dynamic.sensitive_reads", json!({"dynamic": null})).0);
        assert!(check("not static.has_install_hook", json!({})).0);
        assert!(check("ANY static.new_api_categories (it == 'CODEGEN') OR static.has_install_hook", json!({"static": {"new_api_categories": ["CODEGEN"]}})).0);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["", "static.flows ==", "ANY static.flows", "(static.has_install_hook", "a == 'x", "x ! y"] {
            assert!(parse(bad).is_err(), "{bad}");
        }
        let schema = facts_schema();
        assert!(parse("static.no_such_field").unwrap().validate(&schema).is_err());
        assert!(parse("ANY static.has_install_hook (it)").unwrap().validate(&schema).is_err());
        assert!(parse("it == 1").unwrap().validate(&schema).is_err());
        assert!(parse("ANY static.flows (nope == 1)").unwrap().validate(&schema).is_err());
    }
}
