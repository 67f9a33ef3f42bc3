//! Lenient version ordering and constraint matching.
//!
//! Covers the common shapes of npm ranges, PEP 440 specifiers and RubyGems
//! requirements well enough to pin dependencies among ingested versions. It is
//! not a full implementation of any ecosystem's resolution rules.

use std::cmp::Ordering;
use std::fmt;

/// A parsed version: numeric release components plus an optional
/// pre-release tag. Missing trailing components compare as zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    release: Vec<u64>,
    pre: Option<String>,
    raw: String,
}

impl Version {
    pub fn parse(raw: &str) -> Option<Version> {
        let trimmed = raw.trim().trim_start_matches(['v', 'V', '=']);
        if trimmed.is_empty() {
            return None;
        }
        let (core, pre) = split_pre(trimmed);
        let mut release = Vec::new();
        for part in core.split('.') {
            if part.is_empty() {
                return None;
            }
            release.push(part.parse::<u64>().ok()?);
        }
        Some(Version { release, pre, raw: raw.trim().to_string() })
    }

    pub fn component(&self, idx: usize) -> u64 {
        self.release.get(idx).copied().unwrap_or(0)
    }

    pub fn is_prerelease(&self) -> bool {
        self.pre.is_some()
    }

    fn from_parts(release: Vec<u64>) -> Version {
        let raw = release.iter().map(u64::to_string).collect::<Vec<_>>().join(".");
        Version { release, pre: None, raw }
    }
}

fn split_pre(s: &str) -> (&str, Option<String>) {
    // "1.2.3-beta.1", "1.2.3b1", "1.2.3.pre" all carry a pre-release tag.
    let s = s.split('+').next().unwrap_or(s);
    if let Some(idx) = s.find('-') {
        return (&s[..idx], Some(s[idx + 1..].to_string()));
    }
    let mut end = 0;
    let bytes = s.as_bytes();
    while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
        end += 1;
    }
    if end == s.len() {
        return (s, None);
    }
    let core = s[..end].trim_end_matches('.');
    (core, Some(s[end..].trim_start_matches('.').to_string()))
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        let len = self.release.len().max(other.release.len());
        for i in 0..len {
            match self.component(i).cmp(&other.component(i)) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        match (&self.pre, &other.pre) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Greater,
            (Some(_), None) => Ordering::Less,
            (Some(a), Some(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Orders two raw version strings; unparseable versions sort before parseable
/// ones and fall back to lexicographic order among themselves.
pub fn compare(a: &str, b: &str) -> Ordering {
    match (Version::parse(a), Version::parse(b)) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => a.cmp(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Comparator {
    op: Op,
    version: Version,
}

impl Comparator {
    fn matches(&self, v: &Version) -> bool {
        let ord = v.cmp(&self.version);
        match self.op {
            Op::Eq => ord == Ordering::Equal,
            Op::Ne => ord != Ordering::Equal,
            Op::Gt => ord == Ordering::Greater,
            Op::Ge => ord != Ordering::Less,
            Op::Lt => ord == Ordering::Less,
            Op::Le => ord != Ordering::Greater,
        }
    }
}

/// A disjunction of conjunctions of comparators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    alternatives: Vec<Vec<Comparator>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported version constraint `{0}`")]
pub struct ConstraintError(pub String);

impl Constraint {
    pub fn any() -> Constraint {
        Constraint { alternatives: vec![Vec::new()] }
    }

    pub fn parse(raw: &str) -> Result<Constraint, ConstraintError> {
        let raw = raw.trim();
        if raw.is_empty() || raw == "*" || raw.eq_ignore_ascii_case("latest") || raw == "x" {
            return Ok(Constraint::any());
        }
        let mut alternatives = Vec::new();
        for alt in raw.split("||") {
            alternatives.push(parse_conjunction(alt.trim()).ok_or_else(|| ConstraintError(raw.to_string()))?);
        }
        Ok(Constraint { alternatives })
    }

    pub fn matches(&self, version: &str) -> bool {
        let Some(v) = Version::parse(version) else {
            // Unparseable versions only satisfy the unconstrained requirement.
            return self.alternatives.iter().any(Vec::is_empty);
        };
        self.alternatives.iter().any(|conj| conj.iter().all(|c| c.matches(&v)))
    }
}

fn parse_conjunction(s: &str) -> Option<Vec<Comparator>> {
    if s.is_empty() || s == "*" {
        return Some(Vec::new());
    }
    // npm hyphen range: "1.2 - 2.3"
    if let Some((lo, hi)) = s.split_once(" - ") {
        return Some(vec![
            Comparator { op: Op::Ge, version: Version::parse(lo)? },
            Comparator { op: Op::Le, version: Version::parse(hi)? },
        ]);
    }
    let mut out = Vec::new();
    // Tokens are separated by commas (PEP 440, RubyGems) or whitespace (npm);
    // an operator may be separated from its version by a space.
    let normalized = s.replace(',', " ");
    let mut tokens = normalized.split_whitespace().peekable();
    while let Some(tok) = tokens.next() {
        let mut tok = tok.to_string();
        if tok.chars().all(|c| "<>=!~^".contains(c)) {
            tok.push_str(tokens.next()?);
        }
        out.extend(parse_term(&tok)?);
    }
    Some(out)
}

fn parse_term(tok: &str) -> Option<Vec<Comparator>> {
    let (op, rest) = split_op(tok);
    let rest = rest.trim();
    if rest == "*" || rest.eq_ignore_ascii_case("x") {
        return Some(Vec::new());
    }
    let wildcard = rest.split('.').position(|p| p == "*" || p.eq_ignore_ascii_case("x"));
    if let Some(pos) = wildcard {
        let parts: Vec<u64> = rest.split('.').take(pos).map(|p| p.parse().ok()).collect::<Option<_>>()?;
        return Some(prefix_range(&parts));
    }
    let version = Version::parse(rest)?;
    let given = rest.split(['-', '+']).next().unwrap_or(rest).split('.').count();
    Some(match op {
        "" | "=" | "==" | "===" => {
            if op.is_empty() && given < 3 && !rest.contains(|c: char| c.is_ascii_alphabetic()) {
                // npm treats a bare partial version as an x-range.
                prefix_range(&version.release)
            } else {
                vec![Comparator { op: Op::Eq, version }]
            }
        }
        "!=" => vec![Comparator { op: Op::Ne, version }],
        ">" => vec![Comparator { op: Op::Gt, version }],
        ">=" => vec![Comparator { op: Op::Ge, version }],
        "<" => vec![Comparator { op: Op::Lt, version }],
        "<=" => vec![Comparator { op: Op::Le, version }],
        "^" => {
            let upper = caret_upper(&version.release);
            vec![Comparator { op: Op::Ge, version }, Comparator { op: Op::Lt, version: upper }]
        }
        "~" => {
            let keep = if given >= 2 { 2 } else { 1 };
            let upper = bump(&version.release, keep);
            vec![Comparator { op: Op::Ge, version }, Comparator { op: Op::Lt, version: upper }]
        }
        // RubyGems "~>" and PEP 440 "~=": bump the second-to-last given component.
        "~>" | "~=" => {
            let keep = given.saturating_sub(1).max(1);
            let upper = bump(&version.release, keep);
            vec![Comparator { op: Op::Ge, version }, Comparator { op: Op::Lt, version: upper }]
        }
        _ => return None,
    })
}

fn split_op(tok: &str) -> (&str, &str) {
    for op in ["===", "~>", "~=", ">=", "<=", "==", "!=", "^", "~", ">", "<", "="] {
        if let Some(rest) = tok.strip_prefix(op) {
            return (op, rest);
        }
    }
    ("", tok)
}

fn prefix_range(parts: &[u64]) -> Vec<Comparator> {
    if parts.is_empty() {
        return Vec::new();
    }
    vec![
        Comparator { op: Op::Ge, version: Version::from_parts(parts.to_vec()) },
        Comparator { op: Op::Lt, version: bump(parts, parts.len()) },
    ]
}

/// Increments component `keep - 1` and drops everything after it.
fn bump(parts: &[u64], keep: usize) -> Version {
    let keep = keep.clamp(1, parts.len().max(1));
    let mut out: Vec<u64> = (0..keep).map(|i| parts.get(i).copied().unwrap_or(0)).collect();
    *out.last_mut().expect("keep >= 1") += 1;
    Version::from_parts(out)
}

fn caret_upper(parts: &[u64]) -> Version {
    let first_nonzero = parts.iter().position(|&p| p != 0).unwrap_or(parts.len().saturating_sub(1));
    bump(parts, first_nonzero + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_pads_missing_components() {
        assert_eq!(compare("1.10.0", "1.9.0"), Ordering::Greater);
        assert_eq!(Version::parse("1.2").unwrap().cmp(&Version::parse("1.2.0").unwrap()), Ordering::Equal);
        assert!(Version::parse("3.2.0.3").unwrap() > Version::parse("3.2.0").unwrap());
        assert!(Version::parse("1.0.0-beta").unwrap() < Version::parse("1.0.0").unwrap());
        assert!(Version::parse("2.0.0rc1").unwrap().is_prerelease());
    }

    #[test]
    fn npm_ranges() {
        let c = Constraint::parse("^2.88.0").unwrap();
        assert!(c.matches("2.88.2"));
        assert!(c.matches("2.99.0"));
        assert!(!c.matches("3.0.0"));
        assert!(!c.matches("2.87.0"));
        let c = Constraint::parse("~1.2.3").unwrap();
        assert!(c.matches("1.2.9"));
        assert!(!c.matches("1.3.0"));
        let c = Constraint::parse("^0.2.1").unwrap();
        assert!(c.matches("0.2.5"));
        assert!(!c.matches("0.3.0"));
        let c = Constraint::parse("1.x || >=3.0.0 <3.1").unwrap();
        assert!(c.matches("1.9.9"));
        assert!(c.matches("3.0.4"));
        assert!(!c.matches("2.0.0"));
        assert!(Constraint::parse("1.2 - 1.4").unwrap().matches("1.4.0"));
        assert!(Constraint::parse("1.2").unwrap().matches("1.2.7"));
    }

    #[test]
    fn pep440_and_rubygems() {
        let c = Constraint::parse(">=1.21.1,<3").unwrap();
        assert!(c.matches("2.0.7"));
        assert!(!c.matches("3.0.0"));
        let c = Constraint::parse("~> 1.2").unwrap();
        assert!(c.matches("1.9"));
        assert!(!c.matches("2.0"));
        let c = Constraint::parse("~> 1.2.3").unwrap();
        assert!(c.matches("1.2.9"));
        assert!(!c.matches("1.3.0"));
        let c = Constraint::parse("~=2.2").unwrap();
        assert!(c.matches("2.9"));
        assert!(!c.matches("3.0"));
        assert!(Constraint::parse("== 1.0").unwrap().matches("1.0.0"));
        assert!(Constraint::parse("!=1.5").unwrap().matches("1.6"));
    }

    #[test]
    fn wildcards_and_errors() {
        assert!(Constraint::parse("*").unwrap().matches("0.0.1"));
        assert!(Constraint::parse("").unwrap().matches("whatever"));
        assert!(Constraint::parse("1.2.*").unwrap().matches("1.2.5"));
        assert!(!Constraint::parse("1.2.*").unwrap().matches("1.3.0"));
        assert!(Constraint::parse("git+https://example.com/x.git").is_err());
    }
}
