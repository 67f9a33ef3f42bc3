//! Rule sets loaded from TOML.

use super::predicate::{self, facts_schema, Predicate};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

pub const DEFAULT_RULES: &str = include_str!("../../config/rules.toml");

/// Tag marking a rule as policy-gray: it ranks below substantive rules.
pub const POLICY_GRAY: &str = "POLICY_GRAY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleFamily {
    Metadata,
    Static,
    Dynamic,
}

impl RuleFamily {
    pub const ALL: [RuleFamily; 3] = [RuleFamily::Metadata, RuleFamily::Static, RuleFamily::Dynamic];

    /// Key of the family's section in the facts document.
    pub fn section(self) -> &'static str {
        match self {
            RuleFamily::Metadata => "metadata",
            RuleFamily::Static => "static",
            RuleFamily::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for RuleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleFamily::Metadata => "METADATA",
            RuleFamily::Static => "STATIC",
            RuleFamily::Dynamic => "DYNAMIC",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("CONFIG_INVALID: {origin}: {message}")]
    Invalid { origin: String, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn default_weight() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub id: String,
    pub family: RuleFamily,
    #[serde(default)]
    pub description: String,
    pub predicate: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub spec: RuleSpec,
    pub predicate: Predicate,
}

impl Rule {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn is_gray(&self) -> bool {
        self.spec.tags.iter().any(|t| t == POLICY_GRAY)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<Rule>,
    /// Exact source text, for fingerprinting.
    source: String,
}

impl RuleSet {
    pub fn defaults() -> RuleSet {
        RuleSet::parse(DEFAULT_RULES, "built-in rules").expect("built-in rules are valid")
    }

    pub fn parse(text: &str, origin: &str) -> Result<RuleSet, RuleError> {
        let invalid = |message: String| RuleError::Invalid { origin: origin.to_string(), message };
        let file: RuleFile = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let schema = facts_schema();
        let mut seen = BTreeSet::new();
        let mut rules = Vec::with_capacity(file.rule.len());
        for spec in file.rule {
            if spec.id.trim().is_empty() {
                return Err(invalid("rule with empty id".into()));
            }
            if !seen.insert(spec.id.clone()) {
                return Err(invalid(format!("duplicate rule id `{}`", spec.id)));
            }
            if !(spec.weight.is_finite() && spec.weight > 0.0) {
                return Err(invalid(format!("rule `{}`: weight must be positive", spec.id)));
            }
            let predicate = predicate::parse(&spec.predicate).map_err(|e| invalid(format!("rule `{}`: {e}", spec.id)))?;
            predicate.validate(&schema).map_err(|e| invalid(format!("rule `{}`: {e}", spec.id)))?;
            if let Some(bad) = referenced_roots(&predicate).into_iter().find(|r| *r != spec.family.section()) {
                return Err(invalid(format!("rule `{}` of family {} reads `{bad}`", spec.id, spec.family)));
            }
            rules.push(Rule { spec, predicate });
        }
        Ok(RuleSet { rules, source: text.to_string() })
    }

    pub fn load(path: &Path) -> Result<RuleSet, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io { path: path.display().to_string(), source })?;
        RuleSet::parse(&text, &path.display().to_string())
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn enabled(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.spec.enabled)
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.spec.id == id)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Copy keeping only the rules for which `keep` holds.
    pub fn filtered(&self, keep: impl Fn(&Rule) -> bool) -> RuleSet {
        RuleSet { rules: self.rules.iter().filter(|r| keep(r)).cloned().collect(), source: self.source.clone() }
    }
}

fn referenced_roots(p: &Predicate) -> BTreeSet<&str> {
    use super::predicate::Operand;
    fn operand<'a>(o: &'a Operand, out: &mut BTreeSet<&'a str>) {
        if let Operand::Path(segs) = o {
            if let Some(first) = segs.first().filter(|s| predicate::ROOTS.contains(&s.as_str())) {
                out.insert(first);
            }
        }
    }
    fn walk<'a>(p: &'a Predicate, out: &mut BTreeSet<&'a str>) {
        match p {
            Predicate::Or(ps) | Predicate::And(ps) => ps.iter().for_each(|q| walk(q, out)),
            Predicate::Not(q) => walk(q, out),
            Predicate::Any { path, body } => {
                if let Some(first) = path.first().filter(|s| predicate::ROOTS.contains(&s.as_str())) {
                    out.insert(first);
                }
                walk(body, out);
            }
            Predicate::Cmp { left, right, .. } => {
                operand(left, out);
                operand(right, out);
            }
            Predicate::In { left, .. } | Predicate::Truthy(left) => operand(left, out),
        }
    }
    let mut out = BTreeSet::new();
    walk(p, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_family() {
        let set = RuleSet::defaults();
        assert_eq!(set.rules().len(), 13);
        for fam in RuleFamily::ALL {
            assert!(set.rules().iter().any(|r| r.spec.family == fam));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let one = |body: &str| format!("[[rule]]\nid = \"X\"\nfamily = \"STATIC\"\n{body}\n");
        for bad in [
            one("predicate = \"static.bogus\""),
            one("predicate = \"static.has_install_hook\"\nweight = 0"),
            one("predicate = \"metadata.binary_flags\""),
            one("predicate = \"static.has_install_hook and\""),
            one("predicate = \"static.has_install_hook\"\ncolour = 1"),
            format!("{0}{0}", one("predicate = \"static.has_install_hook\"")),
        ] {
            let err = RuleSet::parse(&bad, "t").unwrap_err();
            assert!(err.to_string().starts_with("CONFIG_INVALID"), "{err}");
        }
        let ok = RuleSet::parse(&one("predicate = \"static.has_install_hook\"\ntags = [\"POLICY_GRAY\"]"), "t").unwrap();
        assert!(ok.rules()[0].is_gray());
        assert_eq!(ok.rules()[0].spec.weight, 1.0);
    }
}
