//! Labeled API matching and the combined-API union.

use super::labels::{ApiCategory, ApiLabel, ApiLabelSet, Confidence, MatchMode, Role};
use super::tree::{Expr, NormalizedTree, Stmt};
use super::{Location, StaticError};
use crate::registry::SubjectLanguage;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiUsage {
    pub qualified_name: String,
    pub category: ApiCategory,
    pub roles: BTreeSet<Role>,
    pub match_mode: MatchMode,
    pub confidence: Confidence,
    pub locations: Vec<Location>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApiRef {
    pub category: ApiCategory,
    pub confidence: Confidence,
}

/// Label name to category and strongest confidence seen.
pub type CombinedApis = BTreeMap<String, ApiRef>;

/// Names a unit binds itself, which therefore cannot denote globals or
/// modules.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub aliases: HashMap<String, String>,
    pub locals: HashSet<String>,
}

impl Scope {
    pub fn of(tree: &NormalizedTree) -> Scope {
        let aliases = tree.alias_map();
        let mut locals = HashSet::new();
        for f in &tree.functions {
            locals.extend(f.params.iter().cloned());
            for s in &f.body {
                if let Stmt::Assign { target, .. } = s {
                    if !aliases.contains_key(target) {
                        locals.insert(target.clone());
                    }
                }
            }
        }
        Scope { aliases, locals }
    }

    /// Static dotted path of a callee whose root is an import alias or an
    /// unbound global.
    pub fn static_path(&self, callee: &Expr) -> Option<String> {
        match callee {
            Expr::Name(n) if self.locals.contains(n) && !self.aliases.contains_key(n) => None,
            Expr::Name(n) => Some(self.aliases.get(n).cloned().unwrap_or_else(|| n.clone())),
            Expr::ModuleRef(m) => Some(m.clone()),
            Expr::Attr(obj, name) => self.static_path(obj).map(|p| format!("{p}.{name}")),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMatch<'a> {
    pub label: &'a ApiLabel,
    pub mode: MatchMode,
    pub confidence: Confidence,
}

/// Matches a callee against the labels of `language`.
pub fn match_label<'a>(callee: &Expr, scope: &Scope, labels: &'a ApiLabelSet, language: SubjectLanguage) -> Option<LabelMatch<'a>> {
    if let Expr::Name(n) = callee {
        if !scope.locals.contains(n) && !scope.aliases.contains_key(n) {
            if let Some(l) = labels.get(language, n).filter(|l| l.match_mode == MatchMode::GlobalName) {
                return Some(LabelMatch { label: l, mode: MatchMode::GlobalName, confidence: Confidence::High });
            }
        }
    }
    if let Some(path) = scope.static_path(callee) {
        let is_alias_rooted = !matches!(callee, Expr::Name(n) if !scope.aliases.contains_key(n));
        if is_alias_rooted {
            if let Some(l) = labels.get(language, &path).filter(|l| l.match_mode == MatchMode::QualifiedStatic) {
                return Some(LabelMatch { label: l, mode: MatchMode::QualifiedStatic, confidence: Confidence::High });
            }
        }
    }
    let Expr::Attr(receiver, method) = callee else { return None };
    let receiver_name = receiver_name(receiver).map(|r| r.trim_start_matches(['@', '$', '_']).to_lowercase());
    let mut low = None;
    for l in labels.for_language(language) {
        if l.match_mode != MatchMode::InstanceMethod || l.method() != method {
            continue;
        }
        if receiver_name.as_deref() == Some(l.instance_name().as_str()) {
            return Some(LabelMatch { label: l, mode: MatchMode::InstanceMethod, confidence: Confidence::Medium });
        }
        low.get_or_insert(LabelMatch { label: l, mode: MatchMode::InstanceMethod, confidence: Confidence::Low });
    }
    low
}

fn receiver_name(e: &Expr) -> Option<&str> {
    match e {
        Expr::Name(n) => Some(n.rsplit("::").next().unwrap_or(n)),
        Expr::Attr(_, a) => Some(a),
        _ => None,
    }
}

/// Labeled calls in one unit, grouped by label and match quality.
pub fn extract_api_usage(tree: &NormalizedTree, labels: &ApiLabelSet) -> Vec<ApiUsage> {
    let scope = Scope::of(tree);
    let mut found: BTreeMap<(String, MatchMode, Confidence), (ApiUsage, BTreeSet<u32>)> = BTreeMap::new();
    for (callee, _, line) in tree.calls() {
        let Some(m) = match_label(callee, &scope, labels, tree.language) else { continue };
        let key = (m.label.qualified_name.clone(), m.mode, m.confidence);
        let entry = found.entry(key).or_insert_with(|| {
            (
                ApiUsage {
                    qualified_name: m.label.qualified_name.clone(),
                    category: m.label.category,
                    roles: m.label.roles.clone(),
                    match_mode: m.mode,
                    confidence: m.confidence,
                    locations: Vec::new(),
                },
                BTreeSet::new(),
            )
        });
        entry.1.insert(line.clamp(1, tree.line_count.max(1)));
    }
    found
        .into_values()
        .map(|(mut usage, lines)| {
            usage.locations = lines.into_iter().map(|line| Location { file: tree.path.clone(), line }).collect();
            usage
        })
        .collect()
}

/// Merges usages from several units, keeping one entry per
/// `(label, mode, confidence)` with locations in path order.
pub fn merge_usages(parts: impl IntoIterator<Item = ApiUsage>) -> Vec<ApiUsage> {
    let mut merged: BTreeMap<(String, MatchMode, Confidence), ApiUsage> = BTreeMap::new();
    for u in parts {
        match merged.entry((u.qualified_name.clone(), u.match_mode, u.confidence)) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(u);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => o.get_mut().locations.extend(u.locations),
        }
    }
    merged
        .into_values()
        .map(|mut u| {
            u.locations.sort();
            u.locations.dedup();
            u
        })
        .collect()
}

pub fn direct_to_combined(direct: &[ApiUsage]) -> CombinedApis {
    let mut out = CombinedApis::new();
    for u in direct {
        insert_max(&mut out, &u.qualified_name, ApiRef { category: u.category, confidence: u.confidence });
    }
    out
}

fn insert_max(into: &mut CombinedApis, name: &str, r: ApiRef) {
    into.entry(name.to_string())
        .and_modify(|cur| cur.confidence = cur.confidence.max(r.confidence))
        .or_insert(r);
}

/// `direct` united with every dependency's combined set. A missing
/// dependency summary is a scheduling error.
pub fn combine_usage<K: Ord + std::fmt::Display>(
    direct: &CombinedApis,
    deps: &[K],
    summaries: &BTreeMap<K, CombinedApis>,
) -> Result<CombinedApis, StaticError> {
    let mut out = direct.clone();
    for d in deps {
        let dep = summaries.get(d).ok_or_else(|| StaticError::MissingDepSummary(d.to_string()))?;
        for (name, r) in dep {
            insert_max(&mut out, name, *r);
        }
    }
    Ok(out)
}

/// Categories present with at least `min` confidence.
pub fn categories(apis: &CombinedApis, min: Confidence) -> BTreeSet<ApiCategory> {
    apis.values().filter(|r| r.confidence >= min).map(|r| r.category).collect()
}
