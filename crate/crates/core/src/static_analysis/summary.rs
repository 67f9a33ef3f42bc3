//! Export summaries and category diffs between versions.

use super::labels::{ApiCategory, Confidence};
use super::usage::categories;
use super::{StaticError, UsageSummary};
use crate::version::Version;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExportKind {
    /// Returns values derived from a source.
    IndirectSource,
    /// Passes arguments into a sink.
    IndirectSink,
    /// Returns values derived from its arguments.
    Propagator,
}

/// Terminal labeled API behind an export, with the upstream export chain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViaRef {
    pub api: String,
    pub category: ApiCategory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chain: Vec<String>,
    pub confidence: Confidence,
    /// Argument reaching the sink, for [`ExportKind::IndirectSink`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExportSummary {
    /// Path callers use (`request.post`, `requests.api.get`, `Foo.bar`).
    pub export_name: String,
    pub kind: ExportKind,
    pub via: Vec<ViaRef>,
    pub argument_positions: Vec<usize>,
}

/// Categories present in `new.combined_apis` but absent from
/// `old.combined_apis`, counting matches of at least `min` confidence.
pub fn diff_api_categories(
    old: &UsageSummary,
    new: &UsageSummary,
    min: Confidence,
) -> Result<BTreeSet<ApiCategory>, StaticError> {
    let (o, n) = (&old.coordinate, &new.coordinate);
    let older = match (Version::parse(&o.version), Version::parse(&n.version)) {
        (Some(a), Some(b)) => a < b,
        _ => o.version < n.version,
    };
    if !o.same_package(n) || !older {
        return Err(StaticError::VersionOrder { old: o.to_string(), new: n.to_string() });
    }
    let before = categories(&old.combined_apis, min);
    Ok(categories(&new.combined_apis, min).difference(&before).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{PackageCoordinate, Registry};
    use crate::static_analysis::usage::ApiRef;

    fn summary(version: &str, apis: &[(&str, ApiCategory)]) -> UsageSummary {
        UsageSummary {
            coordinate: PackageCoordinate::new(Registry::Npm, "p", version).unwrap(),
            direct_apis: vec![],
            combined_apis: apis
                .iter()
                .map(|(n, c)| (n.to_string(), ApiRef { category: *c, confidence: Confidence::High }))
                .collect(),
            exports: vec![],
            flows: vec![],
            has_install_hook: false,
            install_hooks: vec![],
            parse_errors: vec![],
            signals: vec![],
            skipped_units: vec![],
        }
    }

    #[test]
    fn diff_cases() {
        let old = summary("1.0.0", &[("fs.readFile", ApiCategory::Filesystem)]);
        assert!(diff_api_categories(&old, &summary("1.0.1", &[("fs.readFile", ApiCategory::Filesystem)]), Confidence::Medium)
            .unwrap()
            .is_empty());
        let new = summary("1.1.0", &[("fs.readFile", ApiCategory::Filesystem), ("eval", ApiCategory::Codegen)]);
        assert_eq!(diff_api_categories(&old, &new, Confidence::Medium).unwrap(), BTreeSet::from([ApiCategory::Codegen]));
        assert!(matches!(diff_api_categories(&new, &old, Confidence::Medium), Err(StaticError::VersionOrder { .. })));
    }
}
