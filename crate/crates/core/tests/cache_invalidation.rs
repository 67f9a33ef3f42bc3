mod common;

use pkgvet::cache::{AnalyzerKind, ReportCache};
use pkgvet::heuristics::TriageLog;
use pkgvet::pipeline::{Pipeline, RunCounts};

#[test]
fn edits_rerun_only_affected_analyzers() {
    let dir = tempfile::tempdir().unwrap();
    let out = common::run_invalidation(dir.path());
    assert_eq!(out.cold.metadata, 12);
    assert_eq!(out.cold.static_analysis, 12);
    assert!(out.cold.dynamic > 0);
    assert_eq!(out.warm, RunCounts::default());
    assert_eq!(out.rule_edit, RunCounts::default());
    assert!(out.rule_edit_rescored);
    assert_eq!(out.label_edit, RunCounts { metadata: 0, static_analysis: 12, dynamic: 0 });
}

#[test]
fn corrupt_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = common::seeded_inputs();
    let first = Pipeline::new(inputs.clone(), Some(ReportCache::open(dir.path()).unwrap()));
    let expected = first.flag(&first.analyze(common::seeded_packages(), &common::all_analyzers()).unwrap(), &TriageLog::in_memory());

    let cache = ReportCache::open(dir.path()).unwrap();
    let victim = cache
        .entries()
        .into_iter()
        .find(|e| e.key.analyzer == AnalyzerKind::Metadata)
        .unwrap();
    let object = dir.path().join("objects").join(&victim.digest[..2]).join(format!("{}.json", victim.digest));
    let mut bytes = std::fs::read(&object).unwrap();
    let last = bytes.len() - 2;
    bytes[last] ^= 0x20;
    std::fs::write(&object, bytes).unwrap();

    let second = Pipeline::new(inputs, Some(cache));
    let reports = second.flag(&second.analyze(common::seeded_packages(), &common::all_analyzers()).unwrap(), &TriageLog::in_memory());
    assert_eq!(second.counters.snapshot(), RunCounts { metadata: 1, static_analysis: 0, dynamic: 0 });
    assert_eq!(second.cache.as_ref().unwrap().stats.snapshot().2, 1);
    assert_eq!(reports, expected);
}
