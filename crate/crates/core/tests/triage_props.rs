mod common;

use chrono::{TimeZone, Utc};
use pkgvet::heuristics::{
    evaluate, rank_queue, EvaluationInput, ExclusionRecord, ExclusionScope, ReportStatus, RuleSet, SuspicionReport,
    TriageLog,
};
use pkgvet::pipeline::Pipeline;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

fn seeded_inputs() -> &'static [EvaluationInput] {
    static INPUTS: OnceLock<Vec<EvaluationInput>> = OnceLock::new();
    INPUTS.get_or_init(|| {
        let pipeline = Pipeline::new(common::seeded_inputs(), None);
        pipeline.analyze(common::seeded_packages(), &common::all_analyzers()).unwrap().evaluation_inputs()
    })
}

fn scope_strategy() -> impl Strategy<Value = ExclusionScope> {
    let n = seeded_inputs().len();
    let rules: Vec<String> = RuleSet::defaults().rules().iter().map(|r| r.id().to_string()).collect();
    prop_oneof![
        (0..n).prop_map(|i| ExclusionScope::Coordinate { coordinate: seeded_inputs()[i].coordinate.clone() }),
        (0..n, prop::sample::select(rules)).prop_map(|(i, rule)| ExclusionScope::CoordinateRule {
            coordinate: seeded_inputs()[i].coordinate.clone(),
            rule
        }),
        (0..n).prop_map(|i| ExclusionScope::Author { author: seeded_inputs()[i].authors[0].to_uppercase() }),
    ]
}

fn log_with(scopes: &[ExclusionScope]) -> TriageLog {
    let mut log = TriageLog::in_memory();
    for s in scopes {
        log.add_exclusion(ExclusionRecord {
            scope: s.clone(),
            reason: "test".into(),
            created_by: "prop".into(),
            created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        })
        .unwrap();
    }
    log
}

fn run(rules: &RuleSet, log: &TriageLog) -> Vec<SuspicionReport> {
    seeded_inputs().iter().map(|i| evaluate(i, rules, log)).collect()
}

fn evidence(r: &SuspicionReport) -> Vec<(String, Vec<String>)> {
    r.triggered.iter().map(|t| (t.rule.clone(), t.evidence.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exclusions_keep_evidence_and_invariants(scopes in prop::collection::vec(scope_strategy(), 0..6)) {
        let rules = RuleSet::defaults();
        let log = log_with(&scopes);
        let plain = run(&rules, &TriageLog::in_memory());
        let excluded = run(&rules, &log);
        for (p, e) in plain.iter().zip(&excluded) {
            prop_assert_eq!(evidence(p), evidence(e));
            prop_assert_eq!(p.score, e.score);
            prop_assert_eq!(e.score > 0.0, !e.triggered.is_empty());
            for t in &e.triggered {
                let covered = scopes.iter().any(|s| s.covers(&e.coordinate, &e.authors, &t.rule));
                prop_assert_eq!(t.excluded_by.is_some(), covered);
            }
            if e.status == ReportStatus::Excluded {
                for t in &e.triggered {
                    prop_assert!(log.exclusion_for(&e.coordinate, &e.authors, &t.rule).is_some());
                }
            }
        }
    }

    #[test]
    fn more_exclusions_never_unexclude(
        scopes in prop::collection::vec(scope_strategy(), 0..5),
        extra in prop::collection::vec(scope_strategy(), 0..3),
    ) {
        let rules = RuleSet::defaults();
        let fewer = run(&rules, &log_with(&scopes));
        let all: Vec<ExclusionScope> = scopes.iter().chain(&extra).cloned().collect();
        let more = run(&rules, &log_with(&all));
        let queued = |rs: &[SuspicionReport]| -> BTreeSet<String> {
            rank_queue(rs, &BTreeMap::new(), false).into_iter().map(|q| q.coordinate.to_string()).collect()
        };
        prop_assert!(queued(&more).is_subset(&queued(&fewer)));
    }

    #[test]
    fn disabling_rules_never_adds_triggers(keep in prop::collection::vec(any::<bool>(), 13)) {
        let all = RuleSet::defaults();
        let ids: Vec<String> = all.rules().iter().map(|r| r.id().to_string()).collect();
        let kept: BTreeSet<&String> = ids.iter().zip(&keep).filter(|(_, k)| **k).map(|(id, _)| id).collect();
        let subset = all.filtered(|r| kept.contains(&r.id().to_string()));
        let log = TriageLog::in_memory();
        for (full, part) in run(&all, &log).iter().zip(run(&subset, &log).iter()) {
            let f: BTreeSet<&str> = full.rule_ids().collect();
            let p: BTreeSet<&str> = part.rule_ids().collect();
            prop_assert!(p.is_subset(&f));
            prop_assert!(part.score <= full.score);
        }
    }
}

#[test]
fn gray_triggers_rank_below_substantive_ones() {
    let text = pkgvet::heuristics::DEFAULT_RULES.replacen(
        "predicate = \"static.has_install_hook\"",
        "predicate = \"static.has_install_hook\"\nweight = 5.0\ntags = [\"POLICY_GRAY\"]",
        1,
    );
    let rules = RuleSet::parse(&text, "gray").unwrap();
    let reports = run(&rules, &TriageLog::in_memory());
    let queue = rank_queue(&reports, &BTreeMap::new(), false);
    let pos = |name: &str| queue.iter().position(|q| q.coordinate.name == name).unwrap();
    // sqlite-bindings carries only the gray hook with a larger raw score.
    let gray_only = reports.iter().find(|r| r.coordinate.name == "sqlite-bindings").unwrap();
    assert!(gray_only.score > 1.0);
    assert!(pos("sqlite-bindings") > pos("discord.js-user"));
    assert!(pos("fast_json_ext") > pos("sysinfo-agent"));
}
