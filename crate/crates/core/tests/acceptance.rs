//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

mod common;

use common::oracles::{brute_amplified, brute_combined, graph_packages, naive_edit_distance, own_apis};
use pkgvet::exec::ExecMode;
use pkgvet::graph::{build_graph, ResolutionPolicy};
use pkgvet::heuristics::{amplified_downloads, queue_to_json, TriageLog};
use pkgvet::metadata::edit_distance;
use pkgvet::pipeline::{Pipeline, RunCounts};
use pkgvet::static_analysis::{combine_usage, CombinedApis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use std::collections::BTreeMap;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn seeded_corpus() -> Result<String, String> {
    let out = common::run_seeded();
    let missed = out.missed();
    let benign = out.benign_flagged();
    let want: Vec<&String> = out.expected.keys().collect();
    let mut queue: Vec<&String> = out.queue_after_labels.iter().collect();
    queue.sort();
    let detail = format!(
        "{} packages, malicious missed {}, benign flagged {}, queue after labels {:?}, {:.2?}",
        out.fired.len(),
        missed.len(),
        benign.len(),
        out.queue_after_labels,
        out.elapsed
    );
    let ok = out.fired.len() == 12
        && want.len() == 3
        && missed.is_empty()
        && benign.len() <= out.max_benign_flagged
        && queue == want
        && out.elapsed.as_secs() < 60;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn combine_closure() -> Result<String, String> {
    let strategy = (1usize..=20).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..=(2 * n)),
            prop::collection::vec(prop::collection::vec((0usize..8, 0u8..3), 0..4), n),
        )
    });
    runner(100)
        .run(&strategy, |(n, raw, picks)| {
            let edges: Vec<(usize, usize)> =
                raw.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect();
            let own: Vec<CombinedApis> = picks.iter().map(|p| own_apis(p)).collect();
            let mut done: BTreeMap<usize, CombinedApis> = BTreeMap::new();
            for i in (0..n).rev() {
                let deps: Vec<usize> = edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
                done.insert(i, combine_usage(&own[i], &deps, &done).unwrap());
            }
            prop_assert_eq!(done.into_values().collect::<Vec<_>>(), brute_combined(&own, &edges));
            Ok(())
        })
        .map(|_| "100 random DAGs up to 20 nodes".to_string())
        .map_err(|e| e.to_string())
}

fn flow_equivalence() -> Result<String, String> {
    let cases = common::run_flow_fixtures();
    let bad: Vec<&str> =
        cases.iter().filter(|c| c.composed != c.inline || c.composed != c.expected).map(|c| c.name.as_str()).collect();
    let detail = format!("{} fixtures, mismatched {:?}", cases.len(), bad);
    if cases.len() >= 6 && bad.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn edit_distance_oracle() -> Result<String, String> {
    let name = || "[abcd_-]{0,10}";
    runner(200)
        .run(&(name(), name()), |(a, b)| {
            prop_assert_eq!(edit_distance(&a, &b), naive_edit_distance(&a, &b));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    runner(200)
        .run(&(name(), name(), name()), |(a, b, c)| {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("200 pairs against the recursive oracle, 200 metric triples".into())
}

fn rule_fixtures() -> Result<String, String> {
    let outcomes = common::run_rule_fixtures();
    let bad: Vec<String> = outcomes
        .iter()
        .filter(|o| o.target_rules != [o.rule.clone()] || !o.others.is_empty())
        .map(|o| format!("{} fired {:?}", o.rule, o.target_rules))
        .collect();
    let detail = format!("{} fixtures, wrong {:?}", outcomes.len(), bad);
    if outcomes.len() == 13 && bad.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trace_goldens() -> Result<String, String> {
    let results = common::run_trace_goldens();
    let found: BTreeMap<String, Vec<String>> = results.iter().map(|(n, _, f)| (n.clone(), f.clone())).collect();
    let all_match = results.iter().all(|(_, m, _)| *m);
    let detail = format!("{found:?}");
    let ok = all_match
        && found.get("shadow_read").is_some_and(|f| f == &["read /etc/shadow"])
        && found.get("sudoers_write").is_some_and(|f| f == &["write /etc/sudoers"])
        && found.get("authorized_keys_write").is_some_and(|f| f.len() == 1 && f[0].ends_with("/.ssh/authorized_keys"))
        && found.get("tmp_write").is_some_and(|f| f.is_empty());
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cache_invalidation() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = common::run_invalidation(dir.path());
    let detail = format!("rule edit reran {:?}, label edit reran {:?}", out.rule_edit, out.label_edit);
    let ok = out.rule_edit == RunCounts::default()
        && out.rule_edit_rescored
        && out.label_edit.metadata == 0
        && out.label_edit.dynamic == 0
        && out.label_edit.static_analysis == out.cold.static_analysis
        && out.warm == RunCounts::default();
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn amplification_and_determinism() -> Result<String, String> {
    let strategy = (
        prop::collection::vec(0u64..1_000_000, 10),
        prop::collection::vec((0usize..10, 0usize..10), 0..25),
    );
    runner(100)
        .run(&strategy, |(downloads, raw)| {
            let edges: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| a != b).collect();
            let graph = build_graph(&graph_packages(&downloads, &edges), ResolutionPolicy::default());
            let amplified = amplified_downloads(&graph);
            for (i, w) in brute_amplified(&downloads, &edges).iter().enumerate() {
                let coord = format!("npm/p{i}@1.0.0").parse().unwrap();
                prop_assert_eq!(amplified[&coord], *w);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let export = |exec| {
        let pipeline = Pipeline::new(common::seeded_inputs(), None).with_exec(exec, 0);
        let analysis = pipeline.analyze(common::seeded_packages(), &common::all_analyzers()).unwrap();
        queue_to_json(&Pipeline::queue(&analysis, &pipeline.flag(&analysis, &TriageLog::in_memory()), false))
    };
    let (a, b, c) = (export(ExecMode::Parallel), export(ExecMode::Parallel), export(ExecMode::Sequential));
    if a == b && a == c {
        Ok(format!("100 random 10-node graphs; queue export {} bytes identical across runs", a.len()))
    } else {
        Err("queue export differs between runs".into())
    }
}

type Criterion = (&'static str, fn() -> Result<String, String>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("seeded corpus", seeded_corpus),
        ("combine_usage closure", combine_closure),
        ("summary/inline flows", flow_equivalence),
        ("edit distance", edit_distance_oracle),
        ("rule fixtures", rule_fixtures),
        ("trace goldens", trace_goldens),
        ("cache invalidation", cache_invalidation),
        ("amplification and determinism", amplification_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
