//! Heuristic rule engine, suspicion queue and analyst triage.

pub mod evaluate;
pub mod predicate;
pub mod rules;
pub mod triage;

pub use evaluate::{
    amplified_downloads, evaluate, evaluate_all, queue_to_json, queue_to_table, rank_queue, select_queue, EvaluationInput, Facts,
    QueueEntry, ReportStatus, StaticFacts, SuspicionReport, TriggeredRule,
};
pub use predicate::{facts_schema, Predicate, PredicateError};
pub use rules::{Rule, RuleError, RuleFamily, RuleSet, RuleSpec, DEFAULT_RULES, POLICY_GRAY};
pub use triage::{
    rule_stats, ExclusionRecord, ExclusionScope, LabelOutcome, LabelRecord, LabelRequest, LabelScope, RuleStat,
    TriageError, TriageLog, Verdict,
};
