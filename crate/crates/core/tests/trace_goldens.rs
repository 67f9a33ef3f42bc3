mod common;

#[test]
fn traces_match_goldens() {
    let results = common::run_trace_goldens();
    assert_eq!(results.len(), 4);
    for (name, matches, found) in &results {
        assert!(matches, "{name}: {found:?}");
    }
}

#[test]
fn sensitive_paths_flagged_and_tmp_ignored() {
    let found: std::collections::BTreeMap<String, Vec<String>> =
        common::run_trace_goldens().into_iter().map(|(n, _, f)| (n, f)).collect();
    assert_eq!(found["shadow_read"], ["read /etc/shadow"]);
    assert_eq!(found["sudoers_write"], ["write /etc/sudoers"]);
    assert_eq!(found["authorized_keys_write"], ["write /home/builder/.ssh/authorized_keys"]);
    assert!(found["tmp_write"].is_empty());
}
