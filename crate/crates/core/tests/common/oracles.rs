//! Brute-force reference implementations.

use chrono::{TimeZone, Utc};
use pkgvet::registry::{DeclaredDep, DepKind, PackageCoordinate, PackageMetadata, Registry, SubjectLanguage};
use pkgvet::static_analysis::{ApiCategory, ApiRef, CombinedApis, Confidence};
use std::collections::{BTreeMap, HashMap};

/// Damerau-Levenshtein by direct recursion over prefixes. A transposition
/// may pair any earlier occurrences `a[k] == b[j-1]` and `b[l] == a[i-1]`,
/// paying for everything deleted or inserted between them.
pub fn naive_edit_distance(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let mut best = (go(a, b, i - 1, j, memo) + 1).min(go(a, b, i, j - 1, memo) + 1).min(go(a, b, i - 1, j - 1, memo) + cost);
        for k in 0..i - 1 {
            for l in 0..j - 1 {
                if a[k] == b[j - 1] && b[l] == a[i - 1] {
                    best = best.min(go(a, b, k, l, memo) + (i - k - 2) + 1 + (j - l - 2));
                }
            }
        }
        memo.insert((i, j), best);
        best
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, a.len(), b.len(), &mut HashMap::new())
}

/// `reach[i][j]`: `j` is reachable from `i` over one or more edges.
pub fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach
}

pub const API_POOL: [(&str, ApiCategory); 8] = [
    ("fs.readFileSync", ApiCategory::Filesystem),
    ("fs.writeFileSync", ApiCategory::Filesystem),
    ("https.get", ApiCategory::Network),
    ("https.request", ApiCategory::Network),
    ("child_process.exec", ApiCategory::Process),
    ("child_process.spawn", ApiCategory::Process),
    ("eval", ApiCategory::Codegen),
    ("vm.runInThisContext", ApiCategory::Codegen),
];

pub fn confidence(level: u8) -> Confidence {
    match level % 3 {
        0 => Confidence::Low,
        1 => Confidence::Medium,
        _ => Confidence::High,
    }
}

pub fn own_apis(picks: &[(usize, u8)]) -> CombinedApis {
    let mut out = CombinedApis::new();
    for &(api, level) in picks {
        let (name, category) = API_POOL[api % API_POOL.len()];
        let c = confidence(level);
        out.entry(name.to_string()).and_modify(|r: &mut ApiRef| r.confidence = r.confidence.max(c)).or_insert(ApiRef { category, confidence: c });
    }
    out
}

/// Union of own APIs over each node and everything it reaches, keeping the
/// strongest confidence per name.
pub fn brute_combined(own: &[CombinedApis], edges: &[(usize, usize)]) -> Vec<CombinedApis> {
    let reach = closure(own.len(), edges);
    (0..own.len())
        .map(|i| {
            let mut out = CombinedApis::new();
            for j in (0..own.len()).filter(|&j| j == i || reach[i][j]) {
                for (name, r) in &own[j] {
                    out.entry(name.clone()).and_modify(|cur: &mut ApiRef| cur.confidence = cur.confidence.max(r.confidence)).or_insert(*r);
                }
            }
            out
        })
        .collect()
}

/// Own downloads plus those of every package that reaches the node.
pub fn brute_amplified(downloads: &[u64], edges: &[(usize, usize)]) -> Vec<u64> {
    let reach = closure(downloads.len(), edges);
    (0..downloads.len())
        .map(|v| downloads[v] + (0..downloads.len()).filter(|&u| u != v && reach[u][v]).map(|u| downloads[u]).sum::<u64>())
        .collect()
}

/// Single-version npm packages `p0..pN` wired by `edges` (`from` depends on `to`).
pub fn graph_packages(downloads: &[u64], edges: &[(usize, usize)]) -> Vec<PackageMetadata> {
    let mut deps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        deps.entry(a).or_default().push(b);
    }
    (0..downloads.len())
        .map(|i| PackageMetadata {
            coordinate: PackageCoordinate::new(Registry::Npm, &format!("p{i}"), "1.0.0").unwrap(),
            authors: vec![format!("author{i}")],
            release_time: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            downloads: downloads[i],
            provenance: Vec::new(),
            declared_deps: deps
                .get(&i)
                .into_iter()
                .flatten()
                .map(|d| DeclaredDep { name: format!("p{d}"), constraint: "*".into(), kind: DepKind::Runtime })
                .collect(),
            subject_language: SubjectLanguage::Js,
            file_inventory: Vec::new(),
            import_name: None,
            archive: None,
            traces: Vec::new(),
        })
        .collect()
}
