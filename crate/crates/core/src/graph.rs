//! Cross-package dependency graph over resolved runtime dependencies.
//!
//! Edges point from dependent to dependency. Cycles are collapsed into
//! strongly connected components and the components are ordered so every
//! component comes after everything it depends on.

use crate::registry::{PackageCoordinate, PackageMetadata, Registry};
use crate::version::{self, Constraint};
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("{0} is not in the dependency graph")]
    NotInGraph(PackageCoordinate),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// How a declared dependency picks one of the ingested versions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionPolicy {
    /// Highest ingested version satisfying the constraint.
    #[default]
    LatestSatisfying,
    /// Highest ingested version regardless of the constraint.
    Latest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    #[serde(flatten)]
    pub coordinate: PackageCoordinate,
    pub downloads: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: Vec<GraphNode>,
    index: BTreeMap<PackageCoordinate, usize>,
    /// Sorted, deduplicated `(dependent, dependency)` pairs.
    edges: Vec<(usize, usize)>,
    /// Components in dependency-first order; members sorted.
    sccs: Vec<Vec<usize>>,
    scc_of: Vec<usize>,
    warnings: Vec<String>,
}

/// Serialized form: `nodes[]`, `edges[]`, `sccs[]` in topological order and
/// `warnings[]`. Arrays are sorted so equal graphs serialize identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub sccs: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReverseDeps {
    pub dependents: BTreeSet<PackageCoordinate>,
    pub own_downloads: u64,
    pub dependent_downloads: u64,
    /// Own downloads plus the downloads of every transitive dependent.
    pub amplified_downloads: u64,
}

impl ReverseDeps {
    /// Dependent downloads over direct downloads; `None` without direct downloads.
    pub fn amplification_factor(&self) -> Option<f64> {
        (self.own_downloads > 0).then(|| self.dependent_downloads as f64 / self.own_downloads as f64)
    }
}

pub fn build_graph(metas: &[PackageMetadata], policy: ResolutionPolicy) -> DependencyGraph {
    let mut coords: Vec<&PackageMetadata> = metas.iter().collect();
    coords.sort_by(|a, b| a.coordinate.cmp(&b.coordinate));
    coords.dedup_by(|a, b| a.coordinate == b.coordinate);

    let nodes: Vec<GraphNode> =
        coords.iter().map(|m| GraphNode { coordinate: m.coordinate.clone(), downloads: m.downloads }).collect();
    let index: BTreeMap<PackageCoordinate, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.coordinate.clone(), i)).collect();

    let mut versions: BTreeMap<(Registry, &str), Vec<&str>> = BTreeMap::new();
    for m in &coords {
        versions.entry((m.coordinate.registry, m.coordinate.name.as_str())).or_default().push(&m.coordinate.version);
    }
    for list in versions.values_mut() {
        list.sort_by(|a, b| version::compare(a, b));
    }

    let mut edges = BTreeSet::new();
    let mut warnings = Vec::new();
    for (from, meta) in coords.iter().enumerate() {
        let registry = meta.coordinate.registry;
        for dep in meta.runtime_deps() {
            let name = registry.canonical_name(&dep.name);
            let candidates = versions.get(&(registry, name.as_str()));
            let picked = candidates.and_then(|list| pick_version(list, &dep.constraint, policy));
            match picked {
                Some(v) => {
                    let to = index[&PackageCoordinate { registry, name: name.clone(), version: v.to_string() }];
                    if to != from {
                        edges.insert((from, to));
                    }
                }
                None => warnings.push(format!(
                    "{}: dependency {} ({}) does not resolve to an ingested version",
                    meta.coordinate, name, dep.constraint
                )),
            }
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let (sccs, scc_of) = condense(&nodes, &edges);
    DependencyGraph { nodes, index, edges, sccs, scc_of, warnings }
}

fn pick_version<'a>(sorted: &[&'a str], constraint: &str, policy: ResolutionPolicy) -> Option<&'a str> {
    match policy {
        ResolutionPolicy::Latest => sorted.last().copied(),
        ResolutionPolicy::LatestSatisfying => {
            let c = Constraint::parse(constraint).ok()?;
            sorted.iter().rev().find(|v| c.matches(v)).copied()
        }
    }
}

/// Tarjan components, then a Kahn pass over the condensation that always
/// emits the ready component whose smallest member sorts first.
fn condense(nodes: &[GraphNode], edges: &[(usize, usize)]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(nodes.len(), edges.len());
    for _ in nodes {
        g.add_node(());
    }
    for &(a, b) in edges {
        g.add_edge(NodeIndex::new(a), NodeIndex::new(b), ());
    }
    let mut comps: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut members: Vec<usize> = c.into_iter().map(NodeIndex::index).collect();
            members.sort_unstable();
            members
        })
        .collect();
    // Node indices follow coordinate order, so the smallest index is the
    // smallest coordinate.
    comps.sort_by_key(|c| c[0]);
    let mut comp_of = vec![0; nodes.len()];
    for (ci, c) in comps.iter().enumerate() {
        for &n in c {
            comp_of[n] = ci;
        }
    }
    let mut deps_left = vec![BTreeSet::new(); comps.len()];
    let mut dependents = vec![BTreeSet::new(); comps.len()];
    for &(a, b) in edges {
        let (ca, cb) = (comp_of[a], comp_of[b]);
        if ca != cb {
            deps_left[ca].insert(cb);
            dependents[cb].insert(ca);
        }
    }
    let mut ready: BTreeSet<(usize, usize)> =
        (0..comps.len()).filter(|&c| deps_left[c].is_empty()).map(|c| (comps[c][0], c)).collect();
    let mut order = Vec::with_capacity(comps.len());
    while let Some(&(key, c)) = ready.iter().next() {
        ready.remove(&(key, c));
        order.push(c);
        for &d in &dependents[c] {
            deps_left[d].remove(&c);
            if deps_left[d].is_empty() {
                ready.insert((comps[d][0], d));
            }
        }
    }
    debug_assert_eq!(order.len(), comps.len(), "condensation is acyclic");
    let mut scc_of = vec![0; nodes.len()];
    let sccs: Vec<Vec<usize>> = order.iter().map(|&c| comps[c].clone()).collect();
    for (pos, members) in sccs.iter().enumerate() {
        for &n in members {
            scc_of[n] = pos;
        }
    }
    (sccs, scc_of)
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PackageCoordinate> {
        self.nodes.iter().map(|n| &n.coordinate)
    }

    pub fn contains(&self, coord: &PackageCoordinate) -> bool {
        self.index.contains_key(coord)
    }

    pub fn downloads(&self, coord: &PackageCoordinate) -> Option<u64> {
        self.index.get(coord).map(|&i| self.nodes[i].downloads)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn edges(&self) -> impl Iterator<Item = (&PackageCoordinate, &PackageCoordinate)> {
        self.edges.iter().map(|&(a, b)| (&self.nodes[a].coordinate, &self.nodes[b].coordinate))
    }

    fn node(&self, coord: &PackageCoordinate) -> Result<usize, GraphError> {
        self.index.get(coord).copied().ok_or_else(|| GraphError::NotInGraph(coord.clone()))
    }

    /// Components in dependency-first order, ties broken by the smallest
    /// member coordinate.
    pub fn topo_order(&self) -> Vec<Vec<PackageCoordinate>> {
        self.sccs.iter().map(|c| c.iter().map(|&n| self.nodes[n].coordinate.clone()).collect()).collect()
    }

    /// Position of the component holding `coord` in [`Self::topo_order`].
    pub fn component_of(&self, coord: &PackageCoordinate) -> Result<usize, GraphError> {
        Ok(self.scc_of[self.node(coord)?])
    }

    /// Groups components into waves: every component's dependencies live in
    /// earlier waves, so a wave can be processed in parallel.
    pub fn waves(&self) -> Vec<Vec<Vec<PackageCoordinate>>> {
        let mut level = vec![0usize; self.sccs.len()];
        for (pos, members) in self.sccs.iter().enumerate() {
            let mut lvl = 0;
            for &n in members {
                for &(a, b) in self.out_edges(n) {
                    debug_assert_eq!(a, n);
                    let dep = self.scc_of[b];
                    if dep != pos {
                        lvl = lvl.max(level[dep] + 1);
                    }
                }
            }
            level[pos] = lvl;
        }
        let depth = level.iter().copied().max().map_or(0, |m| m + 1);
        let mut waves = vec![Vec::new(); depth];
        for (pos, members) in self.sccs.iter().enumerate() {
            waves[level[pos]].push(members.iter().map(|&n| self.nodes[n].coordinate.clone()).collect());
        }
        waves
    }

    fn out_edges(&self, n: usize) -> &[(usize, usize)] {
        let start = self.edges.partition_point(|&(a, _)| a < n);
        let end = self.edges.partition_point(|&(a, _)| a <= n);
        &self.edges[start..end]
    }

    /// Direct resolved dependencies of `coord`.
    pub fn dependencies(&self, coord: &PackageCoordinate) -> Result<Vec<PackageCoordinate>, GraphError> {
        let n = self.node(coord)?;
        Ok(self.out_edges(n).iter().map(|&(_, b)| self.nodes[b].coordinate.clone()).collect())
    }

    /// Every package reachable from `coord`, excluding `coord` itself.
    pub fn transitive_dependencies(&self, coord: &PackageCoordinate) -> Result<BTreeSet<PackageCoordinate>, GraphError> {
        let start = self.node(coord)?;
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut out = BTreeSet::new();
        while let Some(n) = queue.pop_front() {
            for &(_, b) in self.out_edges(n) {
                if !seen[b] {
                    seen[b] = true;
                    out.insert(self.nodes[b].coordinate.clone());
                    queue.push_back(b);
                }
            }
        }
        Ok(out)
    }

    /// Transitive dependents of `coord` and its download count amplified by
    /// theirs.
    pub fn reverse_deps(&self, coord: &PackageCoordinate) -> Result<ReverseDeps, GraphError> {
        let start = self.node(coord)?;
        let mut reverse = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            reverse[b].push(a);
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut dependents = BTreeSet::new();
        let mut dependent_downloads = 0u64;
        while let Some(n) = queue.pop_front() {
            for &a in &reverse[n] {
                if !seen[a] {
                    seen[a] = true;
                    dependents.insert(self.nodes[a].coordinate.clone());
                    dependent_downloads = dependent_downloads.saturating_add(self.nodes[a].downloads);
                    queue.push_back(a);
                }
            }
        }
        let own = self.nodes[start].downloads;
        Ok(ReverseDeps {
            dependents,
            own_downloads: own,
            dependent_downloads,
            amplified_downloads: own.saturating_add(dependent_downloads),
        })
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| GraphEdge {
                    from: self.nodes[a].coordinate.to_string(),
                    to: self.nodes[b].coordinate.to_string(),
                })
                .collect(),
            sccs: self.sccs.iter().map(|c| c.iter().map(|&n| self.nodes[n].coordinate.to_string()).collect()).collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_document(doc: &GraphDocument) -> Result<DependencyGraph, GraphError> {
        let mut nodes = doc.nodes.clone();
        nodes.sort_by(|a, b| a.coordinate.cmp(&b.coordinate));
        let index: BTreeMap<PackageCoordinate, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.coordinate.clone(), i)).collect();
        let by_name: BTreeMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.coordinate.to_string(), i)).collect();
        let lookup = |s: &str| by_name.get(s).copied().ok_or_else(|| GraphError::Malformed(format!("unknown node {s}")));
        let mut edges = BTreeSet::new();
        for e in &doc.edges {
            edges.insert((lookup(&e.from)?, lookup(&e.to)?));
        }
        let edges: Vec<(usize, usize)> = edges.into_iter().collect();
        let (sccs, scc_of) = condense(&nodes, &edges);
        Ok(DependencyGraph { nodes, index, edges, sccs, scc_of, warnings: doc.warnings.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{DeclaredDep, DepKind, SubjectLanguage};
    use chrono::TimeZone;

    pub(crate) fn meta(name: &str, version: &str, deps: &[(&str, &str)], downloads: u64) -> PackageMetadata {
        PackageMetadata {
            coordinate: PackageCoordinate::new(Registry::Npm, name, version).unwrap(),
            authors: vec![],
            release_time: chrono::Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            downloads,
            provenance: vec![],
            declared_deps: deps
                .iter()
                .map(|(n, c)| DeclaredDep { name: n.to_string(), constraint: c.to_string(), kind: DepKind::Runtime })
                .collect(),
            subject_language: SubjectLanguage::Js,
            file_inventory: vec![],
            import_name: None,
            archive: None,
            traces: vec![],
        }
    }

    fn names(order: &[Vec<PackageCoordinate>]) -> Vec<Vec<String>> {
        order.iter().map(|c| c.iter().map(|x| x.name.clone()).collect()).collect()
    }

    #[test]
    fn chain_orders_dependencies_first() {
        let g = build_graph(
            &[meta("a", "1.0.0", &[("b", "*")], 1), meta("b", "1.0.0", &[("c", "*")], 1), meta("c", "1.0.0", &[], 1)],
            ResolutionPolicy::default(),
        );
        assert_eq!(names(&g.topo_order()), vec![vec!["c"], vec!["b"], vec!["a"]]);
        assert_eq!(g.waves().len(), 3);
    }

    #[test]
    fn cycle_becomes_one_component() {
        let g = build_graph(
            &[meta("a", "1.0.0", &[("b", "*")], 1), meta("b", "1.0.0", &[("a", "*")], 1)],
            ResolutionPolicy::default(),
        );
        assert_eq!(names(&g.topo_order()), vec![vec!["a", "b"]]);
    }

    #[test]
    fn dev_deps_and_dangling_refs_are_not_edges() {
        let mut a = meta("a", "1.0.0", &[("b", "*"), ("ghost", "^1")], 1);
        a.declared_deps.push(DeclaredDep { name: "c".into(), constraint: "*".into(), kind: DepKind::Dev });
        let g = build_graph(&[a, meta("b", "1.0.0", &[], 1), meta("c", "1.0.0", &[], 1)], ResolutionPolicy::default());
        assert_eq!(g.edges().count(), 1);
        assert_eq!(g.warnings().len(), 1);
        assert!(g.warnings()[0].contains("ghost"));
    }

    #[test]
    fn pins_latest_satisfying_version() {
        let metas = [
            meta("app", "1.0.0", &[("lib", "^1.0.0")], 1),
            meta("lib", "1.2.0", &[], 1),
            meta("lib", "1.10.0", &[], 1),
            meta("lib", "2.0.0", &[], 1),
        ];
        let g = build_graph(&metas, ResolutionPolicy::LatestSatisfying);
        let deps = g.dependencies(&metas[0].coordinate).unwrap();
        assert_eq!(deps[0].version, "1.10.0");
        let g = build_graph(&metas, ResolutionPolicy::Latest);
        assert_eq!(g.dependencies(&metas[0].coordinate).unwrap()[0].version, "2.0.0");
    }

    #[test]
    fn reverse_deps_amplify_downloads() {
        let metas = [
            meta("x", "1.0.0", &[], 100),
            meta("y", "1.0.0", &[("x", "*")], 50),
            meta("z", "1.0.0", &[("x", "*")], 25),
            meta("leaf-user", "1.0.0", &[], 7),
        ];
        let g = build_graph(&metas, ResolutionPolicy::default());
        let r = g.reverse_deps(&metas[0].coordinate).unwrap();
        assert_eq!(r.dependents.len(), 2);
        assert_eq!(r.amplified_downloads, 175);
        assert_eq!(r.amplification_factor(), Some(0.75));
        let leaf = g.reverse_deps(&metas[3].coordinate).unwrap();
        assert!(leaf.dependents.is_empty());
        assert_eq!(leaf.amplified_downloads, 7);
        let missing = PackageCoordinate::new(Registry::Npm, "nope", "1").unwrap();
        assert_eq!(g.reverse_deps(&missing), Err(GraphError::NotInGraph(missing)));
    }

    #[test]
    fn document_round_trip_is_stable() {
        let metas = [meta("a", "1.0.0", &[("b", "*")], 3), meta("b", "1.0.0", &[("a", "*")], 4), meta("c", "1.0.0", &[("a", "*")], 5)];
        let g = build_graph(&metas, ResolutionPolicy::default());
        let json = g.to_json();
        let mut reversed = metas.to_vec();
        reversed.reverse();
        assert_eq!(json, build_graph(&reversed, ResolutionPolicy::default()).to_json());
        let doc: GraphDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(DependencyGraph::from_document(&doc).unwrap(), g);
    }
}
