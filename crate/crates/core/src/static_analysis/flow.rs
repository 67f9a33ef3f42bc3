//! Interprocedural source-to-sink tracking.
//!
//! Taint is tracked per variable, flow-insensitively, with weak updates.
//! Every function gets a summary (what its return value carries, which
//! parameters reach sinks); summaries are iterated to a fixpoint across all
//! units of the program. Calls into dependencies that are not part of the
//! program are resolved through their [`ExportSummary`] records instead.

use super::labels::{ApiCategory, ApiLabelSet, Confidence};
use super::parse::python_module_name;
use super::summary::{ExportKind, ExportSummary, ViaRef};
use super::tree::{Expr, NormalizedTree, Stmt};
use super::usage::{match_label, LabelMatch, Scope};
use super::{FlowEndpoint, FlowFinding, Location};
use crate::registry::SubjectLanguage;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

/// Export summaries of already-analyzed dependencies, keyed by the path
/// callers use.
/// A dependency's module key maps to its own exports when the module itself
/// is callable, and to an empty list otherwise, so calls into an analyzed
/// dependency without a summary are known to carry nothing.
pub type ExportIndex = BTreeMap<String, Vec<ExportSummary>>;

/// Adds an analyzed dependency's summaries under the name it is imported as.
pub fn index_exports(index: &mut ExportIndex, module_name: &str, exports: &[ExportSummary]) {
    index.entry(module_name.to_string()).or_default();
    for e in exports {
        index.entry(e.export_name.clone()).or_default().push(e.clone());
    }
}

/// One package taking part in a whole-program analysis.
#[derive(Debug, Clone)]
pub struct ProgramPackage<'a> {
    /// Name dependents import the package under.
    pub module_name: String,
    /// Entry unit for JavaScript, relative path without extension.
    pub main: String,
    pub units: Vec<&'a NormalizedTree>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProgramResult {
    pub flows: Vec<FlowFinding>,
    /// Summaries of the first package's exports.
    pub exports: Vec<ExportSummary>,
    /// The deadline passed before the fixpoint was reached.
    pub truncated: bool,
}

const LOCAL_PASSES: usize = 12;
const GLOBAL_PASSES: usize = 40;
const MAX_INLINE_DEPTH: usize = 8;
const EXPORT_RESOLVE_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct ApiKey {
    api: String,
    category: ApiCategory,
    via: Vec<String>,
    confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Origin {
    Source(ApiKey),
    Param(usize),
}

type Path = Vec<Location>;

/// Origins reaching a value, each with the first path found.
#[derive(Debug, Clone, Default, PartialEq)]
struct Taint(BTreeMap<Origin, Path>);

impl Taint {
    fn insert(&mut self, origin: Origin, path: Path) -> bool {
        match self.0.entry(origin) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(path);
                true
            }
            std::collections::btree_map::Entry::Occupied(_) => false,
        }
    }

    fn merge(&mut self, other: &Taint) -> bool {
        let mut changed = false;
        for (o, p) in &other.0 {
            changed |= self.insert(o.clone(), p.clone());
        }
        changed
    }

    fn hop(mut self, loc: &Location) -> Taint {
        for p in self.0.values_mut() {
            push_hop(p, loc);
        }
        self
    }
}

fn push_hop(path: &mut Path, loc: &Location) {
    if path.last() != Some(loc) {
        path.push(loc.clone());
    }
}

#[derive(Debug, Clone, Default)]
struct FnState {
    env: HashMap<String, Taint>,
    returns: Taint,
    param_sinks: BTreeMap<usize, BTreeMap<ApiKey, Path>>,
}

struct Unit<'a> {
    tree: &'a NormalizedTree,
    package: usize,
    scope: Scope,
    local_fns: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FnRef {
    unit: usize,
    func: usize,
}

enum Target<'l, 'd> {
    Program(FnRef),
    Deps(&'d [ExportSummary]),
    Label(LabelMatch<'l>),
    Unknown,
}

type FlowKey = (ApiKey, ApiKey, Option<Location>, Option<Location>);

struct Engine<'a, 'l, 'd> {
    units: Vec<Unit<'a>>,
    /// `(package scope for internal paths, key) -> function`.
    table: HashMap<(Option<usize>, String), FnRef>,
    labels: &'l ApiLabelSet,
    deps: &'d ExportIndex,
    states: Vec<Vec<FnState>>,
    flows: BTreeMap<FlowKey, Path>,
    changes: u64,
}

/// Runs the flow analysis over `packages` as one program. Calls that leave
/// the program are resolved against `dep_exports`, then against the labels.
pub fn analyze_program(
    packages: &[ProgramPackage<'_>],
    labels: &ApiLabelSet,
    dep_exports: &ExportIndex,
    deadline: Option<Instant>,
) -> ProgramResult {
    let mut engine = Engine::new(packages, labels, dep_exports);
    let truncated = !engine.run(deadline);
    ProgramResult { flows: engine.findings(), exports: engine.exports(), truncated }
}

fn strip_js_ext(path: &str) -> &str {
    [".js", ".cjs", ".mjs"].iter().find_map(|e| path.strip_suffix(e)).unwrap_or(path)
}

/// Keys under which a unit's module object is reachable, each with the
/// package scope it is visible in (`None` for every package).
fn module_keys(unit: &NormalizedTree, pkg_idx: usize, pkg: &ProgramPackage<'_>) -> Vec<(Option<usize>, String)> {
    match unit.language {
        SubjectLanguage::Js => {
            let rel = strip_js_ext(&unit.path);
            let mut keys = vec![(Some(pkg_idx), format!("~/{rel}")), (None, format!("{}/{rel}", pkg.module_name))];
            if let Some(dir) = rel.strip_suffix("/index") {
                keys.push((Some(pkg_idx), format!("~/{dir}")));
            }
            if rel == pkg.main.trim_start_matches("./") {
                keys.push((None, pkg.module_name.clone()));
            }
            keys
        }
        SubjectLanguage::Py => vec![(None, python_module_name(&unit.path))],
        SubjectLanguage::Rb => vec![(None, String::new())],
    }
}

fn join_key(module: &str, name: &str) -> String {
    match (module.is_empty(), name.is_empty()) {
        (_, true) => module.to_string(),
        (true, false) => name.to_string(),
        (false, false) => format!("{module}.{name}"),
    }
}

fn last_segment(name: &str) -> &str {
    name.rsplit(['.', '#']).next().unwrap_or(name)
}

impl<'a, 'l, 'd> Engine<'a, 'l, 'd> {
    fn new(packages: &[ProgramPackage<'a>], labels: &'l ApiLabelSet, deps: &'d ExportIndex) -> Self {
        let mut units = Vec::new();
        for (pi, pkg) in packages.iter().enumerate() {
            for tree in &pkg.units {
                let mut local_fns = HashMap::new();
                for (i, f) in tree.functions.iter().enumerate().skip(1) {
                    if f.name.is_empty() {
                        continue;
                    }
                    local_fns.entry(f.name.clone()).or_insert(i);
                    if tree.language == SubjectLanguage::Rb {
                        local_fns.entry(last_segment(&f.name).to_string()).or_insert(i);
                    }
                }
                units.push(Unit { tree, package: pi, scope: Scope::of(tree), local_fns });
            }
        }
        let states = units.iter().map(|u| vec![FnState::default(); u.tree.functions.len()]).collect();
        let mut engine = Engine { units, table: HashMap::new(), labels, deps, states, flows: BTreeMap::new(), changes: 0 };
        engine.build_table(packages);
        engine
    }

    fn build_table(&mut self, packages: &[ProgramPackage<'_>]) {
        let mut pending = Vec::new();
        for (ui, unit) in self.units.iter().enumerate() {
            let keys = module_keys(unit.tree, unit.package, &packages[unit.package]);
            for export in &unit.tree.exports {
                for (scope, module) in &keys {
                    pending.push(((*scope, join_key(module, &export.name)), ui, &export.value));
                }
            }
        }
        // Re-exports may point at exports of other units; resolve in rounds.
        for _ in 0..EXPORT_RESOLVE_DEPTH {
            let mut progressed = false;
            pending.retain(|(key, ui, value)| match self.export_target(*ui, value) {
                Some(target) => {
                    self.table.entry(key.clone()).or_insert(target);
                    progressed = true;
                    false
                }
                None => true,
            });
            if !progressed {
                break;
            }
        }
    }

    fn export_target(&self, ui: usize, value: &Expr) -> Option<FnRef> {
        let unit = &self.units[ui];
        match value {
            Expr::Lambda(i) => Some(FnRef { unit: ui, func: *i }),
            Expr::Name(n) if unit.local_fns.contains_key(n) && !unit.scope.aliases.contains_key(n) => {
                Some(FnRef { unit: ui, func: unit.local_fns[n] })
            }
            other => {
                let path = unit.scope.static_path(other)?;
                self.lookup(unit.package, &path)
            }
        }
    }

    fn lookup(&self, package: usize, path: &str) -> Option<FnRef> {
        let scope = path.starts_with("~/").then_some(package);
        self.table.get(&(scope, path.to_string())).copied()
    }

    fn resolve(&self, ui: usize, callee: &Expr) -> Target<'l, 'd> {
        let unit = &self.units[ui];
        if let Expr::Name(n) = callee {
            if !unit.scope.aliases.contains_key(n) {
                if let Some(&func) = unit.local_fns.get(n) {
                    return Target::Program(FnRef { unit: ui, func });
                }
            }
        }
        if let Expr::Attr(obj, method) = callee {
            if matches!(obj.as_ref(), Expr::Name(n) if n == "self" || n == "this") {
                let local = unit.local_fns.iter().filter(|(k, _)| last_segment(k) == method).map(|(_, &v)| v).min();
                if let Some(func) = local {
                    return Target::Program(FnRef { unit: ui, func });
                }
            }
        }
        if let Some(path) = unit.scope.static_path(callee) {
            if let Some(f) = self.lookup(unit.package, &path) {
                return Target::Program(f);
            }
            if let Some(list) = self.deps.get(&path) {
                return Target::Deps(list);
            }
            let mut prefix = path.as_str();
            while let Some(cut) = prefix.rfind(['.', '/']) {
                prefix = &prefix[..cut];
                if self.deps.contains_key(prefix) {
                    return Target::Deps(&[]);
                }
            }
        }
        match match_label(callee, &unit.scope, self.labels, unit.tree.language) {
            Some(m) => Target::Label(m),
            None => Target::Unknown,
        }
    }

    /// Returns false when the deadline cut the fixpoint short.
    fn run(&mut self, deadline: Option<Instant>) -> bool {
        for _ in 0..GLOBAL_PASSES {
            let before = self.changes;
            for ui in 0..self.units.len() {
                for fi in 0..self.units[ui].tree.functions.len() {
                    self.analyze_fn(FnRef { unit: ui, func: fi });
                }
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    return false;
                }
            }
            if self.changes == before {
                return true;
            }
        }
        tracing::debug!("flow fixpoint pass limit reached");
        true
    }

    fn analyze_fn(&mut self, f: FnRef) {
        let tree = self.units[f.unit].tree;
        let func = &tree.functions[f.func];
        let mut st = std::mem::take(&mut self.states[f.unit][f.func]);
        let at = Location { file: tree.path.clone(), line: func.line };
        for (i, p) in func.params.iter().enumerate() {
            if st.env.entry(p.clone()).or_default().insert(Origin::Param(i), vec![at.clone()]) {
                self.changes += 1;
            }
        }
        for _ in 0..LOCAL_PASSES {
            let before = self.changes;
            for s in &func.body {
                self.stmt(f, &mut st, s, 0, false);
            }
            if self.changes == before {
                break;
            }
        }
        self.states[f.unit][f.func] = st;
    }

    fn loc(&self, f: FnRef, line: u32) -> Location {
        Location { file: self.units[f.unit].tree.path.clone(), line }
    }

    fn stmt(&mut self, f: FnRef, st: &mut FnState, s: &Stmt, depth: usize, in_callback: bool) {
        let loc = self.loc(f, s.line());
        match s {
            Stmt::Assign { target, value, .. } => {
                let t = self.eval(f, st, value, depth).hop(&loc);
                if st.env.entry(target.clone()).or_default().merge(&t) {
                    self.changes += 1;
                }
            }
            Stmt::Expr { value, .. } => {
                self.eval(f, st, value, depth);
            }
            Stmt::Return { value, .. } => {
                let t = self.eval(f, st, value, depth).hop(&loc);
                if !in_callback && st.returns.merge(&t) {
                    self.changes += 1;
                }
            }
        }
    }

    fn lookup_var(&self, f: FnRef, st: &FnState, name: &str) -> Taint {
        if let Some(t) = st.env.get(name) {
            return t.clone();
        }
        if f.func != 0 {
            if let Some(t) = self.states[f.unit][0].env.get(name) {
                return t.clone();
            }
        }
        Taint::default()
    }

    fn eval(&mut self, f: FnRef, st: &mut FnState, e: &Expr, depth: usize) -> Taint {
        match e {
            Expr::Name(n) => self.lookup_var(f, st, n),
            Expr::Attr(obj, _) => self.eval(f, st, obj, depth),
            Expr::Group(parts) => {
                let mut t = Taint::default();
                for p in parts {
                    let pt = self.eval(f, st, p, depth);
                    t.merge(&pt);
                }
                t
            }
            Expr::Call { callee, args, line } => self.call(f, st, callee, args, *line, depth),
            Expr::Literal(_) | Expr::Lambda(_) | Expr::ModuleRef(_) | Expr::Unknown => Taint::default(),
        }
    }

    fn call(&mut self, f: FnRef, st: &mut FnState, callee: &Expr, args: &[Expr], line: u32, depth: usize) -> Taint {
        let loc = self.loc(f, line);
        let arg_t: Vec<Taint> = args.iter().map(|a| self.eval(f, st, a, depth)).collect();
        let recv_t = match callee {
            Expr::Attr(obj, _) => self.eval(f, st, obj, depth),
            Expr::Call { .. } | Expr::Group(_) => self.eval(f, st, callee, depth),
            _ => Taint::default(),
        };
        let mut result = Taint::default();
        let mut sourced = Taint::default();
        match self.resolve(f.unit, callee) {
            Target::Program(g) => {
                let callee_state = if g == f { &*st } else { &self.states[g.unit][g.func] };
                let returns = callee_state.returns.clone();
                let param_sinks = callee_state.param_sinks.clone();
                for (origin, path) in returns.0 {
                    match origin {
                        Origin::Source(_) => {
                            let mut p = path;
                            push_hop(&mut p, &loc);
                            sourced.insert(origin.clone(), p.clone());
                            result.insert(origin, p);
                        }
                        Origin::Param(i) => {
                            if let Some(t) = arg_t.get(i) {
                                result.merge(&t.clone().hop(&loc));
                            }
                        }
                    }
                }
                for (i, sinks) in param_sinks {
                    let Some(t) = arg_t.get(i) else { continue };
                    for (sink, tail) in sinks {
                        for (origin, path) in &t.0 {
                            self.report(st, origin, path, &loc, &tail, &sink);
                        }
                    }
                }
            }
            Target::Deps(list) => {
                for export in list {
                    match export.kind {
                        ExportKind::IndirectSource => {
                            for v in &export.via {
                                let key = via_key(&export.export_name, v);
                                sourced.insert(Origin::Source(key.clone()), vec![loc.clone()]);
                                result.insert(Origin::Source(key), vec![loc.clone()]);
                            }
                        }
                        ExportKind::Propagator => {
                            for &pos in &export.argument_positions {
                                if let Some(t) = arg_t.get(pos) {
                                    result.merge(&t.clone().hop(&loc));
                                }
                            }
                        }
                        ExportKind::IndirectSink => {
                            for v in &export.via {
                                let Some(t) = v.position.and_then(|p| arg_t.get(p)) else { continue };
                                let sink = via_key(&export.export_name, v);
                                for (origin, path) in &t.0 {
                                    self.report(st, origin, path, &loc, &[], &sink);
                                }
                            }
                        }
                    }
                }
            }
            Target::Label(m) => {
                let key = ApiKey {
                    api: m.label.qualified_name.clone(),
                    category: m.label.category,
                    via: Vec::new(),
                    confidence: m.confidence,
                };
                if m.label.is_sink() {
                    for t in &arg_t {
                        for (origin, path) in &t.0 {
                            self.report(st, origin, path, &loc, &[], &key);
                        }
                    }
                }
                if m.label.is_source() {
                    sourced.insert(Origin::Source(key.clone()), vec![loc.clone()]);
                    result.insert(Origin::Source(key), vec![loc.clone()]);
                }
                for t in &arg_t {
                    result.merge(&t.clone().hop(&loc));
                }
                result.merge(&recv_t.clone().hop(&loc));
            }
            Target::Unknown => {
                for t in &arg_t {
                    result.merge(&t.clone().hop(&loc));
                }
                result.merge(&recv_t.clone().hop(&loc));
            }
        }
        // Callbacks receive whatever the call produced or was invoked on.
        let mut cb = sourced;
        cb.merge(&recv_t.hop(&loc));
        for a in args {
            if let Expr::Lambda(idx) = a {
                self.inline_lambda(f, st, *idx, &cb, depth + 1);
            }
        }
        result
    }

    fn inline_lambda(&mut self, f: FnRef, st: &mut FnState, idx: usize, bound: &Taint, depth: usize) {
        if depth > MAX_INLINE_DEPTH {
            return;
        }
        let tree = self.units[f.unit].tree;
        let Some(func) = tree.functions.get(idx) else { return };
        for p in &func.params {
            if st.env.entry(p.clone()).or_default().merge(bound) {
                self.changes += 1;
            }
        }
        for s in &func.body {
            self.stmt(f, st, s, depth, true);
        }
    }

    /// Records that `origin`, having travelled `path`, reaches `sink` at
    /// `call`, followed by `tail` inside the callee.
    fn report(&mut self, st: &mut FnState, origin: &Origin, path: &Path, call: &Location, tail: &[Location], sink: &ApiKey) {
        let mut full = path.clone();
        push_hop(&mut full, call);
        for l in tail {
            push_hop(&mut full, l);
        }
        match origin {
            Origin::Source(source) => {
                let key = (source.clone(), sink.clone(), full.first().cloned(), full.last().cloned());
                if let std::collections::btree_map::Entry::Vacant(v) = self.flows.entry(key) {
                    v.insert(full);
                    self.changes += 1;
                }
            }
            Origin::Param(j) => {
                let mut rest = vec![call.clone()];
                for l in tail {
                    push_hop(&mut rest, l);
                }
                if let std::collections::btree_map::Entry::Vacant(v) = st.param_sinks.entry(*j).or_default().entry(sink.clone()) {
                    v.insert(rest);
                    self.changes += 1;
                }
            }
        }
    }

    fn findings(&self) -> Vec<FlowFinding> {
        let mut out: Vec<FlowFinding> = self
            .flows
            .iter()
            .map(|((src, sink, _, _), path)| FlowFinding {
                source: FlowEndpoint { api: src.api.clone(), category: src.category, via: src.via.clone() },
                sink: FlowEndpoint { api: sink.api.clone(), category: sink.category, via: sink.via.clone() },
                source_category: src.category,
                sink_category: sink.category,
                confidence: src.confidence.min(sink.confidence),
                path: path.clone(),
            })
            .collect();
        out.sort();
        out
    }

    fn exports(&self) -> Vec<ExportSummary> {
        let mut out = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for (key, target) in &self.table {
            let unit = &self.units[target.unit];
            if unit.package != 0 || key.0.is_some() || !seen.insert(key.1.clone()) {
                continue;
            }
            let st = &self.states[target.unit][target.func];
            out.extend(summarize(&key.1, st));
        }
        out.into_iter().collect()
    }
}

fn via_key(export: &str, v: &ViaRef) -> ApiKey {
    let mut via = vec![export.to_string()];
    via.extend(v.chain.iter().cloned());
    ApiKey { api: v.api.clone(), category: v.category, via, confidence: v.confidence }
}

fn to_via(key: &ApiKey, position: Option<usize>) -> ViaRef {
    ViaRef { api: key.api.clone(), category: key.category, chain: key.via.clone(), confidence: key.confidence, position }
}

fn summarize(name: &str, st: &FnState) -> Vec<ExportSummary> {
    let mut out = Vec::new();
    let sources: BTreeSet<ViaRef> = st
        .returns
        .0
        .keys()
        .filter_map(|o| match o {
            Origin::Source(k) => Some(to_via(k, None)),
            Origin::Param(_) => None,
        })
        .collect();
    if !sources.is_empty() {
        out.push(ExportSummary {
            export_name: name.to_string(),
            kind: ExportKind::IndirectSource,
            via: sources.into_iter().collect(),
            argument_positions: Vec::new(),
        });
    }
    let propagated: Vec<usize> = st
        .returns
        .0
        .keys()
        .filter_map(|o| match o {
            Origin::Param(i) => Some(*i),
            Origin::Source(_) => None,
        })
        .collect();
    if !propagated.is_empty() {
        out.push(ExportSummary {
            export_name: name.to_string(),
            kind: ExportKind::Propagator,
            via: Vec::new(),
            argument_positions: propagated,
        });
    }
    if !st.param_sinks.is_empty() {
        let via: BTreeSet<ViaRef> =
            st.param_sinks.iter().flat_map(|(i, sinks)| sinks.keys().map(move |k| to_via(k, Some(*i)))).collect();
        out.push(ExportSummary {
            export_name: name.to_string(),
            kind: ExportKind::IndirectSink,
            via: via.into_iter().collect(),
            argument_positions: st.param_sinks.keys().copied().collect(),
        });
    }
    out
}
