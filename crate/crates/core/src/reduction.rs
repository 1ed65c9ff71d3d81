//! Removal of non-minority pairs: reachability sets over triples `(y; a1^k, a2)`,
//! small and big sub-instances, the global possible-image store and the
//! DFS that rewrites `f`.
//!
//! A triple `(y, a1, a2)` stands for the argument `(a1, .., a1, a2)` of `f` at `y`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::chom::{validate_all, ConsistentHom, Violation};
use crate::consistency::{preprocess, EmptyListSignal, ListAssignment};
use crate::digraph::Digraph;
use crate::valueset::ValueSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PickOrder {
    /// Smallest `(x, a, b)` first.
    #[default]
    Lexicographic,
    /// Largest vertex first, then smallest `(a, b)`.
    ReverseVertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValidateFrequency {
    /// After every outer iteration and after the update of `f` that follows the
    /// big instance, at every depth, and on entering each sub-instance.
    Every,
    /// After preprocessing and after every top-level outer iteration.
    #[default]
    Boundaries,
    Off,
}

/// Deliberate corruption used to check that the validators notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fault {
    /// The `nth` retargeted tuple (0-based, over the whole run, skipping tuples
    /// about to be masked away) gets a value other than the old and new one,
    /// outside the list when possible.
    CorruptRetarget { nth: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmConfig {
    pub pick_order: PickOrder,
    /// Total outer iterations over all depths.
    pub step_budget: u64,
    pub validate: ValidateFrequency,
    pub fault: Option<Fault>,
}

impl Default for NmConfig {
    fn default() -> Self {
        NmConfig { pick_order: PickOrder::default(), step_budget: 200_000, validate: ValidateFrequency::default(), fault: None }
    }
}

/// The internal claim that failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimCheck {
    /// `f` stopped being a homomorphism consistent with the lists.
    Validator,
    /// The small instance does not have `L'(x) = {c}`.
    SmallInstanceRoot,
    /// A constructed sub-instance has an empty pair list.
    PairListEmpty,
    /// No `d` in some `P_l^t(x, a)` with `P_l(x, d) = {d}`.
    RootMissing,
    /// Preprocessing of the big instance emptied a list.
    BigInstanceEmpty,
    /// The big instance still has `a` in `L'(x)`.
    BigInstanceKeepsA,
    /// After `f` was updated some tuple at `x` still maps to `a`.
    ValueSurvives,
    /// Preprocessing inside a recursive call emptied a list.
    SubInstanceEmpty,
    /// Recursion deeper than the initial total list size.
    DepthGuard,
    /// Closure or restriction failed on data that should be well formed.
    Internal,
}

impl fmt::Display for ClaimCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Falsification {
    pub check: ClaimCheck,
    pub depth: usize,
    /// Vertex of the top-level instance the failure is about, if any.
    pub vertex: Option<usize>,
    pub detail: String,
    pub witness: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NmOutcome {
    /// Minority condition reached on every list.
    Done,
    /// Preprocessing at the top level emptied a list.
    NoHomomorphism(EmptyListSignal),
    Falsified(Falsification),
    BudgetExhausted,
}

/// Trace events; vertex ids are those of the top-level instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NmEvent {
    WhilePick { depth: usize, x: usize, a: usize, b: usize, c: usize },
    SmallInstanceBuilt { depth: usize, vertices: usize, list_total: usize },
    BigInstanceBuilt { depth: usize, vertices: usize, list_total: usize },
    RecursionEnter { depth: usize },
    RecursionExit { depth: usize },
    UpdateFRun { depth: usize, x: usize, a: usize, root: usize, mutations: usize },
    /// Entry change of the top-level `f`.
    Mutation { x: usize, tuple: usize, old: usize, new: usize },
    Removed { depth: usize, x: usize, a: usize },
    PreprocessRun { depth: usize, unary_removed: usize, pairs_removed: usize },
    Falsified { depth: usize, check: ClaimCheck },
}

impl NmEvent {
    pub fn to_line(&self) -> String {
        use NmEvent::*;
        match self {
            WhilePick { depth, x, a, b, c } => format!("WhilePick\t{depth}\t{x}\t{a}\t{b}\t{c}"),
            SmallInstanceBuilt { depth, vertices, list_total } => {
                format!("SmallInstanceBuilt\t{depth}\t{vertices}\t{list_total}")
            }
            BigInstanceBuilt { depth, vertices, list_total } => {
                format!("BigInstanceBuilt\t{depth}\t{vertices}\t{list_total}")
            }
            RecursionEnter { depth } => format!("RecursionEnter\t{depth}"),
            RecursionExit { depth } => format!("RecursionExit\t{depth}"),
            UpdateFRun { depth, x, a, root, mutations } => format!("UpdateFRun\t{depth}\t{x}\t{a}\t{root}\t{mutations}"),
            Mutation { x, tuple, old, new } => format!("Mutation\t{x}\t{tuple}\t{old}\t{new}"),
            Removed { depth, x, a } => format!("Removed\t{depth}\t{x}\t{a}"),
            PreprocessRun { depth, unary_removed, pairs_removed } => {
                format!("PreprocessRun\t{depth}\t{unary_removed}\t{pairs_removed}")
            }
            Falsified { depth, check } => format!("Falsified\t{depth}\t{check}"),
        }
    }

    pub fn from_line(line: &str) -> Result<NmEvent, String> {
        use NmEvent::*;
        let mut parts = line.split('\t');
        let name = parts.next().ok_or("empty line")?;
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<usize, String> {
            rest.get(i).ok_or(format!("{name}: missing field {i}"))?.parse().map_err(|_| format!("{name}: bad field {i}"))
        };
        let want = |n: usize| -> Result<(), String> {
            if rest.len() == n {
                Ok(())
            } else {
                Err(format!("{name}: expected {n} fields, got {}", rest.len()))
            }
        };
        let ev = match name {
            "WhilePick" => {
                want(5)?;
                WhilePick { depth: num(0)?, x: num(1)?, a: num(2)?, b: num(3)?, c: num(4)? }
            }
            "SmallInstanceBuilt" => {
                want(3)?;
                SmallInstanceBuilt { depth: num(0)?, vertices: num(1)?, list_total: num(2)? }
            }
            "BigInstanceBuilt" => {
                want(3)?;
                BigInstanceBuilt { depth: num(0)?, vertices: num(1)?, list_total: num(2)? }
            }
            "RecursionEnter" => {
                want(1)?;
                RecursionEnter { depth: num(0)? }
            }
            "RecursionExit" => {
                want(1)?;
                RecursionExit { depth: num(0)? }
            }
            "UpdateFRun" => {
                want(5)?;
                UpdateFRun { depth: num(0)?, x: num(1)?, a: num(2)?, root: num(3)?, mutations: num(4)? }
            }
            "Mutation" => {
                want(4)?;
                Mutation { x: num(0)?, tuple: num(1)?, old: num(2)?, new: num(3)? }
            }
            "Removed" => {
                want(3)?;
                Removed { depth: num(0)?, x: num(1)?, a: num(2)? }
            }
            "PreprocessRun" => {
                want(3)?;
                PreprocessRun { depth: num(0)?, unary_removed: num(1)?, pairs_removed: num(2)? }
            }
            "Falsified" => {
                want(2)?;
                let check: ClaimCheck = serde_json::from_value(serde_json::Value::String(rest[1].to_string()))
                    .map_err(|_| format!("unknown check `{}`", rest[1]))?;
                Falsified { depth: num(0)?, check }
            }
            other => return Err(format!("unknown event `{other}`")),
        };
        Ok(ev)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NmTrace {
    pub events: Vec<NmEvent>,
}

impl NmTrace {
    /// Tab-separated event log with a `# key value` header.
    pub fn to_text(&self, header: &[(&str, String)]) -> String {
        let mut s = String::from("# nmtrace v1\n");
        for (k, v) in header {
            writeln!(s, "# {k} {v}").unwrap();
        }
        for e in &self.events {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output; returns the header pairs and the trace.
    pub fn from_text(text: &str) -> Result<(Vec<(String, String)>, NmTrace), String> {
        let mut lines = text.lines();
        if lines.next() != Some("# nmtrace v1") {
            return Err("missing `# nmtrace v1` header".into());
        }
        let mut header = Vec::new();
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            if let Some(h) = line.strip_prefix("# ") {
                let (k, v) = h.split_once(' ').unwrap_or((h, ""));
                header.push((k.to_string(), v.to_string()));
            } else if !line.is_empty() {
                events.push(NmEvent::from_line(line).map_err(|e| format!("line {}: {e}", i + 2))?);
            }
        }
        Ok((header, NmTrace { events }))
    }
}

/// Where an injected fault landed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub depth: usize,
    pub vertex: usize,
    pub tuple: usize,
    pub intended: usize,
    pub written: usize,
    /// The written value lies outside the list of the vertex.
    pub outside_list: bool,
}

#[derive(Debug, Clone)]
pub struct NmRun {
    pub outcome: NmOutcome,
    pub trace: NmTrace,
    pub iterations: u64,
    pub validations: u64,
    pub fault: Option<FaultRecord>,
}

/// The `P_l` lists, keyed by top-level vertex and value.
#[derive(Debug, Clone)]
pub struct PlStore {
    h: usize,
    sets: Vec<ValueSet>,
}

impl PlStore {
    pub fn new(g_size: usize, h_size: usize) -> Self {
        PlStore { h: h_size, sets: vec![ValueSet::EMPTY; g_size * h_size] }
    }

    pub fn get(&self, y: usize, a: usize) -> ValueSet {
        self.sets[y * self.h + a]
    }

    pub fn set(&mut self, y: usize, a: usize, s: ValueSet) {
        self.sets[y * self.h + a] = s;
    }

    /// `P_l(y, S)`, the union over `S`.
    pub fn image(&self, y: usize, s: ValueSet) -> ValueSet {
        s.iter().fold(ValueSet::EMPTY, |acc, a| acc | self.get(y, a))
    }

    /// `P_l^t(y, a)`.
    pub fn iterate(&self, y: usize, a: usize, t: usize) -> ValueSet {
        let mut s = ValueSet::singleton(a);
        for _ in 0..t {
            s = self.image(y, s);
        }
        s
    }

    /// Union of `P_l^i(y, a)` over all `i >= 1`.
    pub fn reach(&self, y: usize, a: usize) -> ValueSet {
        let mut seen = self.get(y, a);
        let mut frontier = seen;
        while !frontier.is_empty() {
            let next = self.image(y, frontier) & !seen;
            seen |= next;
            frontier = next;
        }
        seen
    }

    pub fn is_fixed(&self, y: usize, d: usize) -> bool {
        self.get(y, d) == ValueSet::singleton(d)
    }
}

/// One level of the recursion: a digraph with its lists and `f`, plus the
/// map from its vertices to top-level vertices.
#[derive(Debug, Clone)]
pub struct NmInstance {
    pub g: Digraph,
    pub root: Vec<usize>,
    pub lists: ListAssignment,
    pub f: ConsistentHom,
}

/// Triples `(y, a1, a2)` reachable from the root, in BFS order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachableSets {
    pub gl: Vec<(usize, usize, usize)>,
    pub glr: Vec<(usize, usize, usize)>,
}

/// `G_L(w)` and `G^r_L(w)` for `w = (x; b^k, a)`. A triple `(y, a1, a2)` needs
/// `a1, a2 in L(y)` and `(b, a1) in L(x, y)`; for `G^r_L` also `(a, a2) in L(x, y)`.
/// Both are grown by BFS through triples passing their filter.
pub fn build_reachable(g: &Digraph, h: &Digraph, lists: &ListAssignment, x: usize, a: usize, b: usize) -> ReachableSets {
    let gl = bfs_triples(g, h, lists, (x, b, a), |y, a1, _| lists.pair_allowed(x, y, b, a1));
    let glr = bfs_triples(g, h, lists, (x, b, a), |y, a1, a2| {
        lists.pair_allowed(x, y, b, a1) && lists.pair_allowed(x, y, a, a2)
    });
    ReachableSets { gl, glr }
}

fn bfs_triples(
    g: &Digraph,
    h: &Digraph,
    lists: &ListAssignment,
    start: (usize, usize, usize),
    admit: impl Fn(usize, usize, usize) -> bool,
) -> Vec<(usize, usize, usize)> {
    let hs = h.n();
    let mut seen = vec![false; g.n() * hs * hs];
    let id = |(y, a1, a2): (usize, usize, usize)| (y * hs + a1) * hs + a2;
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    seen[id(start)] = true;
    queue.push_back(start);
    while let Some((y, a1, a2)) = queue.pop_front() {
        order.push((y, a1, a2));
        for (fwd, nbrs) in [(true, g.out_neighbors(y)), (false, g.in_neighbors(y))] {
            for &z in nbrs {
                let lz = lists.list(z);
                let (s1, s2) = if fwd { (h.out_set(a1), h.out_set(a2)) } else { (h.in_set(a1), h.in_set(a2)) };
                for d1 in s1 & lz {
                    for d2 in s2 & lz {
                        let t = (z, d1, d2);
                        if !seen[id(t)] && admit(z, d1, d2) {
                            seen[id(t)] = true;
                            queue.push_back(t);
                        }
                    }
                }
            }
        }
    }
    order
}

fn nm_args(k: usize, a1: usize, a2: usize) -> Vec<usize> {
    let mut t = vec![a1; k];
    t[k - 1] = a2;
    t
}

struct Stop(StopKind);

enum StopKind {
    Empty(EmptyListSignal),
    Falsified(Falsification),
    Budget,
}

type Step<T> = Result<T, Stop>;

struct Engine<'a> {
    h: &'a Digraph,
    cfg: &'a NmConfig,
    k: usize,
    pl: PlStore,
    trace: NmTrace,
    iterations: u64,
    validations: u64,
    depth_limit: usize,
    retargets: u64,
    fault: Option<FaultRecord>,
}

impl<'a> Engine<'a> {
    fn falsify(&mut self, check: ClaimCheck, depth: usize, vertex: Option<usize>, detail: String) -> Stop {
        self.falsify_with(check, depth, vertex, detail, None)
    }

    fn falsify_with(
        &mut self,
        check: ClaimCheck,
        depth: usize,
        vertex: Option<usize>,
        detail: String,
        witness: Option<Violation>,
    ) -> Stop {
        self.trace.events.push(NmEvent::Falsified { depth, check });
        Stop(StopKind::Falsified(Falsification { check, depth, vertex, detail, witness }))
    }

    fn validate(&mut self, inst: &NmInstance, depth: usize, when: &str) -> Step<()> {
        self.validations += 1;
        let report = validate_all(&inst.f, &inst.g, self.h, inst.lists.lists());
        if report.is_ok() {
            return Ok(());
        }
        // witnesses are reported in top-level vertex ids
        let witness = report.violations.into_iter().next().map(|v| relabel(v, &inst.root));
        let vertex = witness.as_ref().map(|w| match w {
            Violation::Undefined { x, .. }
            | Violation::List { x, .. }
            | Violation::Adjacency { x, .. }
            | Violation::WeakNu { x, .. } => *x,
        });
        Err(self.falsify_with(ClaimCheck::Validator, depth, vertex, format!("validation failed {when}"), witness))
    }

    fn should_validate(&self, depth: usize) -> bool {
        match self.cfg.validate {
            ValidateFrequency::Every => true,
            ValidateFrequency::Boundaries => depth == 0,
            ValidateFrequency::Off => false,
        }
    }

    fn pick(&self, inst: &NmInstance) -> Option<(usize, usize, usize, usize)> {
        let n = inst.g.n();
        let xs: Vec<usize> = match self.cfg.pick_order {
            PickOrder::Lexicographic => (0..n).collect(),
            PickOrder::ReverseVertex => (0..n).rev().collect(),
        };
        for x in xs {
            let l = inst.lists.list(x);
            if l.len() < 2 {
                continue;
            }
            for a in l {
                let mut has_a = None;
                // b = a included: f(x; a, .., a) != a also counts
                for b in l {
                    let Some(c) = inst.f.get_nm(x, b, a) else { continue };
                    if c == a {
                        continue;
                    }
                    if *has_a.get_or_insert_with(|| inst.f.has_value(x, a)) {
                        return Some((x, a, b, c));
                    }
                    break;
                }
            }
        }
        None
    }

    fn remove_nm(&mut self, inst: &mut NmInstance, depth: usize) -> Step<()> {
        while let Some((x, a, b, c)) = self.pick(inst) {
            self.iterations += 1;
            if self.iterations > self.cfg.step_budget {
                return Err(Stop(StopKind::Budget));
            }
            let rx = inst.root[x];
            self.trace.events.push(NmEvent::WhilePick { depth, x: rx, a, b, c });
            let before = inst.lists.total_size();

            let reach = build_reachable(&inst.g, self.h, &inst.lists, x, a, b);

            let mut small = self.small_instance(inst, &reach, x, c, depth)?;
            self.recurse(&mut small, depth)?;
            self.reset_fixed(&small);
            let retargets = self.update_f(inst, x, a, depth)?;

            let mut big = self.big_instance(inst, &reach, x, a, &retargets, depth)?;
            self.recurse(&mut big, depth)?;
            self.reset_fixed(&big);
            self.update_f(inst, x, a, depth)?;
            if self.cfg.validate == ValidateFrequency::Every {
                self.validate(inst, depth, "after updating f")?;
            }

            if inst.f.has_value(x, a) {
                return Err(self.falsify(
                    ClaimCheck::ValueSurvives,
                    depth,
                    Some(rx),
                    format!("a tuple at vertex {rx} still maps to {a}"),
                ));
            }
            inst.lists.remove_value(x, a);
            self.trace.events.push(NmEvent::Removed { depth, x: rx, a });
            match preprocess(&inst.g, self.h, &mut inst.lists) {
                Ok(r) => {
                    self.trace.events.push(NmEvent::PreprocessRun {
                        depth,
                        unary_removed: r.unary.len(),
                        pairs_removed: r.pairs,
                    });
                }
                Err(sig) if depth == 0 => {
                    self.trace.events.push(NmEvent::PreprocessRun { depth, unary_removed: 0, pairs_removed: 0 });
                    return Err(Stop(StopKind::Empty(sig)));
                }
                Err(sig) => {
                    return Err(self.falsify(
                        ClaimCheck::SubInstanceEmpty,
                        depth,
                        Some(rx),
                        format!("preprocessing after removing {a} from vertex {rx} signalled {sig}"),
                    ));
                }
            }
            inst.f.mask_to(inst.lists.lists());
            debug_assert!(inst.lists.total_size() < before);
            if self.should_validate(depth) {
                self.validate(inst, depth, "after an outer iteration")?;
            }
        }
        Ok(())
    }

    fn recurse(&mut self, sub: &mut NmInstance, depth: usize) -> Step<()> {
        if depth + 1 > self.depth_limit {
            return Err(self.falsify(
                ClaimCheck::DepthGuard,
                depth,
                None,
                format!("recursion depth exceeds {}", self.depth_limit),
            ));
        }
        self.trace.events.push(NmEvent::RecursionEnter { depth: depth + 1 });
        if self.cfg.validate == ValidateFrequency::Every {
            self.validate(sub, depth + 1, "on entering a sub-instance")?;
        }
        self.remove_nm(sub, depth + 1)?;
        self.trace.events.push(NmEvent::RecursionExit { depth: depth + 1 });
        Ok(())
    }

    /// `P_l(y, d) = {d}` for every surviving `d` of the finished sub-instance.
    fn reset_fixed(&mut self, sub: &NmInstance) {
        for (i, &ry) in sub.root.iter().enumerate() {
            for d in sub.lists.list(i) {
                self.pl.set(ry, d, ValueSet::singleton(d));
            }
        }
    }

    fn closure_lists(&mut self, inst: &NmInstance, verts: &[usize], seeds: &[ValueSet], depth: usize) -> Step<Vec<ValueSet>> {
        let mut out = Vec::with_capacity(verts.len());
        for (&y, &e) in verts.iter().zip(seeds) {
            match inst.f.f_closure(y, e) {
                Ok(c) => out.push(c.closed_list),
                Err(err) => {
                    return Err(self.falsify(ClaimCheck::Internal, depth, Some(inst.root[y]), err.to_string()));
                }
            }
        }
        Ok(out)
    }

    fn sub_instance(
        &mut self,
        inst: &NmInstance,
        verts: &[usize],
        lists: Vec<ValueSet>,
        depth: usize,
    ) -> Step<NmInstance> {
        let f = match inst.f.restrict(verts, &lists) {
            Ok(f) => f,
            Err(err) => {
                let rx = match &err {
                    crate::chom::ChomError::NotClosed { x, .. } | crate::chom::ChomError::NotSublist { x } => {
                        Some(inst.root[*x])
                    }
                    _ => None,
                };
                return Err(self.falsify(ClaimCheck::Internal, depth, rx, err.to_string()));
            }
        };
        Ok(NmInstance {
            g: inst.g.induced(verts),
            root: verts.iter().map(|&v| inst.root[v]).collect(),
            lists: inst.lists.sub_assignment(verts, lists),
            f,
        })
    }

    fn check_pairs_nonempty(&mut self, sub: &NmInstance, depth: usize, which: &str) -> Step<()> {
        let Some(p) = sub.lists.pairs() else { return Ok(()) };
        let n = sub.g.n();
        for i in 0..n {
            for j in 0..n {
                if p.is_empty_at(i, j) {
                    return Err(self.falsify(
                        ClaimCheck::PairListEmpty,
                        depth,
                        Some(sub.root[i]),
                        format!("{which} instance: pair list of ({}, {}) is empty", sub.root[i], sub.root[j]),
                    ));
                }
            }
        }
        Ok(())
    }

    fn small_instance(
        &mut self,
        inst: &NmInstance,
        reach: &ReachableSets,
        x: usize,
        c: usize,
        depth: usize,
    ) -> Step<NmInstance> {
        let n = inst.g.n();
        let mut e = vec![ValueSet::EMPTY; n];
        let mut member = vec![false; n];
        for &(y, a1, a2) in &reach.glr {
            member[y] = true;
            if let Some(v) = inst.f.get(y, &nm_args(self.k, a1, a2)) {
                e[y].insert(v);
            }
        }
        let verts: Vec<usize> = (0..n).filter(|&y| member[y]).collect();
        let seeds: Vec<ValueSet> = verts.iter().map(|&y| e[y]).collect();
        let lists = self.closure_lists(inst, &verts, &seeds, depth)?;

        let xi = verts.binary_search(&x).expect("root triple lies over x");
        if lists[xi] != ValueSet::singleton(c) {
            return Err(self.falsify(
                ClaimCheck::SmallInstanceRoot,
                depth,
                Some(inst.root[x]),
                format!("small instance has L'(x) = {:?}, expected {{{c}}}", lists[xi]),
            ));
        }

        // P_l(y, a1) = { f(y; d^k, a1) : (y, d, a1) in G^r_L(w) }
        let mut pl_new: BTreeMap<(usize, usize), ValueSet> = BTreeMap::new();
        for &y in &verts {
            for a1 in inst.lists.list(y) {
                pl_new.insert((y, a1), ValueSet::EMPTY);
            }
        }
        for &(y, d, a1) in &reach.glr {
            if let Some(v) = inst.f.get(y, &nm_args(self.k, d, a1)) {
                pl_new.get_mut(&(y, a1)).expect("a1 in L(y)").insert(v);
            }
        }
        for ((y, a1), s) in pl_new {
            self.pl.set(inst.root[y], a1, s);
        }

        let sub = self.sub_instance(inst, &verts, lists, depth)?;
        self.check_pairs_nonempty(&sub, depth, "small")?;
        self.trace.events.push(NmEvent::SmallInstanceBuilt {
            depth,
            vertices: sub.g.n(),
            list_total: sub.lists.total_size(),
        });
        Ok(sub)
    }

    fn big_instance(
        &mut self,
        inst: &NmInstance,
        reach: &ReachableSets,
        x: usize,
        a: usize,
        retargets: &BTreeMap<(usize, usize), usize>,
        depth: usize,
    ) -> Step<NmInstance> {
        let n = inst.g.n();
        let hs = self.h.n();
        let mut e = vec![ValueSet::EMPTY; n];
        let mut member = vec![false; n];
        let mut in_r = vec![false; n * hs * hs];
        for &(y, a1, a2) in &reach.glr {
            in_r[(y * hs + a1) * hs + a2] = true;
            member[y] = true;
            // the value tuples at y that used to map to a2 map to now
            e[y].insert(retargets.get(&(y, a2)).copied().unwrap_or(a2));
        }
        for &(y, a1, a2) in &reach.gl {
            member[y] = true;
            if !in_r[(y * hs + a1) * hs + a2] {
                if let Some(v) = inst.f.get(y, &nm_args(self.k, a1, a2)) {
                    e[y].insert(v);
                }
            }
        }
        let verts: Vec<usize> = (0..n).filter(|&y| member[y]).collect();
        let seeds: Vec<ValueSet> = verts.iter().map(|&y| e[y]).collect();
        let lists = self.closure_lists(inst, &verts, &seeds, depth)?;

        // P_l(y, a2) = { f(w1) : w1 = (y, a1, a2) in G_L(w) } where (a, a2) not in L(x, y)
        let mut pl_new: BTreeMap<(usize, usize), ValueSet> = BTreeMap::new();
        for &y in &verts {
            for a2 in inst.lists.list(y) {
                if !inst.lists.pair_allowed(x, y, a, a2) {
                    pl_new.insert((y, a2), ValueSet::EMPTY);
                }
            }
        }
        for &(y, a1, a2) in &reach.gl {
            if let Some(s) = pl_new.get_mut(&(y, a2)) {
                if let Some(v) = inst.f.get(y, &nm_args(self.k, a1, a2)) {
                    s.insert(v);
                }
            }
        }
        for ((y, a2), s) in pl_new {
            self.pl.set(inst.root[y], a2, s);
        }

        let mut sub = self.sub_instance(inst, &verts, lists, depth)?;
        match preprocess(&sub.g, self.h, &mut sub.lists) {
            Ok(_) => {}
            Err(sig) => {
                return Err(self.falsify(
                    ClaimCheck::BigInstanceEmpty,
                    depth,
                    Some(inst.root[x]),
                    format!("preprocessing the big instance signalled {sig}"),
                ));
            }
        }
        sub.f.mask_to(sub.lists.lists());
        let xi = verts.binary_search(&x).expect("root triple lies over x");
        if sub.lists.list(xi).contains(a) {
            return Err(self.falsify(
                ClaimCheck::BigInstanceKeepsA,
                depth,
                Some(inst.root[x]),
                format!("big instance keeps {a} in the list of vertex {}", inst.root[x]),
            ));
        }
        self.check_pairs_nonempty(&sub, depth, "big")?;
        self.trace.events.push(NmEvent::BigInstanceBuilt {
            depth,
            vertices: sub.g.n(),
            list_total: sub.lists.total_size(),
        });
        Ok(sub)
    }

    /// The DFS over `G_{P_l}(x, a, d)`. Returns the first new value chosen for each `(y, old)`.
    fn update_f(&mut self, inst: &mut NmInstance, x: usize, a: usize, depth: usize) -> Step<BTreeMap<(usize, usize), usize>> {
        let rx = inst.root[x];
        let Some(d) = self.find_root(inst, x, a) else {
            return Err(self.falsify(
                ClaimCheck::RootMissing,
                depth,
                Some(rx),
                format!("no d in P_l^t({rx}, {a}) with P_l({rx}, d) = {{d}}"),
            ));
        };
        let hs = self.h.n();
        let n = inst.g.n();
        let id = |y: usize, c1: usize, c2: usize| (y * hs + c1) * hs + c2;
        let root = inst.root.clone();
        let mut reach_cache: Vec<Option<ValueSet>> = vec![None; n * hs];
        let mut valid = |pl: &PlStore, y: usize, c1: usize, c2: usize, l: ValueSet| -> bool {
            if !l.contains(c1) || !l.contains(c2) || !pl.is_fixed(root[y], c2) {
                return false;
            }
            let r = *reach_cache[y * hs + c1].get_or_insert_with(|| pl.reach(root[y], c1));
            r.contains(c2)
        };
        let log_start = inst.f.change_log().len();
        let mut touched = inst.f.touched_mask();
        let mut visited = vec![false; n * hs * hs];
        let mut retargets = BTreeMap::new();
        let mut mutations = 0;
        let mut stack = vec![(x, a, d)];
        visited[id(x, a, d)] = true;
        while let Some((y, a1, c1)) = stack.pop() {
            mutations += self.retarget(inst, (y, a1, c1), (x, a), &mut touched, depth);
            retargets.entry((y, a1)).or_insert(c1);
            for (fwd, nbrs) in [(true, inst.g.out_neighbors(y)), (false, inst.g.in_neighbors(y))] {
                for &z in nbrs {
                    let lz = inst.lists.list(z);
                    let (s1, s2) =
                        if fwd { (self.h.out_set(a1), self.h.out_set(c1)) } else { (self.h.in_set(a1), self.h.in_set(c1)) };
                    for d1 in s1 & lz {
                        for d2 in s2 & lz {
                            if !visited[id(z, d1, d2)] && valid(&self.pl, z, d1, d2, lz) {
                                visited[id(z, d1, d2)] = true;
                                stack.push((z, d1, d2));
                            }
                        }
                    }
                }
            }
        }
        if depth == 0 {
            for m in &inst.f.change_log()[log_start..] {
                self.trace.events.push(NmEvent::Mutation { x: m.x, tuple: m.tuple, old: m.old, new: m.new });
            }
        }
        self.trace.events.push(NmEvent::UpdateFRun { depth, x: rx, a, root: d, mutations });
        Ok(retargets)
    }

    /// Retargets `f(y; .)` from `old` to `new` while `a` is being removed from `L(x)`.
    fn retarget(
        &mut self,
        inst: &mut NmInstance,
        (y, old, new): (usize, usize, usize),
        (x, a): (usize, usize),
        touched: &mut Vec<bool>,
        depth: usize,
    ) -> usize {
        let count = inst.f.retarget_masked(y, old, new, Some(touched));
        let Some(Fault::CorruptRetarget { nth }) = self.cfg.fault else {
            return count;
        };
        if count == 0 || self.fault.is_some() {
            return count;
        }
        let hs = self.h.n();
        // entries at x with a in the tuple are masked away with a, corrupting them shows nothing
        let log = inst.f.change_log();
        let candidates: Vec<usize> = log[log.len() - count..]
            .iter()
            .map(|m| m.tuple)
            .filter(|&t| y != x || !crate::polymorphism::index_tuple(t, self.k, hs).contains(&a))
            .collect();
        let before = self.retargets;
        self.retargets += candidates.len() as u64;
        if nth < before || nth >= self.retargets {
            return count;
        }
        let l = inst.lists.list(y);
        let outside = (0..hs).find(|&v| !l.contains(v));
        // writing `old` back would just be retargeted again by the next pass
        let Some(written) = outside.or((0..hs).find(|&v| v != old && v != new)) else { return count };
        let tuple_idx = candidates[(nth - before) as usize];
        let tuple = crate::polymorphism::index_tuple(tuple_idx, self.k, hs);
        inst.f.set(y, &tuple, written);
        self.fault = Some(FaultRecord {
            depth,
            vertex: inst.root[y],
            tuple: tuple_idx,
            intended: new,
            written,
            outside_list: outside.is_some(),
        });
        count
    }

    /// Smallest `t`, then smallest `d`, with `d in P_l^t(x, a)` and `P_l(x, d) = {d}`.
    fn find_root(&self, inst: &NmInstance, x: usize, a: usize) -> Option<usize> {
        let rx = inst.root[x];
        let l = inst.lists.list(x);
        let mut s = ValueSet::singleton(a);
        let mut seen = Vec::new();
        for _ in 0..=self.depth_limit.max(1) {
            s = self.pl.image(rx, s);
            if let Some(d) = (s & l).iter().find(|&d| self.pl.is_fixed(rx, d)) {
                return Some(d);
            }
            if s.is_empty() || seen.contains(&s) {
                return None;
            }
            seen.push(s);
        }
        None
    }
}

fn relabel(v: Violation, root: &[usize]) -> Violation {
    match v {
        Violation::Undefined { x, tuple } => Violation::Undefined { x: root[x], tuple },
        Violation::List { x, tuple, value } => Violation::List { x: root[x], tuple, value },
        Violation::Adjacency { x, y, tails, heads } => Violation::Adjacency { x: root[x], y: root[y], tails, heads },
        Violation::WeakNu { x, a, b, i, j } => Violation::WeakNu { x: root[x], a, b, i, j },
    }
}

/// Runs the reduction on the top-level instance, mutating `lists` and `f` in place.
pub fn remove_not_minority(
    g: &Digraph,
    h: &Digraph,
    lists: &mut ListAssignment,
    f: &mut ConsistentHom,
    cfg: &NmConfig,
) -> NmRun {
    let mut engine = Engine {
        h,
        cfg,
        k: f.k(),
        pl: PlStore::new(g.n(), h.n()),
        trace: NmTrace::default(),
        iterations: 0,
        validations: 0,
        depth_limit: lists.total_size(),
        retargets: 0,
        fault: None,
    };
    let mut inst = NmInstance { g: g.clone(), root: (0..g.n()).collect(), lists: lists.clone(), f: f.clone() };
    let result = engine.remove_nm(&mut inst, 0);
    *lists = inst.lists;
    *f = inst.f;
    let outcome = match result {
        Ok(()) => NmOutcome::Done,
        Err(Stop(StopKind::Empty(sig))) => NmOutcome::NoHomomorphism(sig),
        Err(Stop(StopKind::Falsified(fals))) => NmOutcome::Falsified(fals),
        Err(Stop(StopKind::Budget)) => NmOutcome::BudgetExhausted,
    };
    NmRun {
        outcome,
        trace: engine.trace,
        iterations: engine.iterations,
        validations: engine.validations,
        fault: engine.fault,
    }
}

/// Whether `f(x; b^k, a) = a` for all `a, b in L(x)` (the loop guard is exhausted
/// when this holds wherever `a` is still an image).
pub fn first_non_minority(f: &ConsistentHom, lists: &ListAssignment) -> Option<(usize, usize, usize)> {
    for x in 0..lists.g_size() {
        let l = lists.list(x);
        for a in l {
            for b in l {
                if f.get_nm(x, b, a) != Some(a) {
                    return Some((x, a, b));
                }
            }
        }
    }
    None
}

/// Re-applies the top-level part of a trace (mutations, removals and the
/// preprocessing after each removal) to the initial state.
pub fn replay_trace(
    g: &Digraph,
    h: &Digraph,
    lists: &mut ListAssignment,
    f: &mut ConsistentHom,
    trace: &NmTrace,
) -> Result<(), String> {
    let hs = h.n();
    for e in &trace.events {
        match *e {
            NmEvent::Mutation { x, tuple, old, new } => {
                let t = crate::polymorphism::index_tuple(tuple, f.k(), hs);
                match f.set(x, &t, new) {
                    Some(prev) if prev == old => {}
                    other => return Err(format!("mutation at vertex {x}: expected {old}, found {other:?}")),
                }
            }
            NmEvent::Removed { depth: 0, x, a } => {
                lists.remove_value(x, a);
                let _ = preprocess(g, h, lists);
                f.mask_to(lists.lists());
            }
            _ => {}
        }
    }
    Ok(())
}
