//! Arc and pair consistency over unary and binary lists.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::digraph::Digraph;
use crate::valueset::ValueSet;

/// Which list emptied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmptyWitness {
    Unary(usize),
    Pair(usize, usize),
}

/// Raised when a list becomes empty: there is no list homomorphism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyListSignal {
    pub witness: EmptyWitness,
}

impl std::fmt::Display for EmptyListSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.witness {
            EmptyWitness::Unary(x) => write!(f, "list of vertex {x} is empty"),
            EmptyWitness::Pair(x, y) => write!(f, "pair list of ({x}, {y}) is empty"),
        }
    }
}

/// Unary values removed by a consistency pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Removals {
    pub unary: Vec<(usize, usize)>,
    pub pairs: usize,
}

impl Removals {
    pub fn is_empty(&self) -> bool {
        self.unary.is_empty() && self.pairs == 0
    }

    fn absorb(&mut self, other: Removals) {
        self.unary.extend(other.unary);
        self.pairs += other.pairs;
    }
}

/// Order in which the initial worklists are scanned. The fixpoint does not
/// depend on it; the knob exists so that can be tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOrder {
    #[default]
    Ascending,
    Descending,
}

/// Pair lists: one `|H| x |H|` bit matrix per ordered pair of G-vertices.
/// Row `a` of `(x, y)` holds every `b` with `(a, b)` in `L(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLists {
    n: usize,
    h: usize,
    rows: Vec<ValueSet>,
}

impl PairLists {
    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        (x * self.n + y) * self.h
    }

    #[inline]
    pub fn row(&self, x: usize, y: usize, a: usize) -> ValueSet {
        self.rows[self.idx(x, y) + a]
    }

    pub fn matrix(&self, x: usize, y: usize) -> &[ValueSet] {
        let i = self.idx(x, y);
        &self.rows[i..i + self.h]
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize, a: usize, b: usize) -> bool {
        self.row(x, y, a).contains(b)
    }

    pub fn is_empty_at(&self, x: usize, y: usize) -> bool {
        self.matrix(x, y).iter().all(|r| r.is_empty())
    }

    pub fn pair_count(&self, x: usize, y: usize) -> usize {
        self.matrix(x, y).iter().map(|r| r.len()).sum()
    }

    /// Removes `(a, b)` from `L(x, y)` and `(b, a)` from `L(y, x)`.
    fn remove_pair(&mut self, x: usize, y: usize, a: usize, b: usize) -> bool {
        let i = self.idx(x, y) + a;
        let had = self.rows[i].remove(b);
        let j = self.idx(y, x) + b;
        self.rows[j].remove(a);
        had
    }
}

/// Per-vertex lists `L(x)` plus optional pair lists `L(x, y)`.
#[derive(Debug, Clone)]
pub struct ListAssignment {
    h_size: usize,
    unary: Vec<ValueSet>,
    pairs: Option<PairLists>,
    pub pair_tracking_enabled: bool,
    /// Present while the pair lists are a pair-consistency fixpoint for the
    /// graph with this fingerprint, up to the pairs flagged as changed.
    pc_state: Option<PcState>,
}

#[derive(Debug, Clone)]
struct PcState {
    graph: u64,
    /// Indexed `x * n + y` with `x <= y`.
    changed: Vec<bool>,
}

impl PartialEq for ListAssignment {
    fn eq(&self, other: &Self) -> bool {
        self.h_size == other.h_size
            && self.unary == other.unary
            && self.pairs == other.pairs
            && self.pair_tracking_enabled == other.pair_tracking_enabled
    }
}

impl Eq for ListAssignment {}

fn graph_fingerprint(g: &Digraph) -> u64 {
    let mut hasher = DefaultHasher::new();
    g.n().hash(&mut hasher);
    g.arcs().hash(&mut hasher);
    hasher.finish()
}

impl ListAssignment {
    /// Every list is all of `V(H)`.
    pub fn full(g_size: usize, h_size: usize) -> Self {
        Self::from_lists(vec![ValueSet::full(h_size); g_size], h_size)
    }

    pub fn from_lists(unary: Vec<ValueSet>, h_size: usize) -> Self {
        let cap = ValueSet::full(h_size);
        let unary = unary.into_iter().map(|l| l & cap).collect();
        ListAssignment { h_size, unary, pairs: None, pair_tracking_enabled: true, pc_state: None }
    }

    pub fn g_size(&self) -> usize {
        self.unary.len()
    }

    pub fn h_size(&self) -> usize {
        self.h_size
    }

    #[inline]
    pub fn list(&self, x: usize) -> ValueSet {
        self.unary[x]
    }

    pub fn lists(&self) -> &[ValueSet] {
        &self.unary
    }

    pub fn pairs(&self) -> Option<&PairLists> {
        self.pairs.as_ref()
    }

    /// `(a, b)` in `L(x, y)`; without pair tracking this is `a in L(x), b in L(y)`
    /// (with the diagonal rule when `x == y`).
    #[inline]
    pub fn pair_allowed(&self, x: usize, y: usize, a: usize, b: usize) -> bool {
        match &self.pairs {
            Some(p) => p.contains(x, y, a, b),
            None => self.unary[x].contains(a) && self.unary[y].contains(b) && (x != y || a == b),
        }
    }

    /// The row `{b : (a, b) in L(x, y)}`.
    #[inline]
    pub fn pair_row(&self, x: usize, y: usize, a: usize) -> ValueSet {
        match &self.pairs {
            Some(p) => p.row(x, y, a),
            None if !self.unary[x].contains(a) => ValueSet::EMPTY,
            None if x == y => ValueSet::singleton(a),
            None => self.unary[y],
        }
    }

    pub fn total_size(&self) -> usize {
        self.unary.iter().map(|l| l.len()).sum()
    }

    /// Removes `a` from `L(x)` and every pair involving it.
    pub fn remove_value(&mut self, x: usize, a: usize) -> bool {
        let had = self.unary[x].remove(a);
        if had {
            self.sync_pairs_to_unary();
        }
        had
    }

    /// Replaces the unary lists (intersecting with the current ones) and
    /// drops pairs outside the new product.
    pub fn restrict_unary(&mut self, lists: &[ValueSet]) {
        for (l, &r) in self.unary.iter_mut().zip(lists) {
            *l &= r;
        }
        self.sync_pairs_to_unary();
    }

    /// `self` only removes values relative to `other`.
    pub fn is_sublist_of(&self, other: &ListAssignment) -> bool {
        self.unary.len() == other.unary.len()
            && self.unary.iter().zip(&other.unary).all(|(a, b)| a.is_subset(*b))
            && match (&self.pairs, &other.pairs) {
                (Some(p), Some(q)) => p.rows.iter().zip(&q.rows).all(|(a, b)| a.is_subset(*b)),
                _ => true,
            }
    }

    /// Lists for the subinstance induced on `vertices` (in that order), with
    /// unary lists `unary` and pair lists inherited from `self`.
    pub fn sub_assignment(&self, vertices: &[usize], unary: Vec<ValueSet>) -> ListAssignment {
        let mut sub = ListAssignment::from_lists(unary, self.h_size);
        sub.pair_tracking_enabled = self.pair_tracking_enabled;
        if let Some(p) = &self.pairs {
            let n = vertices.len();
            let h = self.h_size;
            let mut rows = vec![ValueSet::EMPTY; n * n * h];
            for (i, &x) in vertices.iter().enumerate() {
                for (j, &y) in vertices.iter().enumerate() {
                    for a in sub.unary[i] {
                        rows[(i * n + j) * h + a] = p.row(x, y, a) & sub.unary[j];
                    }
                }
            }
            sub.pairs = Some(PairLists { n, h, rows });
        }
        sub
    }

    /// Fresh pair lists `L(x) x L(y)` with the diagonal rule.
    pub fn init_pairs(&mut self) {
        let n = self.unary.len();
        let h = self.h_size;
        let mut rows = vec![ValueSet::EMPTY; n * n * h];
        for x in 0..n {
            for y in 0..n {
                for a in self.unary[x] {
                    rows[(x * n + y) * h + a] = if x == y { ValueSet::singleton(a) } else { self.unary[y] };
                }
            }
        }
        self.pairs = Some(PairLists { n, h, rows });
        self.pc_state = None;
    }

    fn sync_pairs_to_unary(&mut self) {
        let Some(p) = &mut self.pairs else { return };
        let n = p.n;
        for x in 0..n {
            for y in 0..n {
                let base = p.idx(x, y);
                let mut changed = false;
                for a in 0..p.h {
                    let r = &mut p.rows[base + a];
                    let next = if self.unary[x].contains(a) { *r & self.unary[y] } else { ValueSet::EMPTY };
                    changed |= next != *r;
                    *r = next;
                }
                if let (true, Some(st)) = (changed, &mut self.pc_state) {
                    st.changed[x.min(y) * n + x.max(y)] = true;
                }
            }
        }
    }

    fn first_empty(&self) -> Option<EmptyListSignal> {
        if let Some(x) = self.unary.iter().position(|l| l.is_empty()) {
            return Some(EmptyListSignal { witness: EmptyWitness::Unary(x) });
        }
        let p = self.pairs.as_ref()?;
        for x in 0..p.n {
            for y in 0..p.n {
                if p.is_empty_at(x, y) {
                    return Some(EmptyListSignal { witness: EmptyWitness::Pair(x, y) });
                }
            }
        }
        None
    }

    /// JSON document: sorted value arrays per vertex, pair lists on request.
    pub fn to_json(&self, include_pairs: bool) -> serde_json::Value {
        let mut doc = json!({
            "version": 1,
            "h_size": self.h_size,
            "lists": self.unary,
        });
        if include_pairs {
            if let Some(p) = &self.pairs {
                let mut out = Vec::new();
                for x in 0..p.n {
                    for y in 0..p.n {
                        let pairs: Vec<(usize, usize)> =
                            (0..p.h).flat_map(|a| p.row(x, y, a).iter().map(move |b| (a, b))).collect();
                        out.push(json!({ "x": x, "y": y, "pairs": pairs }));
                    }
                }
                doc["pairs"] = serde_json::Value::Array(out);
            }
        }
        doc
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Doc {
            version: u32,
            h_size: usize,
            lists: Vec<ValueSet>,
        }
        let d: Doc = serde_json::from_value(doc.clone()).map_err(|e| e.to_string())?;
        if d.version != 1 {
            return Err(format!("unsupported list format version {}", d.version));
        }
        Ok(ListAssignment::from_lists(d.lists, d.h_size))
    }
}

/// Drops every `a in L(x)` lacking a support along some arc at `x`.
pub fn arc_consistency(g: &Digraph, h: &Digraph, lists: &mut ListAssignment) -> Result<Removals, EmptyListSignal> {
    arc_consistency_ordered(g, h, lists, ScanOrder::Ascending)
}

pub fn arc_consistency_ordered(
    g: &Digraph,
    h: &Digraph,
    lists: &mut ListAssignment,
    order: ScanOrder,
) -> Result<Removals, EmptyListSignal> {
    let n = g.n();
    let mut removals = Removals::default();
    let mut queued = vec![true; n];
    let mut queue: VecDeque<usize> = match order {
        ScanOrder::Ascending => (0..n).collect(),
        ScanOrder::Descending => (0..n).rev().collect(),
    };
    while let Some(x) = queue.pop_front() {
        queued[x] = false;
        let before = lists.unary[x];
        let mut keep = before;
        for a in before {
            let supported = g.out_neighbors(x).iter().all(|&y| !(h.out_set(a) & lists.unary[y]).is_empty())
                && g.in_neighbors(x).iter().all(|&y| !(h.in_set(a) & lists.unary[y]).is_empty());
            if !supported {
                keep.remove(a);
                removals.unary.push((x, a));
            }
        }
        if keep != before {
            lists.unary[x] = keep;
            if keep.is_empty() {
                lists.sync_pairs_to_unary();
                return Err(EmptyListSignal { witness: EmptyWitness::Unary(x) });
            }
            for &y in g.out_neighbors(x).iter().chain(g.in_neighbors(x)) {
                if !queued[y] {
                    queued[y] = true;
                    queue.push_back(y);
                }
            }
        }
    }
    lists.sync_pairs_to_unary();
    Ok(removals)
}

/// Pair consistency: every `(a, b)` in `L(x, y)` must extend through every
/// third vertex `z`. Pair lists are created on first use; unary lists are
/// re-projected from the diagonal afterwards.
pub fn pair_consistency(g: &Digraph, h: &Digraph, lists: &mut ListAssignment) -> Result<Removals, EmptyListSignal> {
    pair_consistency_ordered(g, h, lists, ScanOrder::Ascending)
}

pub fn pair_consistency_ordered(
    g: &Digraph,
    h: &Digraph,
    lists: &mut ListAssignment,
    order: ScanOrder,
) -> Result<Removals, EmptyListSignal> {
    let n = g.n();
    let fingerprint = graph_fingerprint(g);
    if lists.pairs.is_none() {
        lists.init_pairs();
    } else {
        lists.sync_pairs_to_unary();
    }
    // From an earlier fixpoint for the same G only the pairs that shrank since
    // can take support away from others.
    let changed_since = match lists.pc_state.take() {
        Some(st) if st.graph == fingerprint && st.changed.len() == n * n => Some(st.changed),
        _ => None,
    };
    let mut removals = Removals::default();
    let p = lists.pairs.as_mut().unwrap();

    if changed_since.is_none() {
        // keep the diagonal rule
        for x in 0..n {
            let base = p.idx(x, x);
            for a in 0..p.h {
                p.rows[base + a] &= ValueSet::singleton(a);
            }
        }
        for &(x, y) in g.arcs() {
            for a in 0..p.h {
                let row = p.row(x, y, a);
                for b in row & !h.out_set(a) {
                    p.remove_pair(x, y, a, b);
                    removals.pairs += 1;
                }
            }
        }
    }

    // Worklist of unordered pairs {i, j} whose list shrank (all of them on a
    // full pass). Each one re-checks L(i, k) through j and L(j, k) through i.
    let mut queued = vec![false; n * n];
    let mut queue = VecDeque::new();
    let mut start: Vec<(usize, usize)> = (0..n)
        .flat_map(|x| (x..n).map(move |y| (x, y)))
        .filter(|&(x, y)| changed_since.as_ref().is_none_or(|c| c[x * n + y]))
        .collect();
    if order == ScanOrder::Descending {
        start.reverse();
    }
    for (x, y) in start {
        queued[x * n + y] = true;
        queue.push_back((x, y));
    }

    // L(x, y) keeps (a, b) only if some c has (a, c) in L(x, z), (c, b) in L(z, y).
    let revise = |p: &mut PairLists, x: usize, y: usize, z: usize, removals: &mut Removals| -> bool {
        let mut changed = false;
        for a in 0..p.h {
            let row = p.row(x, y, a);
            if row.is_empty() {
                continue;
            }
            let mut support = ValueSet::EMPTY;
            for c in p.row(x, z, a) {
                support |= p.row(z, y, c);
            }
            for b in row & !support {
                p.remove_pair(x, y, a, b);
                removals.pairs += 1;
                changed = true;
            }
        }
        changed
    };

    while let Some((i, j)) = queue.pop_front() {
        queued[i * n + j] = false;
        let sides: &[(usize, usize)] = if i == j { &[(i, i)] } else { &[(i, j), (j, i)] };
        for k in 0..n {
            for &(x, z) in sides {
                if !revise(p, x, k, z, &mut removals) {
                    continue;
                }
                if p.is_empty_at(x, k) {
                    lists.reproject_from_pairs(&mut removals);
                    return Err(EmptyListSignal { witness: EmptyWitness::Pair(x, k) });
                }
                let (u, v) = if x <= k { (x, k) } else { (k, x) };
                if !queued[u * n + v] {
                    queued[u * n + v] = true;
                    queue.push_back((u, v));
                }
            }
        }
    }
    // the final reprojection may shrink pairs again; those are recorded
    lists.pc_state = Some(PcState { graph: fingerprint, changed: vec![false; n * n] });
    lists.reproject_from_pairs(&mut removals);
    if let Some(sig) = lists.first_empty() {
        lists.pc_state = None;
        return Err(sig);
    }
    Ok(removals)
}

impl ListAssignment {
    fn reproject_from_pairs(&mut self, removals: &mut Removals) {
        let Some(p) = &self.pairs else { return };
        for x in 0..self.unary.len() {
            let before = self.unary[x];
            let after: ValueSet = before.iter().filter(|&a| p.contains(x, x, a, a)).collect();
            for a in before & !after {
                removals.unary.push((x, a));
            }
            self.unary[x] = after;
        }
        self.sync_pairs_to_unary();
    }
}

/// Arc consistency and pair consistency iterated to a joint fixpoint.
pub fn preprocess(g: &Digraph, h: &Digraph, lists: &mut ListAssignment) -> Result<Removals, EmptyListSignal> {
    preprocess_ordered(g, h, lists, ScanOrder::Ascending)
}

pub fn preprocess_ordered(
    g: &Digraph,
    h: &Digraph,
    lists: &mut ListAssignment,
    order: ScanOrder,
) -> Result<Removals, EmptyListSignal> {
    let mut total = Removals::default();
    if let Some(sig) = lists.first_empty() {
        return Err(sig);
    }
    loop {
        total.absorb(arc_consistency_ordered(g, h, lists, order)?);
        if !lists.pair_tracking_enabled {
            return Ok(total);
        }
        let pc = pair_consistency_ordered(g, h, lists, order)?;
        let unary_changed = !pc.unary.is_empty();
        total.absorb(pc);
        if !unary_changed {
            return Ok(total);
        }
    }
}
