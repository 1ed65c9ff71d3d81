//! Homomorphisms `f: G x H^k -> H` consistent with lists: one dense table per
//! vertex of `G`, defined on `L(x)^k`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::ListAssignment;
use crate::digraph::Digraph;
use crate::polymorphism::{index_tuple, one_off_tuple, tuple_index, PolymorphismTable, MAX_TABLE_SIZE};
use crate::valueset::ValueSet;

const UNDEF: u8 = u8::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChomError {
    #[error("f is undefined at vertex {x}, tuple {tuple:?}")]
    Undefined { x: usize, tuple: Vec<usize> },
    #[error("list of vertex {x} is not closed under f: f{tuple:?} = {value}")]
    NotClosed { x: usize, tuple: Vec<usize>, value: usize },
    #[error("list of vertex {x} is not contained in the domain of f")]
    NotSublist { x: usize },
    #[error("table size {0} exceeds the supported size")]
    TooLarge(usize),
}

/// One entry change, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub x: usize,
    pub tuple: usize,
    pub old: usize,
    pub new: usize,
}

#[derive(Clone, PartialEq, Eq)]
pub struct ConsistentHom {
    k: usize,
    h_size: usize,
    stride: usize,
    table: Vec<u8>,
    domain: Vec<ValueSet>,
    log: Vec<Mutation>,
}

impl std::fmt::Debug for ConsistentHom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConsistentHom(k={}, |G|={}, |H|={})", self.k, self.domain.len(), self.h_size)
    }
}

/// Calls `visit(index, tuple)` for every tuple in `values^k` in row-major order;
/// stops early when `visit` returns `false`.
pub fn for_each_tuple(values: &[usize], k: usize, n: usize, mut visit: impl FnMut(usize, &[usize]) -> bool) -> bool {
    if values.is_empty() {
        return true;
    }
    let mut pos = vec![0usize; k];
    let mut tuple = vec![values[0]; k];
    loop {
        if !visit(tuple_index(&tuple, n), &tuple) {
            return false;
        }
        let mut i = k;
        loop {
            if i == 0 {
                return true;
            }
            i -= 1;
            pos[i] += 1;
            if pos[i] < values.len() {
                tuple[i] = values[pos[i]];
                break;
            }
            pos[i] = 0;
            tuple[i] = values[0];
        }
    }
}

impl ConsistentHom {
    /// `f(x; a) = phi(a)` on `L(x)^k`.
    pub fn init_from_phi(phi: &PolymorphismTable, lists: &ListAssignment) -> Result<Self, ChomError> {
        let k = phi.k();
        let n = phi.h_size();
        let stride = phi.len();
        let g = lists.g_size();
        let total = stride.checked_mul(g).filter(|&t| t <= MAX_TABLE_SIZE * 16).ok_or(ChomError::TooLarge(usize::MAX))?;
        let mut table = vec![UNDEF; total];
        for x in 0..g {
            let values = lists.list(x).to_vec();
            let base = x * stride;
            for_each_tuple(&values, k, n, |i, _| {
                table[base + i] = phi.at(i) as u8;
                true
            });
        }
        Ok(ConsistentHom { k, h_size: n, stride, table, domain: lists.lists().to_vec(), log: Vec::new() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h_size(&self) -> usize {
        self.h_size
    }

    pub fn g_size(&self) -> usize {
        self.domain.len()
    }

    /// Current domain lists (the `L(x)` the tables are defined on).
    pub fn domain(&self, x: usize) -> ValueSet {
        self.domain[x]
    }

    pub fn change_log(&self) -> &[Mutation] {
        &self.log
    }

    #[inline]
    pub fn at(&self, x: usize, idx: usize) -> Option<usize> {
        let v = self.table[x * self.stride + idx];
        (v != UNDEF).then_some(v as usize)
    }

    #[inline]
    pub fn get(&self, x: usize, tuple: &[usize]) -> Option<usize> {
        self.at(x, tuple_index(tuple, self.h_size))
    }

    /// `f(x; b, .., b, a)`.
    pub fn get_nm(&self, x: usize, b: usize, a: usize) -> Option<usize> {
        self.get(x, &one_off_tuple(self.k, b, a, self.k - 1))
    }

    /// Sets one defined entry and logs it; returns the previous value.
    pub fn set(&mut self, x: usize, tuple: &[usize], v: usize) -> Option<usize> {
        let idx = tuple_index(tuple, self.h_size);
        self.set_at(x, idx, v)
    }

    fn set_at(&mut self, x: usize, idx: usize, v: usize) -> Option<usize> {
        assert!(v < self.h_size);
        let slot = &mut self.table[x * self.stride + idx];
        if *slot == UNDEF {
            return None;
        }
        let old = *slot as usize;
        if old != v {
            *slot = v as u8;
            self.log.push(Mutation { x, tuple: idx, old, new: v });
        }
        Some(old)
    }

    /// Drops every entry outside the new `L(x)^k` (the lists only shrink).
    pub fn mask_to(&mut self, lists: &[ValueSet]) {
        let n = self.h_size;
        for (x, &l) in lists.iter().enumerate() {
            let keep = self.domain[x] & l;
            if keep == self.domain[x] {
                continue;
            }
            let base = x * self.stride;
            for i in 0..self.stride {
                if self.table[base + i] != UNDEF && !index_tuple(i, self.k, n).iter().all(|&v| keep.contains(v)) {
                    self.table[base + i] = UNDEF;
                }
            }
            self.domain[x] = keep;
        }
    }

    /// Every defined tuple index at `x` whose value is `value`.
    pub fn tuples_with_value(&self, x: usize, value: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for_each_tuple(&self.domain[x].to_vec(), self.k, self.h_size, |i, _| {
            if self.at(x, i) == Some(value) {
                out.push(i);
            }
            true
        });
        out
    }

    /// `f` takes the value `value` somewhere on `L(x)^k`.
    pub fn has_value(&self, x: usize, value: usize) -> bool {
        !for_each_tuple(&self.domain[x].to_vec(), self.k, self.h_size, |i, _| self.at(x, i) != Some(value))
    }

    /// Retargets every tuple at `x` with value `old` to `new`.
    pub fn bulk_retarget(&mut self, x: usize, old: usize, new: usize) -> usize {
        self.retarget_masked(x, old, new, None)
    }

    /// As [`bulk_retarget`](Self::bulk_retarget), skipping tuples already marked
    /// in `touched` (indexed `x * stride + tuple`) and marking the ones changed.
    /// With `old == new` the matching tuples are only marked.
    pub fn retarget_masked(&mut self, x: usize, old: usize, new: usize, mut touched: Option<&mut Vec<bool>>) -> usize {
        if old == new && touched.is_none() {
            return 0;
        }
        let mut count = 0;
        for i in self.tuples_with_value(x, old) {
            if let Some(t) = touched.as_deref_mut() {
                let slot = &mut t[x * self.stride + i];
                if *slot {
                    continue;
                }
                *slot = true;
            }
            if old != new {
                self.set_at(x, i, new);
                count += 1;
            }
        }
        count
    }

    /// A fresh all-false mask for [`retarget_masked`](Self::retarget_masked).
    pub fn touched_mask(&self) -> Vec<bool> {
        vec![false; self.table.len()]
    }

    /// Least superset of `seed` closed under `f` at `y`.
    pub fn f_closure(&self, y: usize, seed: ValueSet) -> Result<ClosureResult, ChomError> {
        let mut closed = seed;
        let mut trace = Vec::new();
        loop {
            let values = closed.to_vec();
            let mut added = Vec::new();
            let mut err = None;
            for_each_tuple(&values, self.k, self.h_size, |i, t| match self.at(y, i) {
                None => {
                    err = Some(ChomError::Undefined { x: y, tuple: t.to_vec() });
                    false
                }
                Some(v) => {
                    if !closed.contains(v) && !added.iter().any(|&(w, _)| w == v) {
                        added.push((v, t.to_vec()));
                    }
                    true
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if added.is_empty() {
                return Ok(ClosureResult { closed_list: closed, generator_trace: trace });
            }
            for (v, t) in added {
                closed.insert(v);
                trace.push((v, t));
            }
        }
    }

    /// `f` restricted to `lists[i]` at `vertices[i]`, re-indexed to `0..vertices.len()`.
    pub fn restrict(&self, vertices: &[usize], lists: &[ValueSet]) -> Result<ConsistentHom, ChomError> {
        let mut table = vec![UNDEF; vertices.len() * self.stride];
        for (i, (&x, &l)) in vertices.iter().zip(lists).enumerate() {
            if !l.is_subset(self.domain[x]) {
                return Err(ChomError::NotSublist { x });
            }
            let mut err = None;
            for_each_tuple(&l.to_vec(), self.k, self.h_size, |idx, t| {
                let v = self.at(x, idx).expect("defined on the domain");
                if !l.contains(v) {
                    err = Some(ChomError::NotClosed { x, tuple: t.to_vec(), value: v });
                    return false;
                }
                table[i * self.stride + idx] = v as u8;
                true
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(ConsistentHom {
            k: self.k,
            h_size: self.h_size,
            stride: self.stride,
            table,
            domain: lists.to_vec(),
            log: Vec::new(),
        })
    }

    /// SHA-256 of the table contents.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.k as u64).to_le_bytes());
        hasher.update((self.h_size as u64).to_le_bytes());
        hasher.update(&self.table);
        hex::encode(hasher.finalize())
    }

    /// One line per defined entry: `x: a1 .. ak -> v`, vertices ascending, tuples in row-major order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for x in 0..self.g_size() {
            for_each_tuple(&self.domain[x].to_vec(), self.k, self.h_size, |i, t| {
                let v = self.at(x, i).map_or("?".to_string(), |v| v.to_string());
                let args: Vec<String> = t.iter().map(|a| a.to_string()).collect();
                writeln!(s, "{x}: {} -> {v}", args.join(" ")).unwrap();
                true
            });
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureResult {
    pub closed_list: ValueSet,
    /// Each added element with the tuple that produced it, in insertion order.
    pub generator_trace: Vec<(usize, Vec<usize>)>,
}

impl ClosureResult {
    /// Replays the trace from `seed` and checks it reaches `closed_list`.
    pub fn replays(&self, f: &ConsistentHom, y: usize, seed: ValueSet) -> bool {
        let mut cur = seed;
        for (v, t) in &self.generator_trace {
            if !t.iter().all(|&a| cur.contains(a)) || f.get(y, t) != Some(*v) {
                return false;
            }
            cur.insert(*v);
        }
        cur == self.closed_list
    }
}

/// A violated property of a consistent homomorphism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Undefined { x: usize, tuple: Vec<usize> },
    List { x: usize, tuple: Vec<usize>, value: usize },
    Adjacency { x: usize, y: usize, tails: Vec<usize>, heads: Vec<usize> },
    WeakNu { x: usize, a: usize, b: usize, i: usize, j: usize },
}

impl Violation {
    /// Re-checks the violation against the current state.
    pub fn holds(&self, f: &ConsistentHom, g: &Digraph, h: &Digraph, lists: &[ValueSet]) -> bool {
        let in_list = |x: usize, t: &[usize]| t.iter().all(|&a| lists[x].contains(a));
        match self {
            Violation::Undefined { x, tuple } => in_list(*x, tuple) && f.get(*x, tuple).is_none(),
            Violation::List { x, tuple, value } => {
                in_list(*x, tuple) && f.get(*x, tuple) == Some(*value) && !lists[*x].contains(*value)
            }
            Violation::Adjacency { x, y, tails, heads } => {
                g.has_arc(*x, *y)
                    && in_list(*x, tails)
                    && in_list(*y, heads)
                    && tails.iter().zip(heads).all(|(&a, &b)| h.has_arc(a, b))
                    && match (f.get(*x, tails), f.get(*y, heads)) {
                        (Some(u), Some(v)) => !h.has_arc(u, v),
                        _ => false,
                    }
            }
            Violation::WeakNu { x, a, b, i, j } => {
                lists[*x].contains(*a)
                    && lists[*x].contains(*b)
                    && f.get(*x, &one_off_tuple(f.k, *b, *a, *i)) != f.get(*x, &one_off_tuple(f.k, *b, *a, *j))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Violation::Undefined { .. } => "undefined",
            Violation::List { .. } => "list",
            Violation::Adjacency { .. } => "adjacency",
            Violation::WeakNu { .. } => "weak-nu",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub list_ok: bool,
    pub adjacency_ok: bool,
    pub weak_nu_ok: bool,
    /// At most one witness per failed property.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.list_ok && self.adjacency_ok && self.weak_nu_ok
    }
}

/// Exhaustive check of the list, adjacency and weak-nu properties over `lists`.
pub fn validate_all(f: &ConsistentHom, g: &Digraph, h: &Digraph, lists: &[ValueSet]) -> ValidationReport {
    let k = f.k;
    let n = f.h_size;
    let mut report = ValidationReport { list_ok: true, adjacency_ok: true, weak_nu_ok: true, violations: Vec::new() };

    'list: for (x, l) in lists.iter().enumerate() {
        let mut found = None;
        for_each_tuple(&l.to_vec(), k, n, |i, t| match f.at(x, i) {
            None => {
                found = Some(Violation::Undefined { x, tuple: t.to_vec() });
                false
            }
            Some(v) if !l.contains(v) => {
                found = Some(Violation::List { x, tuple: t.to_vec(), value: v });
                false
            }
            _ => true,
        });
        if let Some(v) = found {
            report.list_ok = false;
            report.violations.push(v);
            break 'list;
        }
    }

    'adj: for &(x, y) in g.arcs() {
        let lx = lists[x].to_vec();
        let mut found = None;
        for_each_tuple(&lx, k, n, |i, tails| {
            let Some(u) = f.at(x, i) else { return true };
            let heads_sets: Vec<Vec<usize>> = tails.iter().map(|&a| (h.out_set(a) & lists[y]).to_vec()).collect();
            if heads_sets.iter().any(|s| s.is_empty()) {
                return true;
            }
            let allowed = h.out_set(u);
            let mut pos = vec![0usize; k];
            loop {
                let heads: Vec<usize> = (0..k).map(|j| heads_sets[j][pos[j]]).collect();
                if let Some(v) = f.get(y, &heads) {
                    if !allowed.contains(v) {
                        found = Some(Violation::Adjacency { x, y, tails: tails.to_vec(), heads });
                        return false;
                    }
                }
                let mut j = k;
                loop {
                    if j == 0 {
                        return true;
                    }
                    j -= 1;
                    pos[j] += 1;
                    if pos[j] < heads_sets[j].len() {
                        break;
                    }
                    pos[j] = 0;
                }
            }
        });
        if let Some(v) = found {
            report.adjacency_ok = false;
            report.violations.push(v);
            break 'adj;
        }
    }

    'wnu: for (x, l) in lists.iter().enumerate() {
        for a in *l {
            for b in *l {
                if a == b {
                    continue;
                }
                let first = f.get(x, &one_off_tuple(k, b, a, 0));
                for j in 1..k {
                    if f.get(x, &one_off_tuple(k, b, a, j)) != first {
                        report.weak_nu_ok = false;
                        report.violations.push(Violation::WeakNu { x, a, b, i: 0, j });
                        break 'wnu;
                    }
                }
            }
        }
    }
    report
}
