//! k-ary operations on `V(H)`: property checks and weak near-unanimity search.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{arc_consistency, ListAssignment};
use crate::digraph::Digraph;
use crate::valueset::{ValueSet, MAX_VALUES};

/// Largest table (in entries) the search and loaders accept.
pub const MAX_TABLE_SIZE: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolyError {
    #[error("table is over {table} values but H has {h} vertices")]
    SizeMismatch { table: usize, h: usize },
    #[error("arity must be at least 2, got {0}")]
    BadArity(usize),
    #[error("table of {0} entries exceeds the supported size")]
    TooLarge(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Total map `V(H)^k -> V(H)`, tuples indexed row-major (first coordinate most significant).
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolymorphismTable {
    k: usize,
    h_size: usize,
    table: Vec<u8>,
}

impl std::fmt::Debug for PolymorphismTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PolymorphismTable(k={}, n={})", self.k, self.h_size)
    }
}

pub fn table_len(k: usize, n: usize) -> Option<usize> {
    let mut len: usize = 1;
    for _ in 0..k {
        len = len.checked_mul(n)?;
    }
    Some(len)
}

/// Row-major index of `tuple` over an alphabet of size `n`.
#[inline]
pub fn tuple_index(tuple: &[usize], n: usize) -> usize {
    tuple.iter().fold(0, |acc, &v| acc * n + v)
}

/// Inverse of [`tuple_index`].
pub fn index_tuple(mut idx: usize, k: usize, n: usize) -> Vec<usize> {
    let mut t = vec![0; k];
    for slot in t.iter_mut().rev() {
        *slot = idx % n;
        idx /= n;
    }
    t
}

/// The tuple with `b` everywhere except `a` at position `pos`.
pub fn one_off_tuple(k: usize, b: usize, a: usize, pos: usize) -> Vec<usize> {
    let mut t = vec![b; k];
    t[pos] = a;
    t
}

impl PolymorphismTable {
    pub fn new(k: usize, h_size: usize, table: Vec<usize>) -> Result<Self, PolyError> {
        if k < 2 {
            return Err(PolyError::BadArity(k));
        }
        if h_size == 0 || h_size > MAX_VALUES {
            return Err(PolyError::SizeMismatch { table: h_size, h: MAX_VALUES });
        }
        let len = table_len(k, h_size).filter(|&l| l <= MAX_TABLE_SIZE).ok_or(PolyError::TooLarge(usize::MAX))?;
        if table.len() != len {
            return Err(PolyError::Parse { line: 0, msg: format!("expected {len} entries, got {}", table.len()) });
        }
        if let Some(&bad) = table.iter().find(|&&v| v >= h_size) {
            return Err(PolyError::Parse { line: 0, msg: format!("value {bad} out of range") });
        }
        Ok(PolymorphismTable { k, h_size, table: table.into_iter().map(|v| v as u8).collect() })
    }

    pub fn from_fn(k: usize, h_size: usize, f: impl Fn(&[usize]) -> usize) -> Result<Self, PolyError> {
        let len = table_len(k, h_size).filter(|&l| l <= MAX_TABLE_SIZE).ok_or(PolyError::TooLarge(usize::MAX))?;
        let values = (0..len).map(|i| f(&index_tuple(i, k, h_size))).collect();
        Self::new(k, h_size, values)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h_size(&self) -> usize {
        self.h_size
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> usize {
        self.table[idx] as usize
    }

    #[inline]
    pub fn get(&self, tuple: &[usize]) -> usize {
        self.at(tuple_index(tuple, self.h_size))
    }

    pub fn set(&mut self, tuple: &[usize], v: usize) {
        assert!(v < self.h_size);
        let i = tuple_index(tuple, self.h_size);
        self.table[i] = v as u8;
    }

    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        self.table.iter().map(|&v| v as usize)
    }

    /// Text form: `k n`, then `n^k` values one per line in row-major order.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.table.len() * 3 + 32);
        writeln!(s, "# table v1").unwrap();
        writeln!(s, "{} {}", self.k, self.h_size).unwrap();
        for v in &self.table {
            writeln!(s, "{v}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PolyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(PolyError::Parse { line: 1, msg: "missing `k n` header".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse = |line: usize, tok: &str| -> Result<usize, PolyError> {
            tok.parse().map_err(|_| PolyError::Parse { line, msg: format!("invalid number `{tok}`") })
        };
        if fields.len() != 2 {
            return Err(PolyError::Parse { line: hline, msg: "header must be `k n`".into() });
        }
        let k = parse(hline, fields[0])?;
        let n = parse(hline, fields[1])?;
        if k < 2 {
            return Err(PolyError::BadArity(k));
        }
        if n == 0 || n > MAX_VALUES {
            return Err(PolyError::Parse { line: hline, msg: format!("vertex count {n} unsupported") });
        }
        let len = table_len(k, n).filter(|&l| l <= MAX_TABLE_SIZE).ok_or(PolyError::TooLarge(usize::MAX))?;
        let mut values = Vec::with_capacity(len);
        for (line, body) in lines {
            let v = parse(line, body)?;
            if v >= n {
                return Err(PolyError::Parse { line, msg: format!("value {v} out of range for n = {n}") });
            }
            if values.len() == len {
                return Err(PolyError::Parse { line, msg: format!("more than {len} entries") });
            }
            values.push(v);
        }
        if values.len() != len {
            return Err(PolyError::Parse {
                line: hline,
                msg: format!("table is not total: expected {len} entries, got {}", values.len()),
            });
        }
        Self::new(k, n, values)
    }
}

/// A concrete violation of one of the checked identities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    /// Coordinatewise arcs `tails[i] -> heads[i]` whose images are not adjacent.
    ArcTuple { tails: Vec<usize>, heads: Vec<usize> },
    /// The one-`a`-among-`b`s patterns at positions `i` and `j` disagree.
    Pattern { a: usize, b: usize, i: usize, j: usize },
    NotIdempotent { a: usize },
    /// `t(a, b, b) != a` (`left`) or `t(b, b, a) != a`.
    NotMaltsev { a: usize, b: usize, left: bool },
}

impl Witness {
    /// Whether this witness is (still) a violation for `t` on `h`.
    pub fn holds(&self, h: &Digraph, t: &PolymorphismTable) -> bool {
        match self {
            Witness::ArcTuple { tails, heads } => {
                tails.iter().zip(heads).all(|(&u, &v)| h.has_arc(u, v)) && !h.has_arc(t.get(tails), t.get(heads))
            }
            Witness::Pattern { a, b, i, j } => {
                t.get(&one_off_tuple(t.k, *b, *a, *i)) != t.get(&one_off_tuple(t.k, *b, *a, *j))
            }
            Witness::NotIdempotent { a } => t.get(&vec![*a; t.k]) != *a,
            Witness::NotMaltsev { a, b, left } => {
                t.k == 3 && if *left { t.get(&[*a, *b, *b]) != *a } else { t.get(&[*b, *b, *a]) != *a }
            }
        }
    }
}

/// Result of the property checks. Fields that were not examined are `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub is_polymorphism: Option<bool>,
    /// All one-`b` patterns agree (without idempotence).
    pub patterns_agree: Option<bool>,
    pub is_idempotent: Option<bool>,
    /// Idempotent and patterns agree.
    pub is_weak_nu: Option<bool>,
    pub is_maltsev: Option<bool>,
    pub witnesses: Vec<Witness>,
}

impl PropertyReport {
    pub fn merge(mut self, other: PropertyReport) -> PropertyReport {
        self.is_polymorphism = self.is_polymorphism.or(other.is_polymorphism);
        self.patterns_agree = self.patterns_agree.or(other.patterns_agree);
        self.is_idempotent = self.is_idempotent.or(other.is_idempotent);
        self.is_weak_nu = self.is_weak_nu.or(other.is_weak_nu);
        self.is_maltsev = self.is_maltsev.or(other.is_maltsev);
        self.witnesses.extend(other.witnesses);
        self
    }

    /// Polymorphism and weak NU both hold.
    pub fn is_valid_weak_nu(&self) -> bool {
        self.is_polymorphism == Some(true) && self.is_weak_nu == Some(true)
    }
}

/// Exhaustive check that `t` maps every arc of `H^k` to an arc of `H`.
pub fn check_polymorphism(h: &Digraph, t: &PolymorphismTable) -> Result<PropertyReport, PolyError> {
    if t.h_size != h.n() {
        return Err(PolyError::SizeMismatch { table: t.h_size, h: h.n() });
    }
    let arcs = h.arcs();
    let mut report = PropertyReport { is_polymorphism: Some(true), ..Default::default() };
    if arcs.is_empty() {
        return Ok(report);
    }
    let k = t.k;
    let n = t.h_size;
    let mut choice = vec![0usize; k];
    'outer: loop {
        let tail = choice.iter().fold(0, |acc, &c| acc * n + arcs[c].0);
        let head = choice.iter().fold(0, |acc, &c| acc * n + arcs[c].1);
        if !h.has_arc(t.at(tail), t.at(head)) {
            report.is_polymorphism = Some(false);
            report.witnesses.push(Witness::ArcTuple {
                tails: choice.iter().map(|&c| arcs[c].0).collect(),
                heads: choice.iter().map(|&c| arcs[c].1).collect(),
            });
            break 'outer;
        }
        for slot in choice.iter_mut().rev() {
            *slot += 1;
            if *slot < arcs.len() {
                continue 'outer;
            }
            *slot = 0;
        }
        break;
    }
    Ok(report)
}

/// Pattern agreement, idempotence and (for `k = 3`) the Maltsev identities.
pub fn check_weak_nu(t: &PolymorphismTable) -> PropertyReport {
    let k = t.k;
    let n = t.h_size;
    let mut report = PropertyReport::default();
    let mut agree = true;
    'pat: for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let first = t.get(&one_off_tuple(k, b, a, 0));
            for j in 1..k {
                if t.get(&one_off_tuple(k, b, a, j)) != first {
                    agree = false;
                    report.witnesses.push(Witness::Pattern { a, b, i: 0, j });
                    break 'pat;
                }
            }
        }
    }
    let mut idem = true;
    for a in 0..n {
        if t.get(&vec![a; k]) != a {
            idem = false;
            report.witnesses.push(Witness::NotIdempotent { a });
            break;
        }
    }
    if k == 3 {
        let mut maltsev = true;
        'm: for a in 0..n {
            for b in 0..n {
                for left in [true, false] {
                    let w = Witness::NotMaltsev { a, b, left };
                    if w.holds(&Digraph::empty(0), t) {
                        maltsev = false;
                        report.witnesses.push(w);
                        break 'm;
                    }
                }
            }
        }
        report.is_maltsev = Some(maltsev);
    }
    report.patterns_agree = Some(agree);
    report.is_idempotent = Some(idem);
    report.is_weak_nu = Some(agree && idem);
    report
}

/// Both checks combined.
pub fn analyze(h: &Digraph, t: &PolymorphismTable) -> Result<PropertyReport, PolyError> {
    Ok(check_polymorphism(h, t)?.merge(check_weak_nu(t)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Found(PolymorphismTable),
    /// Exhaustive refutation: no such table exists.
    Refuted,
    BudgetExhausted,
}

/// Preferred values per tuple, tried before the frequency order.
pub type ValueHint = dyn Fn(&[usize]) -> ValueSet + Sync;

pub struct SearchOptions<'a> {
    pub node_budget: u64,
    /// Additionally require `t(b, .., b, a, b, .., b) = a` (a minority-style weak NU).
    pub minority: bool,
    pub prefer: Option<&'a ValueHint>,
}

impl Default for SearchOptions<'_> {
    fn default() -> Self {
        SearchOptions { node_budget: 1_000_000, minority: false, prefer: None }
    }
}

/// Searches for an idempotent weak k-NU polymorphism of `h`.
pub fn find_weak_nu(h: &Digraph, k: usize, node_budget: u64) -> Result<SearchOutcome, PolyError> {
    find_weak_nu_with(h, k, &SearchOptions { node_budget, ..Default::default() })
}

struct Indicator {
    /// class id per tuple
    class_of: Vec<usize>,
    /// representative tuple index per class
    reps: Vec<usize>,
    graph: Digraph,
    domains: Vec<ValueSet>,
    degree: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn build_indicator(h: &Digraph, k: usize, opts: &SearchOptions) -> Result<Option<Indicator>, PolyError> {
    let n = h.n();
    let len = table_len(k, n).filter(|&l| l <= MAX_TABLE_SIZE).ok_or(PolyError::TooLarge(usize::MAX))?;
    let mut parent: Vec<usize> = (0..len).collect();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let first = tuple_index(&one_off_tuple(k, b, a, 0), n);
            for j in 1..k {
                let other = tuple_index(&one_off_tuple(k, b, a, j), n);
                let (ra, rb) = (find(&mut parent, first), find(&mut parent, other));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut class_of = vec![usize::MAX; len];
    let mut reps = Vec::new();
    let mut root_class = vec![usize::MAX; len];
    for i in 0..len {
        let r = find(&mut parent, i);
        if root_class[r] == usize::MAX {
            root_class[r] = reps.len();
            reps.push(i);
        }
        class_of[i] = root_class[r];
    }
    let classes = reps.len();
    let mut domains = vec![ValueSet::full(n); classes];
    for a in 0..n {
        domains[class_of[tuple_index(&vec![a; k], n)]] &= ValueSet::singleton(a);
    }
    if opts.minority {
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    domains[class_of[tuple_index(&one_off_tuple(k, b, a, 0), n)]] &= ValueSet::singleton(a);
                }
            }
        }
    }
    if domains.iter().any(|d| d.is_empty()) {
        return Ok(None);
    }

    let arcs = h.arcs();
    let mut constraint_arcs = Vec::new();
    if !arcs.is_empty() {
        let mut choice = vec![0usize; k];
        'outer: loop {
            let tail = choice.iter().fold(0, |acc, &c| acc * n + arcs[c].0);
            let head = choice.iter().fold(0, |acc, &c| acc * n + arcs[c].1);
            constraint_arcs.push((class_of[tail], class_of[head]));
            for slot in choice.iter_mut().rev() {
                *slot += 1;
                if *slot < arcs.len() {
                    continue 'outer;
                }
                *slot = 0;
            }
            break;
        }
    }
    constraint_arcs.sort_unstable();
    constraint_arcs.dedup();
    let mut degree = vec![0usize; classes];
    for &(u, v) in &constraint_arcs {
        degree[u] += 1;
        degree[v] += 1;
    }
    let graph = Digraph::new(classes, constraint_arcs).expect("class ids are in range");
    Ok(Some(Indicator { class_of, reps, graph, domains, degree }))
}

/// Indicator-problem search: one variable per class of tuples identified by
/// the weak-NU equalities, domain `V(H)`, arcs of `H^k` as constraints,
/// backtracking with arc consistency.
pub fn find_weak_nu_with(h: &Digraph, k: usize, opts: &SearchOptions) -> Result<SearchOutcome, PolyError> {
    if k < 2 {
        return Err(PolyError::BadArity(k));
    }
    if h.n() == 0 || h.n() > MAX_VALUES {
        return Err(PolyError::SizeMismatch { table: h.n(), h: MAX_VALUES });
    }
    let Some(ind) = build_indicator(h, k, opts)? else {
        return Ok(SearchOutcome::Refuted);
    };
    let n = h.n();
    let mut lists = ListAssignment::from_lists(ind.domains.clone(), n);
    lists.pair_tracking_enabled = false;
    if arc_consistency(&ind.graph, h, &mut lists).is_err() {
        return Ok(SearchOutcome::Refuted);
    }
    let prefer: Vec<ValueSet> = match opts.prefer {
        Some(p) => ind.reps.iter().map(|&r| p(&index_tuple(r, k, n))).collect(),
        None => vec![ValueSet::EMPTY; ind.reps.len()],
    };
    let mut nodes = 0u64;
    let dom: Vec<ValueSet> = lists.lists().to_vec();
    match search(&ind, h, dom, &prefer, &mut nodes, opts.node_budget) {
        Step::Solved(dom) => {
            let table = ind.class_of.iter().map(|&c| dom[c].iter().next().unwrap()).collect();
            Ok(SearchOutcome::Found(PolymorphismTable::new(k, n, table)?))
        }
        Step::Dead => Ok(SearchOutcome::Refuted),
        Step::OutOfBudget => Ok(SearchOutcome::BudgetExhausted),
    }
}

enum Step {
    Solved(Vec<ValueSet>),
    Dead,
    OutOfBudget,
}

/// Arc consistency on the indicator graph, starting from the neighbours of `seed`.
fn propagate(g: &Digraph, h: &Digraph, dom: &mut [ValueSet], seed: usize) -> bool {
    let mut queued = vec![false; dom.len()];
    let mut queue = std::collections::VecDeque::new();
    for &y in g.out_neighbors(seed).iter().chain(g.in_neighbors(seed)) {
        if !queued[y] {
            queued[y] = true;
            queue.push_back(y);
        }
    }
    while let Some(x) = queue.pop_front() {
        queued[x] = false;
        let before = dom[x];
        let keep: ValueSet = before
            .iter()
            .filter(|&a| {
                g.out_neighbors(x).iter().all(|&y| !(h.out_set(a) & dom[y]).is_empty())
                    && g.in_neighbors(x).iter().all(|&y| !(h.in_set(a) & dom[y]).is_empty())
            })
            .collect();
        if keep != before {
            if keep.is_empty() {
                return false;
            }
            dom[x] = keep;
            for &y in g.out_neighbors(x).iter().chain(g.in_neighbors(x)) {
                if !queued[y] {
                    queued[y] = true;
                    queue.push_back(y);
                }
            }
        }
    }
    true
}

fn search(ind: &Indicator, h: &Digraph, dom: Vec<ValueSet>, prefer: &[ValueSet], nodes: &mut u64, budget: u64) -> Step {
    *nodes += 1;
    if *nodes > budget {
        return Step::OutOfBudget;
    }
    // highest degree among undecided classes, ties by id
    let var = (0..ind.reps.len())
        .filter(|&c| dom[c].len() > 1)
        .max_by(|&a, &b| ind.degree[a].cmp(&ind.degree[b]).then(b.cmp(&a)));
    let Some(var) = var else {
        return Step::Solved(dom);
    };
    let mut freq = vec![0usize; h.n()];
    for d in &dom {
        if d.len() == 1 {
            freq[d.iter().next().unwrap()] += 1;
        }
    }
    let mut values: Vec<usize> = dom[var].to_vec();
    values.sort_by(|&a, &b| {
        let pa = prefer[var].contains(a);
        let pb = prefer[var].contains(b);
        pb.cmp(&pa).then(freq[b].cmp(&freq[a])).then(a.cmp(&b))
    });
    for v in values {
        let mut next = dom.clone();
        next[var] = ValueSet::singleton(v);
        if !propagate(&ind.graph, h, &mut next, var) {
            continue;
        }
        match search(ind, h, next, prefer, nodes, budget) {
            Step::Dead => continue,
            other => return other,
        }
    }
    Step::Dead
}
