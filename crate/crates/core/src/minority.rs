//! The minority phase: the ternary `h(x; a, b, c) = f(x; a, b, .., b, c)`,
//! the triple digraph `M^3`, and the direct solver branching on whether
//! `G_x(a, b)` is invertible.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chom::ConsistentHom;
use crate::consistency::{preprocess, ListAssignment};
use crate::digraph::{Digraph, Direction, OrientedWalk};
use crate::oracle::{verify, Homomorphism};
use crate::valueset::ValueSet;

const UNDEF: u8 = u8::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaltsevError {
    /// `h(x; a, b, b) != a` or `h(x; b, b, a) != a`.
    #[error("minority condition fails at vertex {x} for ({a}, {b})")]
    NotMinority { x: usize, a: usize, b: usize },
    #[error("f is undefined at vertex {x} on {tuple:?}")]
    Undefined { x: usize, tuple: Vec<usize> },
    #[error("walks are not congruent to the base walk")]
    CongruenceMismatch,
}

/// Per-vertex ternary tables on `L(x)^3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaltsevHom {
    h_size: usize,
    lists: Vec<ValueSet>,
    table: Vec<u8>,
}

impl MaltsevHom {
    pub fn g_size(&self) -> usize {
        self.lists.len()
    }

    pub fn h_size(&self) -> usize {
        self.h_size
    }

    /// Lists `h` was derived on.
    pub fn lists(&self) -> &[ValueSet] {
        &self.lists
    }

    pub fn get(&self, x: usize, a: usize, b: usize, c: usize) -> Option<usize> {
        let n = self.h_size;
        match self.table[x * n * n * n + (a * n + b) * n + c] {
            UNDEF => None,
            v => Some(v as usize),
        }
    }

    /// Overwrites one entry; meant for fault injection in tests.
    pub fn set(&mut self, x: usize, a: usize, b: usize, c: usize, v: usize) {
        let n = self.h_size;
        self.table[x * n * n * n + (a * n + b) * n + c] = v as u8;
    }

    /// Re-checks both identities on the lists; first violation.
    pub fn check_identities(&self) -> Result<(), MaltsevError> {
        for (x, &l) in self.lists.iter().enumerate() {
            for a in l {
                for b in l {
                    if self.get(x, a, b, b) != Some(a) || self.get(x, b, b, a) != Some(a) {
                        return Err(MaltsevError::NotMinority { x, a, b });
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjacency on `L^3`: every arc `xy` of `G` and arcs `a a', b b', c c'` of `H`
    /// give an arc `h(x; a, b, c) h(y; a', b', c')`. Returns the first failing arc and tuples.
    pub fn check_adjacency(&self, g: &Digraph, h: &Digraph) -> Option<(usize, usize, [usize; 3], [usize; 3])> {
        for &(x, y) in g.arcs() {
            let (lx, ly) = (self.lists[x], self.lists[y]);
            for a in lx {
                for b in lx {
                    for c in lx {
                        let Some(v) = self.get(x, a, b, c) else { continue };
                        for a2 in h.out_set(a) & ly {
                            for b2 in h.out_set(b) & ly {
                                for c2 in h.out_set(c) & ly {
                                    if let Some(w) = self.get(y, a2, b2, c2) {
                                        if !h.has_arc(v, w) {
                                            return Some((x, y, [a, b, c], [a2, b2, c2]));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        None
    }
}

/// `h(x; a, b, c) = f(x; a, b, .., b, c)` on the current lists, after checking
/// the Maltsev identities there.
pub fn derive_maltsev(f: &ConsistentHom, lists: &ListAssignment) -> Result<MaltsevHom, MaltsevError> {
    let k = f.k();
    let n = f.h_size();
    let mut table = vec![UNDEF; lists.g_size() * n * n * n];
    for x in 0..lists.g_size() {
        let l = lists.list(x);
        for a in l {
            for b in l {
                for c in l {
                    let mut t = vec![b; k];
                    t[0] = a;
                    t[k - 1] = c;
                    let v = f.get(x, &t).ok_or(MaltsevError::Undefined { x, tuple: t })?;
                    table[x * n * n * n + (a * n + b) * n + c] = v as u8;
                }
            }
        }
    }
    let hm = MaltsevHom { h_size: n, lists: lists.lists().to_vec(), table };
    hm.check_identities()?;
    Ok(hm)
}

/// `E_i = h(x_i; B_i, C_i, D_i)` for walks `B, C, D` in `H` congruent to `X` in `G`.
pub fn walk_compose(
    hm: &MaltsevHom,
    x: &OrientedWalk,
    b: &OrientedWalk,
    c: &OrientedWalk,
    d: &OrientedWalk,
) -> Result<OrientedWalk, MaltsevError> {
    if [b, c, d].iter().any(|w| w.directions != x.directions) {
        return Err(MaltsevError::CongruenceMismatch);
    }
    let mut out = Vec::with_capacity(x.vertices.len());
    for (i, &xi) in x.vertices.iter().enumerate() {
        let t = [b.vertices[i], c.vertices[i], d.vertices[i]];
        let v = hm.get(xi, t[0], t[1], t[2]).ok_or(MaltsevError::Undefined { x: xi, tuple: t.to_vec() })?;
        out.push(v);
    }
    Ok(OrientedWalk::new(out, x.directions.clone()).expect("lengths agree"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaltsevOutcome {
    Found(Homomorphism),
    NoHomomorphism,
    BudgetExhausted,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaltsevStats {
    pub calls: u64,
    pub invertible: u64,
    pub non_invertible: u64,
    /// Invertible, but no path avoiding `x` in between was found.
    pub invertible_without_path: u64,
    /// `h`-images dropped because the value had left the current list.
    pub images_outside_list: u64,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaltsevRun {
    pub outcome: MaltsevOutcome,
    pub stats: MaltsevStats,
}

/// Whether `G_x(a, b)` is invertible, with the triples reachable from `(x, a, b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invertibility {
    pub invertible: bool,
    pub reachable: Vec<(usize, usize, usize)>,
}

/// Filtered `M^3` rooted at `(x, a, b)`: triples `(y, c, d)` with `(a, c), (b, d) in L(x, y)`,
/// plus `(x, b, a)` itself.
pub struct M3<'a> {
    g: &'a Digraph,
    h: &'a Digraph,
    lists: &'a ListAssignment,
    x: usize,
    a: usize,
    b: usize,
}

impl<'a> M3<'a> {
    pub fn new(g: &'a Digraph, h: &'a Digraph, lists: &'a ListAssignment, x: usize, a: usize, b: usize) -> Self {
        M3 { g, h, lists, x, a, b }
    }

    fn admitted(&self, y: usize, c: usize, d: usize) -> bool {
        (self.lists.pair_allowed(self.x, y, self.a, c) && self.lists.pair_allowed(self.x, y, self.b, d))
            || (y == self.x && c == self.b && d == self.a)
    }

    fn id(&self, (y, c, d): (usize, usize, usize)) -> usize {
        let n = self.h.n();
        (y * n + c) * n + d
    }

    /// Out-arcs; the flag says whether the `G` arc runs `y -> z`.
    pub fn successors(&self, (y, c, d): (usize, usize, usize)) -> Vec<((usize, usize, usize), bool)> {
        let mut out = Vec::new();
        for &z in self.g.out_neighbors(y) {
            let lz = self.lists.list(z);
            for c2 in self.h.out_set(c) & lz {
                for d2 in self.h.out_set(d) & lz {
                    if !self.h.has_arc(c, d2) && self.admitted(z, c2, d2) {
                        out.push(((z, c2, d2), true));
                    }
                }
            }
        }
        for &z in self.g.in_neighbors(y) {
            let lz = self.lists.list(z);
            for c2 in self.h.in_set(c) & lz {
                for d2 in self.h.in_set(d) & lz {
                    if !self.h.has_arc(d2, c) && self.admitted(z, c2, d2) {
                        out.push(((z, c2, d2), false));
                    }
                }
            }
        }
        out
    }

    pub fn reachable(&self) -> Vec<(usize, usize, usize)> {
        let root = (self.x, self.a, self.b);
        let mut seen = vec![false; self.g.n() * self.h.n() * self.h.n()];
        seen[self.id(root)] = true;
        let mut order = vec![root];
        let mut i = 0;
        while i < order.len() {
            for (t, _) in self.successors(order[i]) {
                if !seen[self.id(t)] {
                    seen[self.id(t)] = true;
                    order.push(t);
                }
            }
            i += 1;
        }
        order
    }

    /// Invertible iff `(x, a, b)` and `(x, b, a)` share a strong component.
    pub fn invertibility(&self) -> Invertibility {
        let reachable = self.reachable();
        let mut index = vec![usize::MAX; self.g.n() * self.h.n() * self.h.n()];
        for (i, &t) in reachable.iter().enumerate() {
            index[self.id(t)] = i;
        }
        let adj: Vec<Vec<usize>> = reachable
            .iter()
            .map(|&t| self.successors(t).into_iter().map(|(s, _)| index[self.id(s)]).collect())
            .collect();
        let comp = strong_components(&adj);
        let target = index[self.id((self.x, self.b, self.a))];
        let invertible = target != usize::MAX && comp[target] == comp[0];
        Invertibility { invertible, reachable }
    }
}

/// Tarjan's algorithm, iterative. Component ids per node.
pub fn strong_components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    for s in 0..n {
        if index[s] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(s, 0)];
        index[s] = next_index;
        low[s] = next_index;
        next_index += 1;
        stack.push(s);
        on_stack[s] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < adj[v].len() {
                let w = adj[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

type Quad = (usize, usize, usize, usize);

/// BFS-shortest path in `UN(G x H^3)` from `(x, a, b, b)` to `(x, b, b, a)` with no
/// intermediate vertex over `x`. Each step carries whether its `G` arc is forward.
fn path_avoiding_x(g: &Digraph, h: &Digraph, lists: &ListAssignment, x: usize, a: usize, b: usize) -> Option<Vec<(Quad, bool)>> {
    let n = h.n();
    let id = |(y, c, d, e): Quad| ((y * n + c) * n + d) * n + e;
    let start = (x, a, b, b);
    let target = (x, b, b, a);
    let mut parent: Vec<Option<(usize, bool)>> = vec![None; g.n() * n * n * n];
    let mut seen = vec![false; g.n() * n * n * n];
    let mut nodes: Vec<Quad> = vec![start];
    seen[id(start)] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let (y, c, d, e) = nodes[i];
        if i != 0 && y == x {
            continue;
        }
        for (fwd, nbrs) in [(true, g.out_neighbors(y)), (false, g.in_neighbors(y))] {
            for &z in nbrs {
                let lz = lists.list(z);
                let step = |v: usize| if fwd { h.out_set(v) } else { h.in_set(v) } & lz;
                for c2 in step(c) {
                    for d2 in step(d) {
                        for e2 in step(e) {
                            let q = (z, c2, d2, e2);
                            if seen[id(q)] {
                                continue;
                            }
                            seen[id(q)] = true;
                            parent[id(q)] = Some((i, fwd));
                            nodes.push(q);
                            if q == target {
                                let mut path = Vec::new();
                                let mut cur = q;
                                while let Some((p, f)) = parent[id(cur)] {
                                    path.push((cur, f));
                                    cur = nodes[p];
                                }
                                path.push((start, true));
                                path.reverse();
                                return Some(path);
                            }
                            queue.push_back(nodes.len() - 1);
                        }
                    }
                }
            }
        }
    }
    None
}

struct Sub {
    verts: Vec<usize>,
    lists: Vec<ValueSet>,
    arcs: Vec<(usize, usize)>,
}

struct Solver<'a> {
    h: &'a Digraph,
    hm: &'a MaltsevHom,
    budget: u64,
    stats: MaltsevStats,
}

struct Budget;

impl<'a> Solver<'a> {
    /// `root` maps instance vertices to those `hm` is indexed by.
    fn solve(&mut self, g: &Digraph, root: &[usize], mut lists: ListAssignment, depth: usize) -> Result<Option<Vec<usize>>, Budget> {
        self.stats.max_depth = self.stats.max_depth.max(depth);
        if lists.lists().iter().any(|l| l.is_empty()) {
            return Ok(None);
        }
        while let Some(x) = (0..g.n()).find(|&x| lists.list(x).len() >= 2) {
            self.stats.calls += 1;
            if self.stats.calls > self.budget {
                return Err(Budget);
            }
            let mut vals = lists.list(x).iter();
            let (a, b) = (vals.next().unwrap(), vals.next().unwrap());
            let sub = self.build(g, root, &lists, x, a, b);
            let sub_g = Digraph::new(sub.verts.len(), sub.arcs).expect("arcs index the sub-vertices");
            let sub_root: Vec<usize> = sub.verts.iter().map(|&v| root[v]).collect();
            let sub_lists = lists.sub_assignment(&sub.verts, sub.lists);
            let found = self.solve(&sub_g, &sub_root, sub_lists, depth + 1)?.is_some();
            lists.remove_value(x, if found { b } else { a });
            if preprocess(g, self.h, &mut lists).is_err() {
                return Ok(None);
            }
        }
        let assignment: Vec<usize> = (0..g.n()).map(|x| lists.list(x).iter().next().unwrap()).collect();
        Ok(verify(g, self.h, Some(lists.lists()), &assignment).is_ok().then_some(assignment))
    }

    fn build(&mut self, g: &Digraph, root: &[usize], lists: &ListAssignment, x: usize, a: usize, b: usize) -> Sub {
        let m3 = M3::new(g, self.h, lists, x, a, b);
        let inv = m3.invertibility();
        let n = g.n();
        let mut lp = vec![ValueSet::EMPTY; n];
        let mut member = vec![false; n];
        let mut arcs: Vec<(usize, usize)> = Vec::new();
        // G'': vertices on the path, with h-images
        let mut on_path = vec![false; n];
        if inv.invertible {
            self.stats.invertible += 1;
            match path_avoiding_x(g, self.h, lists, x, a, b) {
                Some(path) => {
                    for (i, &((y, c, d, e), fwd)) in path.iter().enumerate() {
                        on_path[y] = true;
                        member[y] = true;
                        let v = self.hm.get(root[y], c, d, e).expect("path values lie in the lists");
                        if lists.list(y).contains(v) {
                            lp[y].insert(v);
                        } else {
                            self.stats.images_outside_list += 1;
                        }
                        if i > 0 {
                            let prev = path[i - 1].0 .0;
                            arcs.push(if fwd { (prev, y) } else { (y, prev) });
                        }
                    }
                }
                None => {
                    self.stats.invertible_without_path += 1;
                    on_path[x] = true;
                    member[x] = true;
                }
            }
        } else {
            self.stats.non_invertible += 1;
        }
        let mut in_reach = vec![false; n * self.h.n() * self.h.n()];
        let hs = self.h.n();
        for &(y, c, d) in &inv.reachable {
            in_reach[(y * hs + c) * hs + d] = true;
        }
        for &(y, c, d) in &inv.reachable {
            if on_path[y] {
                continue;
            }
            member[y] = true;
            lp[y].insert(c);
            for ((z, _, _), fwd) in m3.successors((y, c, d)) {
                if !on_path[z] {
                    arcs.push(if fwd { (y, z) } else { (z, y) });
                }
            }
        }
        lp[x] = ValueSet::singleton(a);
        let verts: Vec<usize> = (0..n).filter(|&y| member[y]).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in verts.iter().enumerate() {
            pos[v] = i;
        }
        arcs.sort_unstable();
        arcs.dedup();
        let arcs = arcs.into_iter().map(|(u, v)| (pos[u], pos[v])).collect();
        Sub { lists: verts.iter().map(|&v| lp[v]).collect(), verts, arcs }
    }
}

/// Decides whether an `L`-homomorphism exists by repeatedly removing one of
/// two values from some list. `hm` is indexed by the vertices of `g`.
pub fn maltsev_solve(g: &Digraph, h: &Digraph, lists: &ListAssignment, hm: &MaltsevHom, call_budget: u64) -> MaltsevRun {
    let mut solver = Solver { h, hm, budget: call_budget, stats: MaltsevStats::default() };
    let mut lists = lists.clone();
    if lists.pairs().is_none() && lists.pair_tracking_enabled {
        lists.init_pairs();
    }
    let root: Vec<usize> = (0..g.n()).collect();
    let outcome = match solver.solve(g, &root, lists, 0) {
        Ok(Some(assignment)) => MaltsevOutcome::Found(Homomorphism { assignment }),
        Ok(None) => MaltsevOutcome::NoHomomorphism,
        Err(Budget) => MaltsevOutcome::BudgetExhausted,
    };
    MaltsevRun { outcome, stats: solver.stats }
}

/// The structure pair `(G', H')` with one relation per arc of `G`; values of
/// `H'` are the pairs `(x, a)` with `a in L(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalReduction {
    pub g_vertices: usize,
    /// `R_e = {(x, y)}` for `e = xy`.
    pub r: Vec<(usize, usize)>,
    /// `V(H')` as `(x, a)`, grouped by `x`.
    pub h_vertices: Vec<(usize, usize)>,
    /// `S_e` over indices into `h_vertices`.
    pub s: Vec<Vec<(usize, usize)>>,
}

impl RelationalReduction {
    pub fn build(g: &Digraph, h: &Digraph, lists: &[ValueSet]) -> Self {
        let mut h_vertices = Vec::new();
        let mut offset = Vec::with_capacity(lists.len());
        for (x, l) in lists.iter().enumerate() {
            offset.push(h_vertices.len());
            h_vertices.extend(l.iter().map(|a| (x, a)));
        }
        let idx = |x: usize, a: usize| offset[x] + lists[x].iter().position(|v| v == a).unwrap();
        let s = g
            .arcs()
            .iter()
            .map(|&(x, y)| {
                let mut rel = Vec::new();
                for a in lists[x] {
                    for b in h.out_set(a) & lists[y] {
                        rel.push((idx(x, a), idx(y, b)));
                    }
                }
                rel
            })
            .collect();
        RelationalReduction { g_vertices: g.n(), r: g.arcs().to_vec(), h_vertices, s }
    }

    /// `h'` on `V(H')`: `h(x; ..)` inside one list, otherwise the first
    /// argument, or the third when the first two coincide.
    pub fn h_prime(&self, hm: &MaltsevHom, p: usize, q: usize, r: usize) -> usize {
        let ((x, a), (y, b), (z, c)) = (self.h_vertices[p], self.h_vertices[q], self.h_vertices[r]);
        if x == y && y == z {
            let v = hm.get(x, a, b, c).expect("values come from the lists");
            return self.h_vertices.iter().position(|&t| t == (x, v)).unwrap_or(usize::MAX);
        }
        if p == q {
            r
        } else {
            p
        }
    }

    /// First `(e, t1, t2, t3)` whose image under `h'` leaves `S_e`, if any.
    pub fn check_h_prime(&self, hm: &MaltsevHom) -> Option<(usize, [(usize, usize); 3])> {
        for (e, rel) in self.s.iter().enumerate() {
            for &t1 in rel {
                for &t2 in rel {
                    for &t3 in rel {
                        let u = self.h_prime(hm, t1.0, t2.0, t3.0);
                        let v = self.h_prime(hm, t1.1, t2.1, t3.1);
                        if !rel.contains(&(u, v)) {
                            return Some((e, [t1, t2, t3]));
                        }
                    }
                }
            }
        }
        None
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "version": 1,
            "g_vertices": self.g_vertices,
            "relations_g": self.r,
            "h_vertices": self.h_vertices,
            "relations_h": self.s,
        })
    }
}

/// A walk in `H` through the lists of an oriented walk in `G`, if one exists
/// from `start` (used to produce congruent walks for tests).
pub fn lift_walk(h: &Digraph, lists: &[ValueSet], x: &OrientedWalk, start: usize, end: Option<usize>) -> Option<OrientedWalk> {
    let len = x.vertices.len();
    // reach[i] = values at step i reachable from start
    let mut reach = vec![ValueSet::EMPTY; len];
    reach[0] = ValueSet::singleton(start) & lists[x.vertices[0]];
    for i in 1..len {
        let prev = reach[i - 1];
        let mut next = ValueSet::EMPTY;
        for v in prev {
            next |= match x.directions[i - 1] {
                Direction::Forward => h.out_set(v),
                Direction::Backward => h.in_set(v),
            };
        }
        reach[i] = next & lists[x.vertices[i]];
    }
    let mut cur = match end {
        Some(e) if reach[len - 1].contains(e) => e,
        Some(_) => return None,
        None => reach[len - 1].iter().next()?,
    };
    let mut out = vec![cur; len];
    for i in (1..len).rev() {
        let back = match x.directions[i - 1] {
            Direction::Forward => h.in_set(cur),
            Direction::Backward => h.out_set(cur),
        };
        cur = (back & reach[i - 1]).iter().next()?;
        out[i - 1] = cur;
    }
    OrientedWalk::new(out, x.directions.clone())
}
