//! Digraphs, oriented walks, level structure and instance generators.
//!
//! Vertices are dense ids `0..n`. Arcs have set semantics: loops and
//! antiparallel pairs are allowed, parallel arcs collapse.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::valueset::{ValueSet, MAX_VALUES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DigraphError {
    #[error("arc ({0}, {1}) has an endpoint outside 0..{2}")]
    ArcOutOfRange(usize, usize, usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("digraph is not balanced: arc {0}->{1} closes a cycle of nonzero net-length")]
    NotBalanced(usize, usize),
    #[error("level counts differ: {0} vs {1}")]
    LevelMismatch(usize, usize),
}

/// Immutable digraph with O(1) adjacency tests.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DigraphRepr", into = "DigraphRepr")]
pub struct Digraph {
    n: usize,
    arcs: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    matrix: Vec<bool>,
    // Bitmask rows, only populated when n <= MAX_VALUES.
    out_sets: Vec<ValueSet>,
    in_sets: Vec<ValueSet>,
}

#[derive(Serialize, Deserialize)]
struct DigraphRepr {
    n: usize,
    arcs: Vec<(usize, usize)>,
}

impl TryFrom<DigraphRepr> for Digraph {
    type Error = DigraphError;
    fn try_from(r: DigraphRepr) -> Result<Self, DigraphError> {
        Digraph::new(r.n, r.arcs)
    }
}

impl From<Digraph> for DigraphRepr {
    fn from(g: Digraph) -> Self {
        DigraphRepr { n: g.n, arcs: g.arcs }
    }
}

impl std::fmt::Debug for Digraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digraph(n={}, arcs={:?})", self.n, self.arcs)
    }
}

impl Digraph {
    pub fn new(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, DigraphError> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (u, v) in arcs {
            if u >= n || v >= n {
                return Err(DigraphError::ArcOutOfRange(u, v, n));
            }
            list.push((u, v));
        }
        list.sort_unstable();
        list.dedup();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        let mut matrix = vec![false; n * n];
        for &(u, v) in &list {
            out_adj[u].push(v);
            in_adj[v].push(u);
            matrix[u * n + v] = true;
        }
        for l in &mut in_adj {
            l.sort_unstable();
        }
        let (out_sets, in_sets) = if n <= MAX_VALUES {
            (
                out_adj.iter().map(|l| l.iter().copied().collect()).collect(),
                in_adj.iter().map(|l| l.iter().copied().collect()).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Digraph { n, arcs: list, out_adj, in_adj, matrix, out_sets, in_sets })
    }

    pub fn empty(n: usize) -> Self {
        Digraph::new(n, []).expect("arcless digraph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted, deduplicated arc list.
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    #[inline]
    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.matrix[u * self.n + v]
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_adj[v]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_adj[v]
    }

    /// Out-neighbourhood as a bitmask. Panics when `n > 64`.
    #[inline]
    pub fn out_set(&self, v: usize) -> ValueSet {
        self.out_sets[v]
    }

    #[inline]
    pub fn in_set(&self, v: usize) -> ValueSet {
        self.in_sets[v]
    }

    pub fn has_loop(&self, v: usize) -> bool {
        self.has_arc(v, v)
    }

    /// Re-derives the adjacency structures from the arc list and compares.
    pub fn check_mirror(&self) -> bool {
        let mut out = vec![Vec::new(); self.n];
        let mut inn = vec![Vec::new(); self.n];
        for &(u, v) in &self.arcs {
            if u >= self.n || v >= self.n {
                return false;
            }
            out[u].push(v);
            inn[v].push(u);
        }
        for l in out.iter_mut().chain(inn.iter_mut()) {
            l.sort_unstable();
        }
        let matrix_ok = (0..self.n)
            .all(|u| (0..self.n).all(|v| self.matrix[u * self.n + v] == out[u].binary_search(&v).is_ok()));
        out == self.out_adj && inn == self.in_adj && matrix_ok
    }

    /// Component id per vertex (ids in order of smallest member) and the count.
    pub fn weak_components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in self.out_adj[u].iter().chain(&self.in_adj[u]) {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    pub fn is_weakly_connected(&self) -> bool {
        self.n == 0 || self.weak_components().1 == 1
    }

    /// Induced subdigraph on `vertices` (taken in the given order); vertex `i`
    /// of the result is `vertices[i]` here.
    pub fn induced(&self, vertices: &[usize]) -> Digraph {
        let mut local = vec![usize::MAX; self.n];
        for (i, &v) in vertices.iter().enumerate() {
            local[v] = i;
        }
        let arcs = self
            .arcs
            .iter()
            .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]));
        Digraph::new(vertices.len(), arcs).expect("induced arcs are in range")
    }

    /// Text form: `n m` followed by `m` lines `u v`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# digraph v1").unwrap();
        writeln!(s, "{} {}", self.n, self.arcs.len()).unwrap();
        for &(u, v) in &self.arcs {
            writeln!(s, "{u} {v}").unwrap();
        }
        s
    }

    /// Parses the text form. Lines starting with `#` and blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self, DigraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or(DigraphError::Parse { line: 1, msg: "missing `n m` header".into() })?;
        let (n, m) = parse_pair(hline, header)?;
        let mut arcs = Vec::with_capacity(m);
        for _ in 0..m {
            let (line, body) = lines.next().ok_or(DigraphError::Parse {
                line: hline,
                msg: format!("header announces {m} arcs but fewer lines follow"),
            })?;
            let (u, v) = parse_pair(line, body)?;
            if u >= n || v >= n {
                return Err(DigraphError::Parse {
                    line,
                    msg: format!("arc ({u}, {v}) out of range for n = {n}"),
                });
            }
            arcs.push((u, v));
        }
        if let Some((line, _)) = lines.next() {
            return Err(DigraphError::Parse { line, msg: "trailing content after arc list".into() });
        }
        Digraph::new(n, arcs)
    }

    /// Symmetric closure: every arc gets its reverse.
    pub fn symmetric(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, DigraphError> {
        let mut arcs = Vec::new();
        for (u, v) in edges {
            arcs.push((u, v));
            arcs.push((v, u));
        }
        Digraph::new(n, arcs)
    }

    pub fn directed_cycle(n: usize) -> Self {
        Digraph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    pub fn directed_path(n: usize) -> Self {
        Digraph::new(n, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    pub fn complete_symmetric(n: usize) -> Self {
        Digraph::new(n, (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))).unwrap()
    }

    pub fn single_loop() -> Self {
        Digraph::new(1, [(0, 0)]).unwrap()
    }
}

fn parse_pair(line: usize, body: &str) -> Result<(usize, usize), DigraphError> {
    let mut it = body.split_whitespace();
    let mut next = |what: &str| -> Result<usize, DigraphError> {
        let tok = it.next().ok_or_else(|| DigraphError::Parse { line, msg: format!("missing {what}") })?;
        tok.parse().map_err(|_| DigraphError::Parse { line, msg: format!("invalid {what} `{tok}`") })
    };
    let a = next("first field")?;
    let b = next("second field")?;
    if it.next().is_some() {
        return Err(DigraphError::Parse { line, msg: "expected exactly two fields".into() });
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// A walk that may traverse arcs in either direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientedWalk {
    pub vertices: Vec<usize>,
    pub directions: Vec<Direction>,
}

impl OrientedWalk {
    pub fn new(vertices: Vec<usize>, directions: Vec<Direction>) -> Option<Self> {
        (!vertices.is_empty() && directions.len() + 1 == vertices.len()).then_some(OrientedWalk { vertices, directions })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn net_length(&self) -> i64 {
        self.directions
            .iter()
            .map(|d| match d {
                Direction::Forward => 1,
                Direction::Backward => -1,
            })
            .sum()
    }

    /// Every step uses an arc of `host` in its stated direction.
    pub fn is_walk_in(&self, host: &Digraph) -> bool {
        self.vertices.iter().all(|&v| v < host.n())
            && self.vertices.windows(2).zip(&self.directions).all(|(w, d)| match d {
                Direction::Forward => host.has_arc(w[0], w[1]),
                Direction::Backward => host.has_arc(w[1], w[0]),
            })
    }

    pub fn first(&self) -> usize {
        self.vertices[0]
    }

    pub fn last(&self) -> usize {
        *self.vertices.last().unwrap()
    }
}

/// Two walks are congruent when they follow the same forward/backward pattern.
pub fn is_congruent(w1: &OrientedWalk, w2: &OrientedWalk) -> bool {
    w1.directions == w2.directions
}

/// A balanced digraph with its level function (minimum 0 in every weak component).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeveledDigraph {
    pub base: Digraph,
    pub level: Vec<usize>,
}

impl LeveledDigraph {
    /// Number of levels, i.e. one more than the largest level.
    pub fn level_count(&self) -> usize {
        self.level.iter().max().map_or(0, |m| m + 1)
    }

    pub fn lowest_level(&self) -> impl Iterator<Item = usize> + '_ {
        self.level.iter().enumerate().filter(|(_, &l)| l == 0).map(|(v, _)| v)
    }

    pub fn respects_levels(&self) -> bool {
        self.base.arcs().iter().all(|&(u, v)| self.level[v] == self.level[u] + 1)
    }
}

/// Assigns levels with `level(v) = level(u) + 1` for every arc `u -> v`.
pub fn compute_levels(g: &Digraph) -> Result<LeveledDigraph, DigraphError> {
    let n = g.n();
    let mut pot: Vec<Option<i64>> = vec![None; n];
    let mut level = vec![0usize; n];
    for s in 0..n {
        if pot[s].is_some() {
            continue;
        }
        pot[s] = Some(0);
        let mut members = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let pu = pot[u].unwrap();
            let nbrs = g.out_neighbors(u).iter().map(|&v| (v, pu + 1, (u, v)));
            let nbrs = nbrs.chain(g.in_neighbors(u).iter().map(|&v| (v, pu - 1, (v, u))));
            for (v, want, arc) in nbrs {
                match pot[v] {
                    None => {
                        pot[v] = Some(want);
                        members.push(v);
                        queue.push_back(v);
                    }
                    Some(p) if p != want => return Err(DigraphError::NotBalanced(arc.0, arc.1)),
                    Some(_) => {}
                }
            }
        }
        let min = members.iter().map(|&v| pot[v].unwrap()).min().unwrap();
        for &v in &members {
            level[v] = (pot[v].unwrap() - min) as usize;
        }
    }
    Ok(LeveledDigraph { base: g.clone(), level })
}

/// Disjoint union of `h1` and `h2` plus an apex vertex (the last id) with an
/// arc to every lowest-level vertex of both.
pub fn apex_join(h1: &LeveledDigraph, h2: &LeveledDigraph) -> Result<Digraph, DigraphError> {
    let (l1, l2) = (h1.level_count(), h2.level_count());
    if l1 != l2 {
        return Err(DigraphError::LevelMismatch(l1, l2));
    }
    let n1 = h1.base.n();
    let n2 = h2.base.n();
    let apex = n1 + n2;
    let mut arcs: Vec<(usize, usize)> = h1.base.arcs().to_vec();
    arcs.extend(h2.base.arcs().iter().map(|&(u, v)| (u + n1, v + n1)));
    arcs.extend(h1.lowest_level().map(|v| (apex, v)));
    arcs.extend(h2.lowest_level().map(|v| (apex, v + n1)));
    Digraph::new(apex + 1, arcs)
}

/// `g` plus an apex vertex (the last id) with an arc to each lowest-level vertex.
pub fn apex_join_instance(g: &LeveledDigraph) -> Digraph {
    let apex = g.base.n();
    let mut arcs = g.base.arcs().to_vec();
    arcs.extend(g.lowest_level().map(|v| (apex, v)));
    Digraph::new(apex + 1, arcs).expect("apex arcs are in range")
}

/// Each ordered pair (loops included) becomes an arc with probability `arc_prob`.
pub fn gen_random_digraph(n: usize, arc_prob: f64, seed: u64) -> Digraph {
    let p = arc_prob.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if rng.gen_bool(p) {
                arcs.push((u, v));
            }
        }
    }
    Digraph::new(n, arcs).unwrap()
}

/// Random balanced digraph: vertices get levels in `0..levels`, arcs only
/// between consecutive levels. The returned levels are normalised per component.
pub fn gen_balanced(n: usize, levels: usize, arc_prob: f64, seed: u64) -> LeveledDigraph {
    let levels = levels.max(1);
    let p = arc_prob.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assigned: Vec<usize> = (0..n).map(|v| if v < levels { v } else { rng.gen_range(0..levels) }).collect();
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if assigned[v] == assigned[u] + 1 && rng.gen_bool(p) {
                arcs.push((u, v));
            }
        }
    }
    let g = Digraph::new(n, arcs).unwrap();
    compute_levels(&g).expect("arcs only join consecutive levels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn congruence() {
        use Direction::*;
        let w1 = OrientedWalk::new(vec![0, 1, 2], vec![Forward, Forward]).unwrap();
        let w2 = OrientedWalk::new(vec![5, 6, 7], vec![Forward, Forward]).unwrap();
        let w3 = OrientedWalk::new(vec![0, 1, 0], vec![Forward, Backward]).unwrap();
        assert!(is_congruent(&w1, &w2));
        assert!(!is_congruent(&w3, &w1));
        assert_eq!(w3.net_length(), 0);
        assert!(OrientedWalk::new(vec![0, 1], vec![]).is_none());
    }

    #[test]
    fn levels_of_path_and_cycle() {
        let p = Digraph::directed_path(3);
        assert_eq!(compute_levels(&p).unwrap().level, vec![0, 1, 2]);
        assert!(matches!(compute_levels(&Digraph::directed_cycle(3)), Err(DigraphError::NotBalanced(..))));
        // two components, each normalised to 0
        let g = Digraph::new(4, [(1, 0), (2, 3)]).unwrap();
        assert_eq!(compute_levels(&g).unwrap().level, vec![1, 0, 0, 1]);
    }

    #[test]
    fn apex_join_single_arcs() {
        let arc = compute_levels(&Digraph::directed_path(2)).unwrap();
        let h = apex_join(&arc, &arc).unwrap();
        assert_eq!(h.n(), 5);
        assert_eq!(h.out_neighbors(4), &[0, 2]);
        assert!(h.is_weakly_connected());
        let lv = compute_levels(&h).unwrap();
        assert_eq!(lv.level, vec![1, 2, 1, 2, 0]);
        let three = compute_levels(&Digraph::directed_path(3)).unwrap();
        assert_eq!(apex_join(&arc, &three), Err(DigraphError::LevelMismatch(2, 3)));
    }

    #[test]
    fn apex_join_instance_single_arc() {
        let arc = compute_levels(&Digraph::directed_path(2)).unwrap();
        let g = apex_join_instance(&arc);
        assert_eq!(g.n(), 3);
        assert_eq!(g.out_neighbors(2), &[0]);
        assert!(g.is_weakly_connected());
        assert_eq!(compute_levels(&g).unwrap().level, vec![1, 2, 0]);
    }

    #[test]
    fn generators() {
        assert_eq!(gen_random_digraph(5, 0.0, 1).arc_count(), 0);
        assert_eq!(gen_random_digraph(3, 1.0, 1).arc_count(), 9);
        assert_eq!(gen_random_digraph(6, 0.4, 9), gen_random_digraph(6, 0.4, 9));
        assert_eq!(gen_balanced(9, 3, 0.5, 4), gen_balanced(9, 3, 0.5, 4));
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let g = Digraph::new(3, [(0, 1), (2, 2)]).unwrap();
        assert_eq!(Digraph::from_text(&g.to_text()).unwrap(), g);
        let err = Digraph::from_text("2 1\n0 5\n").unwrap_err();
        assert_eq!(err, DigraphError::Parse { line: 2, msg: "arc (0, 5) out of range for n = 2".into() });
        assert!(matches!(Digraph::from_text("2 2\n0 1\n"), Err(DigraphError::Parse { .. })));
        assert!(matches!(Digraph::from_text("2 0\n0 1\n"), Err(DigraphError::Parse { line: 2, .. })));
    }

    #[test]
    fn balanced_dag_levels_match_generating_levels() {
        // Build DAGs from a known level assignment; the normalised assignment is the oracle.
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let assigned: Vec<i64> = (0..20).map(|_| rng.gen_range(0..5)).collect();
            let mut arcs = Vec::new();
            for u in 0..20 {
                for v in 0..20 {
                    if assigned[v] == assigned[u] + 1 && rng.gen_bool(0.3) {
                        arcs.push((u, v));
                    }
                }
            }
            let g = Digraph::new(20, arcs).unwrap();
            let (comp, count) = g.weak_components();
            let mut min = vec![i64::MAX; count];
            for v in 0..20 {
                min[comp[v]] = min[comp[v]].min(assigned[v]);
            }
            let expected: Vec<usize> = (0..20).map(|v| (assigned[v] - min[comp[v]]) as usize).collect();
            assert_eq!(compute_levels(&g).unwrap().level, expected);
        }
    }

    proptest! {
        #[test]
        fn mirror_holds_for_generated(n in 0usize..12, p in 0.0f64..1.0, seed in any::<u64>()) {
            prop_assert!(gen_random_digraph(n, p, seed).check_mirror());
        }

        #[test]
        fn levels_respect_arcs(n in 0usize..15, p in 0.0f64..1.0, seed in any::<u64>()) {
            let g = gen_random_digraph(n, p * 0.3, seed);
            if let Ok(lg) = compute_levels(&g) {
                prop_assert!(lg.respects_levels());
            }
        }

        #[test]
        fn apex_join_is_connected_and_balanced(n1 in 1usize..8, n2 in 1usize..8, p in 0.0f64..1.0, s1 in any::<u64>(), s2 in any::<u64>()) {
            let h1 = gen_balanced(n1, 3, p, s1);
            let h2 = gen_balanced(n2, 3, p, s2);
            match apex_join(&h1, &h2) {
                Ok(h) => {
                    prop_assert!(h.is_weakly_connected());
                    let lv = compute_levels(&h).unwrap();
                    let apex = h.n() - 1;
                    prop_assert_eq!(lv.level[apex], 0);
                    for v in 0..n1 { prop_assert_eq!(lv.level[v], h1.level[v] + 1); }
                    for v in 0..n2 { prop_assert_eq!(lv.level[n1 + v], h2.level[v] + 1); }
                    prop_assert_eq!(lv.level_count(), h1.level_count() + 1);
                }
                Err(DigraphError::LevelMismatch(a, b)) => prop_assert_ne!(a, b),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn congruence_is_elementwise(a in proptest::collection::vec(any::<bool>(), 0..6), b in proptest::collection::vec(any::<bool>(), 0..6)) {
            let mk = |bits: &Vec<bool>| OrientedWalk::new(
                (0..=bits.len()).collect(),
                bits.iter().map(|&f| if f { Direction::Forward } else { Direction::Backward }).collect(),
            ).unwrap();
            let oracle = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x == y);
            prop_assert_eq!(is_congruent(&mk(&a), &mk(&b)), oracle);
        }
    }
}
