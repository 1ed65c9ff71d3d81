//! Arc and pair consistency against a naive fixpoint computation, plus
//! idempotence, scan-order confluence and monotonicity.

use dighom::consistency::{arc_consistency, preprocess, preprocess_ordered, ListAssignment, ScanOrder};
use dighom::digraph::{gen_random_digraph, Digraph};
use dighom::valueset::ValueSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Repeats every removal rule over every (x, a) until nothing changes.
fn naive_arc(g: &Digraph, h: &Digraph, lists: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let mut l = lists.to_vec();
    loop {
        let mut changed = false;
        for x in 0..g.n() {
            for a in 0..h.n() {
                if !l[x][a] {
                    continue;
                }
                let out_ok = g.arcs().iter().filter(|&&(u, _)| u == x).all(|&(_, y)| (0..h.n()).any(|b| l[y][b] && h.has_arc(a, b)));
                let in_ok = g.arcs().iter().filter(|&&(_, v)| v == x).all(|&(y, _)| (0..h.n()).any(|b| l[y][b] && h.has_arc(b, a)));
                if !(out_ok && in_ok) {
                    l[x][a] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return l;
        }
    }
}

/// Unary and pair lists at the greatest fixpoint of: arc support, list
/// membership of pairs, arcs of G mapped to arcs of H, the all-z path rule, and
/// the diagonal `(a, a) in L(x, x)` iff `a in L(x)`.
fn naive_preprocess(g: &Digraph, h: &Digraph, lists: &[Vec<bool>]) -> (Vec<Vec<bool>>, Vec<Vec<Vec<Vec<bool>>>>) {
    let n = g.n();
    let m = h.n();
    let mut l = naive_arc(g, h, lists);
    // p[x][y][a][b]
    let mut p = vec![vec![vec![vec![false; m]; m]; n]; n];
    for x in 0..n {
        for y in 0..n {
            for a in 0..m {
                for b in 0..m {
                    p[x][y][a][b] = l[x][a] && l[y][b] && (x != y || a == b);
                }
            }
        }
    }
    loop {
        let mut changed = false;
        let kill = |p: &mut Vec<Vec<Vec<Vec<bool>>>>, x: usize, y: usize, a: usize, b: usize| {
            if p[x][y][a][b] {
                p[x][y][a][b] = false;
                p[y][x][b][a] = false;
                true
            } else {
                false
            }
        };
        for &(x, y) in g.arcs() {
            for a in 0..m {
                for b in 0..m {
                    if !h.has_arc(a, b) {
                        changed |= kill(&mut p, x, y, a, b);
                    }
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                for a in 0..m {
                    for b in 0..m {
                        if !p[x][y][a][b] {
                            continue;
                        }
                        let bad = !l[x][a]
                            || !l[y][b]
                            || (0..n).any(|z| !(0..m).any(|c| p[x][z][a][c] && p[z][y][c][b]));
                        if bad {
                            changed |= kill(&mut p, x, y, a, b);
                        }
                    }
                }
            }
        }
        for x in 0..n {
            for a in 0..m {
                if l[x][a] && !p[x][x][a][a] {
                    l[x][a] = false;
                    changed = true;
                }
            }
        }
        let after = naive_arc(g, h, &l);
        if after != l {
            l = after;
            changed = true;
        }
        if !changed {
            return (l, p);
        }
    }
}

fn to_sets(l: &[Vec<bool>]) -> Vec<ValueSet> {
    l.iter().map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(a, _)| a).collect()).collect()
}

fn instance(seed: u64) -> (Digraph, Digraph, Vec<Vec<bool>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gn = rng.gen_range(1..=6);
    let hn = rng.gen_range(1..=4);
    let g = gen_random_digraph(gn, rng.gen_range(0.1..0.5), rng.gen());
    let h = gen_random_digraph(hn, rng.gen_range(0.2..0.8), rng.gen());
    let lists = (0..gn).map(|_| (0..hn).map(|_| rng.gen_bool(0.8)).collect()).collect();
    (g, h, lists)
}

#[test]
fn directed_cycle_into_directed_path_is_empty() {
    let g = Digraph::directed_cycle(3);
    let h = Digraph::directed_path(3);
    let mut l = ListAssignment::full(3, 3);
    assert!(preprocess(&g, &h, &mut l).is_err());
    let (naive, _) = naive_preprocess(&g, &h, &vec![vec![true; 3]; 3]);
    assert!(naive.iter().any(|row| row.iter().all(|&b| !b)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn arc_consistency_matches_naive_fixpoint(seed in any::<u64>()) {
        let (g, h, lists) = instance(seed);
        let naive = naive_arc(&g, &h, &lists);
        let mut l = ListAssignment::from_lists(to_sets(&lists), h.n());
        l.pair_tracking_enabled = false;
        match arc_consistency(&g, &h, &mut l) {
            Ok(_) => prop_assert_eq!(l.lists(), &to_sets(&naive)[..]),
            Err(_) => prop_assert!(naive.iter().any(|row| row.iter().all(|&b| !b))),
        }
    }

    #[test]
    fn preprocess_matches_naive_fixpoint(seed in any::<u64>()) {
        let (g, h, lists) = instance(seed);
        let (nl, np) = naive_preprocess(&g, &h, &lists);
        let naive_empty = nl.iter().any(|row| row.iter().all(|&b| !b));
        let mut l = ListAssignment::from_lists(to_sets(&lists), h.n());
        match preprocess(&g, &h, &mut l) {
            Ok(_) => {
                prop_assert!(!naive_empty);
                prop_assert_eq!(l.lists(), &to_sets(&nl)[..]);
                for x in 0..g.n() {
                    for y in 0..g.n() {
                        for a in 0..h.n() {
                            for b in 0..h.n() {
                                prop_assert_eq!(l.pair_allowed(x, y, a, b), np[x][y][a][b], "({}, {}) ({}, {})", x, y, a, b);
                            }
                        }
                    }
                }
            }
            Err(_) => prop_assert!(naive_empty),
        }
    }

    #[test]
    fn preprocess_is_idempotent_confluent_and_shrinking(seed in any::<u64>()) {
        let (g, h, lists) = instance(seed);
        let start = ListAssignment::from_lists(to_sets(&lists), h.n());
        let mut asc = start.clone();
        let mut desc = start.clone();
        let ra = preprocess_ordered(&g, &h, &mut asc, ScanOrder::Ascending);
        let rd = preprocess_ordered(&g, &h, &mut desc, ScanOrder::Descending);
        prop_assert_eq!(ra.is_ok(), rd.is_ok());
        if ra.is_ok() {
            prop_assert_eq!(&asc, &desc);
            for (after, before) in asc.lists().iter().zip(start.lists()) {
                prop_assert!(after.is_subset(*before));
            }
            let mut again = asc.clone();
            let removed = preprocess(&g, &h, &mut again).unwrap();
            prop_assert!(removed.unary.is_empty() && removed.pairs == 0);
            prop_assert_eq!(again, asc);
        }
    }

    #[test]
    fn rerun_after_removals_matches_fresh_run(seed in any::<u64>(), picks in proptest::collection::vec((0usize..6, 0usize..4), 1..4)) {
        let (g, h, lists) = instance(seed);
        let mut l = ListAssignment::from_lists(to_sets(&lists), h.n());
        if preprocess(&g, &h, &mut l).is_err() {
            return Ok(());
        }
        for (x, a) in picks {
            if x < g.n() && a < h.n() {
                l.remove_value(x, a);
            }
        }
        let start: Vec<Vec<bool>> = l.lists().iter().map(|s| (0..h.n()).map(|a| s.contains(a)).collect()).collect();
        let (nl, np) = naive_preprocess(&g, &h, &start);
        let naive_empty = nl.iter().any(|row| row.iter().all(|&b| !b));
        match preprocess(&g, &h, &mut l) {
            Ok(_) => {
                prop_assert!(!naive_empty);
                prop_assert_eq!(l.lists(), &to_sets(&nl)[..]);
                for x in 0..g.n() {
                    for y in 0..g.n() {
                        for a in 0..h.n() {
                            for b in 0..h.n() {
                                prop_assert_eq!(l.pair_allowed(x, y, a, b), np[x][y][a][b]);
                            }
                        }
                    }
                }
            }
            Err(_) => prop_assert!(naive_empty),
        }
    }
}
