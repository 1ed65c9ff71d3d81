//! Exact reference solver: backtracking search and exhaustive enumeration.
//!
//! Kept independent of the consistency module so it can serve as ground truth for it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digraph::Digraph;
use crate::valueset::ValueSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Homomorphism {
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactOutcome {
    Found(Homomorphism),
    Refuted,
    BudgetExhausted,
}

impl ExactOutcome {
    pub fn is_found(&self) -> bool {
        matches!(self, ExactOutcome::Found(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("more than {0} homomorphisms")]
    CapExceeded(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyError {
    #[error("assignment has {got} entries, G has {expected} vertices")]
    Length { expected: usize, got: usize },
    #[error("vertex {x} is mapped to {value}, outside V(H)")]
    Range { x: usize, value: usize },
    #[error("vertex {x} is mapped to {value}, outside its list")]
    List { x: usize, value: usize },
    #[error("arc ({u}, {v}) is mapped to the non-arc ({0}, {1})", .images.0, .images.1)]
    Arc { u: usize, v: usize, images: (usize, usize) },
}

/// Checks `assignment` edge by edge; returns the first violation.
pub fn verify(g: &Digraph, h: &Digraph, lists: Option<&[ValueSet]>, assignment: &[usize]) -> Result<(), VerifyError> {
    if assignment.len() != g.n() {
        return Err(VerifyError::Length { expected: g.n(), got: assignment.len() });
    }
    for (x, &v) in assignment.iter().enumerate() {
        if v >= h.n() {
            return Err(VerifyError::Range { x, value: v });
        }
        if let Some(l) = lists {
            if !l[x].contains(v) {
                return Err(VerifyError::List { x, value: v });
            }
        }
    }
    for &(u, v) in g.arcs() {
        let images = (assignment[u], assignment[v]);
        if !h.has_arc(images.0, images.1) {
            return Err(VerifyError::Arc { u, v, images });
        }
    }
    Ok(())
}

fn initial_domains(g: &Digraph, h: &Digraph, lists: Option<&[ValueSet]>) -> Vec<ValueSet> {
    (0..g.n()).map(|x| lists.map_or(ValueSet::full(h.n()), |l| l[x] & ValueSet::full(h.n()))).collect()
}

/// Plain arc-consistency fixpoint by repeated full passes; false on a wipe-out.
fn revise_all(g: &Digraph, h: &Digraph, dom: &mut [ValueSet]) -> bool {
    loop {
        let mut changed = false;
        for &(u, v) in g.arcs() {
            let keep_u: ValueSet = dom[u].iter().filter(|&a| !(h.out_set(a) & dom[v]).is_empty()).collect();
            if keep_u != dom[u] {
                dom[u] = keep_u;
                changed = true;
            }
            let keep_v: ValueSet = dom[v].iter().filter(|&b| !(h.in_set(b) & dom[u]).is_empty()).collect();
            if keep_v != dom[v] {
                dom[v] = keep_v;
                changed = true;
            }
            if dom[u].is_empty() || dom[v].is_empty() {
                return false;
            }
        }
        if !changed {
            return dom.iter().all(|d| !d.is_empty());
        }
    }
}

/// Backtracking with arc consistency at every node; smallest domain first, values ascending.
pub fn solve_exact(g: &Digraph, h: &Digraph, lists: Option<&[ValueSet]>, node_budget: u64) -> ExactOutcome {
    let mut dom = initial_domains(g, h, lists);
    if dom.iter().any(|d| d.is_empty()) {
        return ExactOutcome::Refuted;
    }
    let mut nodes = 0u64;
    match search(g, h, &mut dom, &mut nodes, node_budget) {
        Some(true) => {
            let assignment: Vec<usize> = dom.iter().map(|d| d.iter().next().unwrap()).collect();
            debug_assert!(verify(g, h, lists, &assignment).is_ok());
            ExactOutcome::Found(Homomorphism { assignment })
        }
        Some(false) => ExactOutcome::Refuted,
        None => ExactOutcome::BudgetExhausted,
    }
}

/// `Some(true)` leaves a singleton solution in `dom`.
fn search(g: &Digraph, h: &Digraph, dom: &mut Vec<ValueSet>, nodes: &mut u64, budget: u64) -> Option<bool> {
    *nodes += 1;
    if *nodes > budget {
        return None;
    }
    if !revise_all(g, h, dom) {
        return Some(false);
    }
    let var = (0..dom.len()).filter(|&x| dom[x].len() > 1).min_by_key(|&x| (dom[x].len(), x));
    let Some(var) = var else {
        return Some(true);
    };
    for v in dom[var] {
        let mut next = dom.clone();
        next[var] = ValueSet::singleton(v);
        match search(g, h, &mut next, nodes, budget) {
            Some(true) => {
                *dom = next;
                return Some(true);
            }
            Some(false) => {}
            None => return None,
        }
    }
    Some(false)
}

/// All homomorphisms (respecting `lists`), in lexicographic order of assignments.
pub fn enumerate_all(
    g: &Digraph,
    h: &Digraph,
    lists: Option<&[ValueSet]>,
    cap: usize,
) -> Result<Vec<Homomorphism>, OracleError> {
    let dom = initial_domains(g, h, lists);
    let mut out = Vec::new();
    let mut cur = vec![0usize; g.n()];
    if g.n() == 0 {
        return Ok(vec![Homomorphism { assignment: vec![] }]);
    }
    enumerate_rec(g, h, &dom, 0, &mut cur, &mut out, cap)?;
    Ok(out)
}

fn enumerate_rec(
    g: &Digraph,
    h: &Digraph,
    dom: &[ValueSet],
    x: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<Homomorphism>,
    cap: usize,
) -> Result<(), OracleError> {
    'values: for v in dom[x] {
        cur[x] = v;
        // only arcs between x and earlier vertices (and loops at x)
        for &y in g.out_neighbors(x) {
            if y <= x && !h.has_arc(v, cur[y]) {
                continue 'values;
            }
        }
        for &y in g.in_neighbors(x) {
            if y < x && !h.has_arc(cur[y], v) {
                continue 'values;
            }
        }
        if x + 1 == dom.len() {
            if out.len() == cap {
                return Err(OracleError::CapExceeded(cap));
            }
            out.push(Homomorphism { assignment: cur.clone() });
        } else {
            enumerate_rec(g, h, dom, x + 1, cur, out, cap)?;
        }
    }
    Ok(())
}
