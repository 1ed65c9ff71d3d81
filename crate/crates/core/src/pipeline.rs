//! The full solve: full lists, `f` from `phi`, preprocessing, the non-minority
//! reduction, then the Maltsev phase.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chom::{validate_all, ConsistentHom, Violation};
use crate::consistency::{preprocess, EmptyListSignal, ListAssignment};
use crate::digraph::Digraph;
use crate::minority::{derive_maltsev, maltsev_solve, MaltsevError, MaltsevOutcome, MaltsevStats};
use crate::oracle::{verify, Homomorphism};
use crate::polymorphism::{analyze, PolymorphismTable};
use crate::reduction::{remove_not_minority, FaultRecord, NmConfig, NmOutcome, NmTrace, PickOrder, ValidateFrequency};
use crate::valueset::ValueSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PipelineConfig {
    pub pick_order: PickOrder,
    pub validate: ValidateFrequency,
    /// Outer iterations of the reduction, over all depths.
    pub step_budget: u64,
    /// Calls of the Maltsev step, over all depths.
    pub maltsev_budget: u64,
    pub fault: Option<crate::reduction::Fault>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pick_order: PickOrder::default(),
            validate: ValidateFrequency::default(),
            step_budget: 200_000,
            maltsev_budget: 1_000_000,
            fault: None,
        }
    }
}

impl PipelineConfig {
    pub fn nm_config(&self) -> NmConfig {
        NmConfig { pick_order: self.pick_order, step_budget: self.step_budget, validate: self.validate, fault: self.fault }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Preprocess,
    RemoveNm,
    Maltsev,
}

/// A failed internal claim, flattened for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalsificationEvent {
    pub phase: Phase,
    /// `validator`, `root-missing`, `not-minority`, ...
    pub check: String,
    pub depth: usize,
    pub vertex: Option<usize>,
    pub detail: String,
    pub witness: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    Yes { homomorphism: Homomorphism },
    No { phase: Phase, signal: Option<EmptyListSignal> },
    Falsified { event: FalsificationEvent },
    BudgetExhausted { phase: Phase },
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Yes { .. } => "yes",
            Verdict::No { .. } => "no",
            Verdict::Falsified { .. } => "falsified",
            Verdict::BudgetExhausted { .. } => "budget-exhausted",
        }
    }
}

/// Wall-clock microseconds per phase; never part of a digest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub preprocess_us: u64,
    pub remove_nm_us: u64,
    pub maltsev_us: u64,
}

impl PhaseTimings {
    pub fn total_us(&self) -> u64 {
        self.preprocess_us + self.remove_nm_us + self.maltsev_us
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub verdict: Verdict,
    #[serde(skip)]
    pub timings: PhaseTimings,
    pub trace_digest: String,
    pub list_history_digest: String,
    pub nm_iterations: u64,
    pub validations: u64,
    /// Set once the Maltsev phase started.
    pub maltsev: Option<MaltsevStats>,
    pub fault: Option<FaultRecord>,
    #[serde(skip)]
    pub trace: NmTrace,
    /// Lists and `f` as left by the reduction (before the Maltsev phase).
    #[serde(skip)]
    pub after_nm: Option<(ListAssignment, ConsistentHom)>,
}

impl PipelineResult {
    /// sha256 of the canonical JSON form (timings excluded).
    pub fn digest(&self) -> String {
        let doc = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(doc))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("table size {table} does not match |H| = {h}")]
    SizeMismatch { table: usize, h: usize },
    #[error("phi is not a weak near-unanimity polymorphism of H: {0}")]
    NotWeakNu(String),
    #[error("consistent homomorphism setup failed: {0}")]
    Setup(String),
}

struct ListHistory(Sha256);

impl ListHistory {
    fn record(&mut self, label: &str, lists: &[ValueSet]) {
        self.0.update(label.as_bytes());
        for l in lists {
            self.0.update(l.bits().to_le_bytes());
        }
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

fn trace_digest(trace: &NmTrace) -> String {
    let mut hasher = Sha256::new();
    for e in &trace.events {
        hasher.update(e.to_line().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn micros(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

/// Runs every phase; `phi` must be a weak NU polymorphism of `h`.
pub fn run_pipeline(g: &Digraph, h: &Digraph, phi: &PolymorphismTable, cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    if phi.h_size() != h.n() {
        return Err(PipelineError::SizeMismatch { table: phi.h_size(), h: h.n() });
    }
    let report = analyze(h, phi).map_err(|e| PipelineError::NotWeakNu(e.to_string()))?;
    if !report.is_valid_weak_nu() {
        return Err(PipelineError::NotWeakNu(format!("{:?}", report.witnesses.first())));
    }

    let mut timings = PhaseTimings::default();
    let mut history = ListHistory(Sha256::new());
    let mut result = PipelineResult {
        verdict: Verdict::BudgetExhausted { phase: Phase::Preprocess },
        timings,
        trace_digest: trace_digest(&NmTrace::default()),
        list_history_digest: String::new(),
        nm_iterations: 0,
        validations: 0,
        maltsev: None,
        fault: None,
        trace: NmTrace::default(),
        after_nm: None,
    };

    let t = Instant::now();
    let mut lists = ListAssignment::full(g.n(), h.n());
    history.record("initial", lists.lists());
    let pre = preprocess(g, h, &mut lists);
    timings.preprocess_us = micros(t);
    history.record("preprocess", lists.lists());
    if let Err(sig) = pre {
        result.verdict = Verdict::No { phase: Phase::Preprocess, signal: Some(sig) };
        return Ok(finish(result, timings, history));
    }
    let mut f = ConsistentHom::init_from_phi(phi, &lists).map_err(|e| PipelineError::Setup(e.to_string()))?;
    f.mask_to(lists.lists());
    if cfg.validate != ValidateFrequency::Off {
        result.validations += 1;
        let v = validate_all(&f, g, h, lists.lists());
        if !v.is_ok() {
            let witness = v.violations.into_iter().next();
            result.verdict = Verdict::Falsified {
                event: FalsificationEvent {
                    phase: Phase::Preprocess,
                    check: "validator".into(),
                    depth: 0,
                    vertex: None,
                    detail: "validation failed after preprocessing".into(),
                    witness,
                },
            };
            return Ok(finish(result, timings, history));
        }
    }

    let t = Instant::now();
    let run = remove_not_minority(g, h, &mut lists, &mut f, &cfg.nm_config());
    timings.remove_nm_us = micros(t);
    history.record("remove-nm", lists.lists());
    result.nm_iterations = run.iterations;
    result.validations += run.validations;
    result.fault = run.fault;
    result.trace_digest = trace_digest(&run.trace);
    result.trace = run.trace;
    result.after_nm = Some((lists.clone(), f.clone()));
    match run.outcome {
        NmOutcome::Done => {}
        NmOutcome::NoHomomorphism(sig) => {
            result.verdict = Verdict::No { phase: Phase::RemoveNm, signal: Some(sig) };
            return Ok(finish(result, timings, history));
        }
        NmOutcome::Falsified(fals) => {
            result.verdict = Verdict::Falsified {
                event: FalsificationEvent {
                    phase: Phase::RemoveNm,
                    check: fals.check.to_string(),
                    depth: fals.depth,
                    vertex: fals.vertex,
                    detail: fals.detail,
                    witness: fals.witness,
                },
            };
            return Ok(finish(result, timings, history));
        }
        NmOutcome::BudgetExhausted => {
            result.verdict = Verdict::BudgetExhausted { phase: Phase::RemoveNm };
            return Ok(finish(result, timings, history));
        }
    }

    let t = Instant::now();
    let hm = match derive_maltsev(&f, &lists) {
        Ok(hm) => hm,
        Err(err) => {
            let vertex = match err {
                MaltsevError::NotMinority { x, .. } | MaltsevError::Undefined { x, .. } => Some(x),
                MaltsevError::CongruenceMismatch => None,
            };
            timings.maltsev_us = micros(t);
            result.verdict = Verdict::Falsified {
                event: FalsificationEvent {
                    phase: Phase::Maltsev,
                    check: "not-minority".into(),
                    depth: 0,
                    vertex,
                    detail: err.to_string(),
                    witness: None,
                },
            };
            return Ok(finish(result, timings, history));
        }
    };
    let mrun = maltsev_solve(g, h, &lists, &hm, cfg.maltsev_budget);
    timings.maltsev_us = micros(t);
    result.maltsev = Some(mrun.stats);
    result.verdict = match mrun.outcome {
        MaltsevOutcome::Found(hom) => {
            // unconditional: a Yes must verify against the original instance
            if let Err(e) = verify(g, h, None, &hom.assignment) {
                Verdict::Falsified {
                    event: FalsificationEvent {
                        phase: Phase::Maltsev,
                        check: "internal".into(),
                        depth: 0,
                        vertex: None,
                        detail: format!("assignment does not verify: {e}"),
                        witness: None,
                    },
                }
            } else {
                Verdict::Yes { homomorphism: hom }
            }
        }
        MaltsevOutcome::NoHomomorphism => Verdict::No { phase: Phase::Maltsev, signal: None },
        MaltsevOutcome::BudgetExhausted => Verdict::BudgetExhausted { phase: Phase::Maltsev },
    };
    Ok(finish(result, timings, history))
}

fn finish(mut result: PipelineResult, timings: PhaseTimings, mut history: ListHistory) -> PipelineResult {
    history.record(result.verdict.kind(), &[]);
    result.timings = timings;
    result.list_history_digest = history.finish();
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymorphism::{find_weak_nu, SearchOutcome};

    fn wnu(h: &Digraph) -> PolymorphismTable {
        match find_weak_nu(h, 3, 1_000_000).unwrap() {
            SearchOutcome::Found(t) => t,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loop_target_gives_constant_map() {
        let h = Digraph::single_loop();
        let g = crate::digraph::gen_random_digraph(6, 0.4, 9);
        let r = run_pipeline(&g, &h, &wnu(&h), &PipelineConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Yes { homomorphism: Homomorphism { assignment: vec![0; 6] } });
    }

    #[test]
    fn odd_cycle_into_k2_is_no() {
        let h = Digraph::complete_symmetric(2);
        let g = Digraph::symmetric(5, (0..5).map(|i| (i, (i + 1) % 5))).unwrap();
        let r = run_pipeline(&g, &h, &wnu(&h), &PipelineConfig::default()).unwrap();
        assert_eq!(r.verdict.kind(), "no");
        let g = Digraph::symmetric(6, (0..6).map(|i| (i, (i + 1) % 6))).unwrap();
        let r = run_pipeline(&g, &h, &wnu(&h), &PipelineConfig::default()).unwrap();
        assert_eq!(r.verdict.kind(), "yes");
    }

    #[test]
    fn rejects_non_polymorphism() {
        let h = Digraph::directed_cycle(3);
        let phi = PolymorphismTable::from_fn(3, 3, |t| (t[0] + t[1] + t[2]) % 3).unwrap();
        let g = Digraph::directed_cycle(3);
        assert!(matches!(run_pipeline(&g, &h, &phi, &PipelineConfig::default()), Err(PipelineError::NotWeakNu(_))));
    }

    #[test]
    fn digest_ignores_timings() {
        let h = Digraph::directed_path(3);
        let g = crate::digraph::gen_random_digraph(5, 0.3, 4);
        let phi = wnu(&h);
        let a = run_pipeline(&g, &h, &phi, &PipelineConfig::default()).unwrap();
        let mut b = run_pipeline(&g, &h, &phi, &PipelineConfig::default()).unwrap();
        b.timings.preprocess_us += 1234;
        assert_eq!(a.digest(), b.digest());
    }
}
