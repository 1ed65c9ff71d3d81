//! Fuzzing against the exact oracle, the two-component counterexample family,
//! JSON-lines reports and replay.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digraph::{apex_join, apex_join_instance, compute_levels, gen_balanced, gen_random_digraph, Digraph, LeveledDigraph};
use crate::chom::ConsistentHom;
use crate::consistency::{preprocess, ListAssignment};
use crate::oracle::{enumerate_all, solve_exact, verify, ExactOutcome};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineResult, Verdict};
use crate::reduction::{replay_trace, ValidateFrequency};
use crate::polymorphism::{analyze, find_weak_nu_with, PolymorphismTable, SearchOptions, SearchOutcome};
use crate::valueset::ValueSet;

pub const REPORT_VERSION: u32 = 1;

/// Sizes for the two-component family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FamilyParams {
    /// Vertex levels of each component.
    pub levels: usize,
    pub h1_size: usize,
    pub h2_size: usize,
    /// Vertices of `G` before the apex.
    pub g0_size: usize,
    /// Arc probability in permille.
    pub arc_permille: u32,
    /// Resample until the oracle finds no homomorphism `G0 -> H2`.
    pub require_no_h2_hom: bool,
    pub max_attempts: u32,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            levels: 4,
            h1_size: 6,
            h2_size: 8,
            g0_size: 8,
            arc_permille: 600,
            require_no_h2_hom: true,
            max_attempts: 400,
        }
    }
}

impl FamilyParams {
    /// Two single arcs; the apex join has 5 vertices.
    pub fn minimal() -> Self {
        FamilyParams {
            levels: 2,
            h1_size: 2,
            h2_size: 2,
            g0_size: 2,
            arc_permille: 1000,
            require_no_h2_hom: false,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyMeta {
    pub attempts: u32,
    /// Oracle found `G -> H`.
    pub hom_g_to_h: bool,
    /// Oracle found `G0 -> H2`.
    pub hom_g0_to_h2: bool,
    pub h1_vertices: Vec<usize>,
    pub h2_vertices: Vec<usize>,
    pub apex_h: usize,
    pub apex_g: usize,
    /// The sampled map `G -> H`, apex included.
    pub planted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyInstance {
    pub g: Digraph,
    pub h: Digraph,
    pub meta: FamilyMeta,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("no instance satisfying the family conditions after {0} attempts")]
    GenerationFailed(u32),
}

/// `H` is two balanced components joined by an apex: a random balanced `H1`
/// and an oriented path `H2` of the same height. `G` is a sampled homomorphic
/// preimage `G0` of `H1` joined by its own apex.
pub fn gen_counterexample_family(params: &FamilyParams, seed: u64) -> Result<FamilyInstance, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = f64::from(params.arc_permille.min(1000)) / 1000.0;
    let levels = params.levels.max(1);
    for attempt in 1..=params.max_attempts {
        let h1 = gen_balanced(params.h1_size.max(levels), levels, p, rng.gen());
        let Some(h2) = random_oriented_path(params.h2_size, h1.level_count(), &mut rng) else { continue };
        let Ok(h) = apex_join(&h1, &h2) else { continue };
        let (n1, n2) = (h1.base.n(), h2.base.n());

        let planted: Vec<usize> = (0..params.g0_size).map(|_| rng.gen_range(0..n1)).collect();
        let mut arcs = Vec::new();
        for u in 0..params.g0_size {
            for v in 0..params.g0_size {
                if h1.base.has_arc(planted[u], planted[v]) && rng.gen_bool(p) {
                    arcs.push((u, v));
                }
            }
        }
        let g0 = Digraph::new(params.g0_size, arcs).expect("in range");
        let g0l = LeveledDigraph { base: g0.clone(), level: planted.iter().map(|&v| h1.level[v]).collect() };
        let g = apex_join_instance(&g0l);
        let apex_g = g0.n();
        let mut full_plant = planted;
        full_plant.push(n1 + n2);
        if verify(&g, &h, None, &full_plant).is_err() {
            continue;
        }
        let h2_only = h.induced(&(n1..n1 + n2).collect::<Vec<_>>());
        let hom_g0_to_h2 = solve_exact(&g0, &h2_only, None, 10_000_000).is_found();
        if hom_g0_to_h2 && params.require_no_h2_hom {
            continue;
        }
        let hom_g_to_h = solve_exact(&g, &h, None, 10_000_000).is_found();
        return Ok(FamilyInstance {
            g,
            h,
            meta: FamilyMeta {
                attempts: attempt,
                hom_g_to_h,
                hom_g0_to_h2,
                h1_vertices: (0..n1).collect(),
                h2_vertices: (n1..n1 + n2).collect(),
                apex_h: n1 + n2,
                apex_g,
                planted: full_plant,
            },
        });
    }
    Err(GenError::GenerationFailed(params.max_attempts))
}

/// Oriented path on `n` vertices with exactly `levels` levels, by rejection.
fn random_oriented_path(n: usize, levels: usize, rng: &mut impl Rng) -> Option<LeveledDigraph> {
    if n == 0 || levels == 0 || levels > n {
        return None;
    }
    for _ in 0..200 {
        let arcs: Vec<(usize, usize)> =
            (0..n - 1).map(|i| if rng.gen_bool(0.5) { (i, i + 1) } else { (i + 1, i) }).collect();
        let path = Digraph::new(n, arcs).expect("in range");
        let leveled = compute_levels(&path).expect("paths are balanced");
        if leveled.level_count() == levels {
            return Some(leveled);
        }
    }
    None
}

/// Weak NU search preferring second-component values on tuples that mix the
/// two components.
pub fn family_weak_nu(inst: &FamilyInstance, k: usize, budget: u64) -> SearchOutcome {
    let h1: ValueSet = inst.meta.h1_vertices.iter().copied().collect();
    let h2: ValueSet = inst.meta.h2_vertices.iter().copied().collect();
    let hint = move |t: &[usize]| {
        let mixed = t.iter().any(|&v| h1.contains(v)) && t.iter().any(|&v| h2.contains(v));
        if mixed {
            h2
        } else {
            ValueSet::EMPTY
        }
    };
    let opts = SearchOptions { node_budget: budget, minority: false, prefer: Some(&hint) };
    find_weak_nu_with(&inst.h, k, &opts).unwrap_or(SearchOutcome::BudgetExhausted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "kebab-case")]
pub enum Profile {
    /// Random digraphs and random balanced digraphs.
    Mixed { g_max: usize, h_max: usize },
    /// `H` is a single loop.
    LoopVertex { g_max: usize },
    Family(FamilyParams),
    /// Oriented graphs into the directed triangle with [`z3_minority`]; arity is always 3.
    Z3 { g_max: usize },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Mixed { g_max: 8, h_max: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FuzzConfig {
    pub trials: u64,
    pub seed: u64,
    pub k: usize,
    pub profile: Profile,
    pub wnu_budget: u64,
    pub oracle_budget: u64,
    pub pipeline: PipelineConfig,
    /// Trace events kept at the end of each report.
    pub trace_slice: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            trials: 100,
            seed: 0,
            k: 3,
            profile: Profile::default(),
            wnu_budget: 200_000,
            oracle_budget: 10_000_000,
            pipeline: PipelineConfig::default(),
            trace_slice: 32,
        }
    }
}

/// Per-trial seed, independent of scheduling.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(trial.to_le_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePayload {
    pub g: String,
    pub h: String,
    pub phi: String,
    pub lists: Option<Vec<ValueSet>>,
}

impl InstancePayload {
    pub fn new(g: &Digraph, h: &Digraph, phi: &PolymorphismTable) -> Self {
        InstancePayload { g: g.to_text(), h: h.to_text(), phi: phi.to_text(), lists: None }
    }

    pub fn parse(&self) -> Result<(Digraph, Digraph, PolymorphismTable), String> {
        let g = Digraph::from_text(&self.g).map_err(|e| format!("G: {e}"))?;
        let h = Digraph::from_text(&self.h).map_err(|e| format!("H: {e}"))?;
        let phi = PolymorphismTable::from_text(&self.phi).map_err(|e| format!("phi: {e}"))?;
        Ok((g, h, phi))
    }
}

/// Oracle answer with its certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleVerdict {
    Found { assignment: Vec<usize> },
    /// Exhaustive backtracking finished without a solution.
    Refuted { note: String },
    BudgetExhausted,
}

impl OracleVerdict {
    pub fn from_exact(o: ExactOutcome) -> Self {
        match o {
            ExactOutcome::Found(h) => OracleVerdict::Found { assignment: h.assignment },
            ExactOutcome::Refuted => OracleVerdict::Refuted { note: "exhaustive search with arc consistency".into() },
            ExactOutcome::BudgetExhausted => OracleVerdict::BudgetExhausted,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OracleVerdict::Found { .. } => "found",
            OracleVerdict::Refuted { .. } => "refuted",
            OracleVerdict::BudgetExhausted => "budget-exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    /// Pipeline said no, the oracle found a homomorphism.
    UnsoundNo,
    /// An internal claim check failed.
    InternalInvariantBroken,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub version: u32,
    pub trial: u64,
    pub seed: u64,
    pub k: usize,
    pub instance: InstancePayload,
    pub config: PipelineConfig,
    pub classification: Classification,
    pub pipeline_verdict: Verdict,
    pub pipeline_digest: String,
    pub oracle_verdict: OracleVerdict,
    /// Last trace events, tab-separated lines.
    pub trace_slice: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrialStatus {
    /// No weak NU found (refuted or budget).
    SkippedNoWnu { refuted: bool },
    SkippedGeneration,
    Ran { verdict: String, oracle: String, classification: Option<Classification> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub g_size: usize,
    pub h_size: usize,
    pub status: TrialStatus,
    pub pipeline_digest: Option<String>,
    /// The Maltsev phase ran; its verdict against the oracle.
    pub maltsev_matches_oracle: Option<bool>,
    pub falsified_check: Option<String>,
    #[serde(skip)]
    pub total_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub trials: u64,
    pub ran: u64,
    pub skipped_no_wnu: u64,
    pub skipped_generation: u64,
    pub verdicts: BTreeMap<String, u64>,
    pub discrepancies: BTreeMap<Classification, u64>,
    pub falsified_checks: BTreeMap<String, u64>,
    pub maltsev_reached: u64,
    pub maltsev_mismatches: u64,
    /// Yes verdicts whose assignment failed verification. Must stay 0.
    pub unverified_yes: u64,
    pub report_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzReport {
    pub records: Vec<TrialRecord>,
    pub discrepancies: Vec<DiscrepancyReport>,
    pub summary: FuzzSummary,
}

/// Draws `(G, H)` and a weak NU for one trial.
pub fn generate_trial(profile: &Profile, k: usize, wnu_budget: u64, seed: u64) -> Result<(Digraph, Digraph, PolymorphismTable), TrialStatus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, h) = match *profile {
        Profile::Mixed { g_max, h_max } => {
            let hn = rng.gen_range(1..=h_max.max(1));
            let gn = rng.gen_range(1..=g_max.max(1));
            let h = if rng.gen_bool(0.5) {
                gen_random_digraph(hn, rng.gen_range(0.2..0.7), rng.gen())
            } else {
                gen_balanced(hn, rng.gen_range(1..=3), rng.gen_range(0.3..0.9), rng.gen()).base
            };
            let g = match rng.gen_range(0..3) {
                0 => gen_random_digraph(gn, rng.gen_range(0.1..0.4), rng.gen()),
                1 => gen_balanced(gn, rng.gen_range(1..=4), rng.gen_range(0.2..0.6), rng.gen()).base,
                _ => random_oriented(gn, rng.gen_range(0.2..0.5), &mut rng),
            };
            (g, h)
        }
        Profile::LoopVertex { g_max } => {
            let gn = rng.gen_range(1..=g_max.max(1));
            (gen_random_digraph(gn, rng.gen_range(0.1..0.5), rng.gen()), Digraph::single_loop())
        }
        Profile::Family(params) => {
            let inst = gen_counterexample_family(&params, rng.gen()).map_err(|_| TrialStatus::SkippedGeneration)?;
            return match family_weak_nu(&inst, k, wnu_budget) {
                SearchOutcome::Found(phi) => Ok((inst.g, inst.h, phi)),
                SearchOutcome::Refuted => Err(TrialStatus::SkippedNoWnu { refuted: true }),
                SearchOutcome::BudgetExhausted => Err(TrialStatus::SkippedNoWnu { refuted: false }),
            };
        }
        Profile::Z3 { g_max } => {
            let gn = rng.gen_range(1..=g_max.max(1));
            let g = random_oriented(gn, rng.gen_range(0.15..0.5), &mut rng);
            return Ok((g, Digraph::directed_cycle(3), z3_minority()));
        }
    };
    let opts = SearchOptions { node_budget: wnu_budget, ..Default::default() };
    match find_weak_nu_with(&h, k, &opts) {
        Ok(SearchOutcome::Found(phi)) => Ok((g, h, phi)),
        Ok(SearchOutcome::Refuted) => Err(TrialStatus::SkippedNoWnu { refuted: true }),
        _ => Err(TrialStatus::SkippedNoWnu { refuted: false }),
    }
}

/// Ternary minority of the directed triangle: the odd value out, or the first
/// argument when all three differ. Commutes with the shift `v -> v + 1`.
pub fn z3_minority() -> PolymorphismTable {
    PolymorphismTable::from_fn(3, 3, |t| match (t[0] == t[1], t[1] == t[2], t[0] == t[2]) {
        (true, _, _) => t[2],
        (_, true, _) => t[0],
        (_, _, true) => t[1],
        _ => t[0],
    })
    .unwrap()
}

/// Random orientation of a random graph (no loops, no 2-cycles).
pub fn random_oriented(n: usize, p: f64, rng: &mut impl Rng) -> Digraph {
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                arcs.push(if rng.gen_bool(0.5) { (u, v) } else { (v, u) });
            }
        }
    }
    arcs.shuffle(rng);
    Digraph::new(n, arcs).unwrap()
}

struct TrialOutput {
    record: TrialRecord,
    report: Option<DiscrepancyReport>,
    unverified_yes: bool,
}

fn classify(verdict: &Verdict, oracle: &OracleVerdict) -> Option<Classification> {
    match (verdict, oracle) {
        (Verdict::Falsified { .. }, _) => Some(Classification::InternalInvariantBroken),
        (Verdict::No { .. }, OracleVerdict::Found { .. }) => Some(Classification::UnsoundNo),
        (Verdict::Yes { .. }, OracleVerdict::Refuted { .. }) => Some(Classification::Other),
        _ => None,
    }
}

/// Runs the pipeline and the oracle on one stored instance.
pub fn run_instance(
    g: &Digraph,
    h: &Digraph,
    phi: &PolymorphismTable,
    pipeline: &PipelineConfig,
    oracle_budget: u64,
) -> Result<(PipelineResult, OracleVerdict), String> {
    let result = run_pipeline(g, h, phi, pipeline).map_err(|e| e.to_string())?;
    let oracle = OracleVerdict::from_exact(solve_exact(g, h, None, oracle_budget));
    Ok((result, oracle))
}

fn run_trial(cfg: &FuzzConfig, trial: u64) -> TrialOutput {
    let seed = trial_seed(cfg.seed, trial);
    let mut record = TrialRecord {
        trial,
        seed,
        g_size: 0,
        h_size: 0,
        status: TrialStatus::SkippedGeneration,
        pipeline_digest: None,
        maltsev_matches_oracle: None,
        falsified_check: None,
        total_us: 0,
    };
    let (g, h, phi) = match generate_trial(&cfg.profile, cfg.k, cfg.wnu_budget, seed) {
        Ok(x) => x,
        Err(status) => {
            record.status = status;
            return TrialOutput { record, report: None, unverified_yes: false };
        }
    };
    record.g_size = g.n();
    record.h_size = h.n();
    let (result, oracle) = match run_instance(&g, &h, &phi, &cfg.pipeline, cfg.oracle_budget) {
        Ok(x) => x,
        Err(_) => {
            record.status = TrialStatus::SkippedNoWnu { refuted: false };
            return TrialOutput { record, report: None, unverified_yes: false };
        }
    };
    let unverified_yes = match &result.verdict {
        Verdict::Yes { homomorphism } => verify(&g, &h, None, &homomorphism.assignment).is_err(),
        _ => false,
    };
    if result.maltsev.is_some() {
        let pipeline_yes = matches!(result.verdict, Verdict::Yes { .. });
        record.maltsev_matches_oracle = match &oracle {
            OracleVerdict::Found { .. } => Some(pipeline_yes),
            OracleVerdict::Refuted { .. } => Some(!pipeline_yes),
            OracleVerdict::BudgetExhausted => None,
        };
    }
    if let Verdict::Falsified { event } = &result.verdict {
        record.falsified_check = Some(event.check.clone());
    }
    let classification = classify(&result.verdict, &oracle);
    record.status = TrialStatus::Ran {
        verdict: result.verdict.kind().to_string(),
        oracle: oracle.kind().to_string(),
        classification,
    };
    record.pipeline_digest = Some(result.digest());
    record.total_us = result.timings.total_us();
    let report = classification.map(|classification| {
        let lines: Vec<String> = result.trace.events.iter().map(|e| e.to_line()).collect();
        let start = lines.len().saturating_sub(cfg.trace_slice);
        DiscrepancyReport {
            version: REPORT_VERSION,
            trial,
            seed,
            k: cfg.k,
            instance: InstancePayload::new(&g, &h, &phi),
            config: cfg.pipeline.clone(),
            classification,
            pipeline_digest: result.digest(),
            pipeline_verdict: result.verdict.clone(),
            oracle_verdict: oracle.clone(),
            trace_slice: lines[start..].to_vec(),
        }
    });
    TrialOutput { record, report, unverified_yes }
}

/// Independent trials in parallel; results are collected in trial order.
pub fn fuzz(cfg: &FuzzConfig) -> FuzzReport {
    let outputs: Vec<TrialOutput> = (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect();
    let mut summary = FuzzSummary { trials: cfg.trials, ..Default::default() };
    let mut records = Vec::with_capacity(outputs.len());
    let mut discrepancies = Vec::new();
    for out in outputs {
        match &out.record.status {
            TrialStatus::SkippedNoWnu { .. } => summary.skipped_no_wnu += 1,
            TrialStatus::SkippedGeneration => summary.skipped_generation += 1,
            TrialStatus::Ran { verdict, classification, .. } => {
                summary.ran += 1;
                *summary.verdicts.entry(verdict.clone()).or_default() += 1;
                if let Some(c) = classification {
                    *summary.discrepancies.entry(*c).or_default() += 1;
                }
            }
        }
        if let Some(check) = &out.record.falsified_check {
            *summary.falsified_checks.entry(check.clone()).or_default() += 1;
        }
        match out.record.maltsev_matches_oracle {
            Some(true) => summary.maltsev_reached += 1,
            Some(false) => {
                summary.maltsev_reached += 1;
                summary.maltsev_mismatches += 1;
            }
            None => {}
        }
        summary.unverified_yes += u64::from(out.unverified_yes);
        records.push(out.record);
        discrepancies.extend(out.report);
    }
    summary.report_digest = campaign_digest(&records, &discrepancies);
    FuzzReport { records, discrepancies, summary }
}

fn campaign_digest(records: &[TrialRecord], reports: &[DiscrepancyReport]) -> String {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(serde_json::to_vec(r).unwrap());
        hasher.update(b"\n");
    }
    for r in reports {
        hasher.update(serde_json::to_vec(r).unwrap());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// One JSON document per line, appended in order.
pub fn write_reports(mut out: impl Write, reports: &[DiscrepancyReport]) -> io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_reports(input: impl BufRead) -> Result<Vec<DiscrepancyReport>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DiscrepancyReport = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if r.version != REPORT_VERSION {
            return Err(format!("line {}: unsupported report version {}", i + 1, r.version));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub trial: u64,
    pub pipeline_verdict: String,
    pub oracle_verdict: String,
    pub classification: Option<Classification>,
    /// Same verdicts, same classification and same pipeline digest.
    pub matches: bool,
}

/// Re-executes a stored report from its inlined instance.
pub fn replay(report: &DiscrepancyReport, oracle_budget: u64) -> Result<ReplayResult, String> {
    let (g, h, phi) = report.instance.parse()?;
    let (result, oracle) = run_instance(&g, &h, &phi, &report.config, oracle_budget)?;
    let classification = classify(&result.verdict, &oracle);
    let matches = result.verdict == report.pipeline_verdict
        && oracle.kind() == report.oracle_verdict.kind()
        && classification == Some(report.classification)
        && result.digest() == report.pipeline_digest;
    Ok(ReplayResult {
        trial: report.trial,
        pipeline_verdict: result.verdict.kind().into(),
        oracle_verdict: oracle.kind().into(),
        classification,
        matches,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<SuiteCheck>,
}

impl SuiteReport {
    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(SuiteCheck { name: name.into(), passed, detail: detail.into() });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Every homomorphism `G -> H` survives preprocessing, in unary and pair lists.
/// `None` when there are more than `cap` homomorphisms.
pub fn preprocess_keeps_homs(g: &Digraph, h: &Digraph, cap: usize) -> Option<Result<usize, String>> {
    let homs = enumerate_all(g, h, None, cap).ok()?;
    let mut lists = ListAssignment::full(g.n(), h.n());
    if let Err(sig) = preprocess(g, h, &mut lists) {
        return Some(if homs.is_empty() { Ok(0) } else { Err(format!("preprocess said no ({sig}) with {} homomorphisms", homs.len())) });
    }
    for hom in &homs {
        let a = &hom.assignment;
        for x in 0..g.n() {
            if !lists.list(x).contains(a[x]) {
                return Some(Err(format!("unary ({x}, {}) of {a:?} removed", a[x])));
            }
            for y in 0..g.n() {
                if !lists.pair_allowed(x, y, a[x], a[y]) {
                    return Some(Err(format!("pair ({x}, {y}) -> ({}, {}) of {a:?} removed", a[x], a[y])));
                }
            }
        }
    }
    Some(Ok(homs.len()))
}

/// Runs the invariant checks on one stored instance.
pub fn validate_instance(
    g: &Digraph,
    h: &Digraph,
    phi: &PolymorphismTable,
    cfg: &PipelineConfig,
    oracle_budget: u64,
    enum_cap: usize,
) -> Result<SuiteReport, String> {
    let mut rep = SuiteReport::default();
    let report = analyze(h, phi).map_err(|e| e.to_string())?;
    rep.push("phi-weak-nu", report.is_valid_weak_nu(), format!("{:?}", report.witnesses.first()));
    if !report.is_valid_weak_nu() {
        return Ok(rep);
    }

    match preprocess_keeps_homs(g, h, enum_cap) {
        Some(Ok(n)) => rep.push("preprocess-sound", true, format!("{n} homomorphisms kept")),
        Some(Err(e)) => rep.push("preprocess-sound", false, e),
        None => rep.push("preprocess-sound", true, format!("skipped: more than {enum_cap} homomorphisms")),
    }
    let mut once = ListAssignment::full(g.n(), h.n());
    let first = preprocess(g, h, &mut once);
    let mut twice = once.clone();
    let second = preprocess(g, h, &mut twice);
    let idem = first.is_err() || (second.is_ok() && twice == once);
    rep.push("preprocess-idempotent", idem, "");

    let strict = PipelineConfig { validate: ValidateFrequency::Every, ..cfg.clone() };
    let (result, oracle) = run_instance(g, h, phi, &strict, oracle_budget)?;
    let falsified = match &result.verdict {
        Verdict::Falsified { event } => format!("{} at depth {}: {}", event.check, event.depth, event.detail),
        _ => String::new(),
    };
    rep.push("claims-hold", falsified.is_empty(), falsified);

    if let Some((lists_after, f_after)) = &result.after_nm {
        let mut lists = ListAssignment::full(g.n(), h.n());
        preprocess(g, h, &mut lists).map_err(|e| e.to_string())?;
        let mut f = ConsistentHom::init_from_phi(phi, &lists).map_err(|e| e.to_string())?;
        f.mask_to(lists.lists());
        let ok = match replay_trace(g, h, &mut lists, &mut f, &result.trace) {
            Ok(()) => lists.lists() == lists_after.lists() && f.digest() == f_after.digest(),
            Err(_) => false,
        };
        rep.push("trace-replay", ok, format!("{} events", result.trace.events.len()));
    }

    let disagreement = classify(&result.verdict, &oracle);
    rep.push(
        "oracle-agreement",
        disagreement.is_none() || matches!(result.verdict, Verdict::Falsified { .. }),
        format!("pipeline {}, oracle {}", result.verdict.kind(), oracle.kind()),
    );
    if let Verdict::Yes { homomorphism } = &result.verdict {
        let v = verify(g, h, None, &homomorphism.assignment);
        rep.push("yes-verifies", v.is_ok(), v.err().map(|e| e.to_string()).unwrap_or_default());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials() {
        let r = fuzz(&FuzzConfig { trials: 0, ..Default::default() });
        assert!(r.records.is_empty() && r.discrepancies.is_empty());
        assert_eq!(r.summary.ran, 0);
    }

    #[test]
    fn loop_profile_has_no_discrepancies() {
        let r = fuzz(&FuzzConfig { trials: 20, profile: Profile::LoopVertex { g_max: 6 }, ..Default::default() });
        assert_eq!(r.summary.ran, 20);
        assert!(r.discrepancies.is_empty());
        assert_eq!(r.summary.verdicts.get("yes"), Some(&20));
    }

    #[test]
    fn minimal_family_has_five_vertices() {
        let inst = gen_counterexample_family(&FamilyParams::minimal(), 1).unwrap();
        assert_eq!(inst.h.n(), 5);
        assert_eq!(inst.h.out_neighbors(inst.meta.apex_h).len(), 2);
        assert!(inst.h.is_weakly_connected());
        assert!(inst.meta.hom_g_to_h);
        assert!(verify(&inst.g, &inst.h, None, &inst.meta.planted).is_ok());
    }

    #[test]
    fn default_family_generates() {
        let got: Vec<FamilyInstance> =
            (0..20).filter_map(|s| gen_counterexample_family(&FamilyParams::default(), s).ok()).collect();
        assert!(!got.is_empty());
        for inst in &got {
            assert!(inst.h.is_weakly_connected());
            assert!(inst.meta.hom_g_to_h && !inst.meta.hom_g0_to_h2);
            assert!(verify(&inst.g, &inst.h, None, &inst.meta.planted).is_ok());
            assert_eq!(inst.h.n(), inst.meta.h1_vertices.len() + inst.meta.h2_vertices.len() + 1);
        }
    }

    #[test]
    fn family_meta_matches_oracle() {
        for seed in 0..100 {
            let Ok(inst) = gen_counterexample_family(&FamilyParams::default(), seed) else { continue };
            assert!(inst.h.is_weakly_connected());
            assert_eq!(inst.meta.hom_g_to_h, solve_exact(&inst.g, &inst.h, None, 10_000_000).is_found());
            assert!(inst.meta.hom_g_to_h, "planted map exists");
            let n1 = inst.meta.h1_vertices.len();
            let h2 = inst.h.induced(&inst.meta.h2_vertices);
            let g0 = inst.g.induced(&(0..inst.meta.apex_g).collect::<Vec<_>>());
            assert_eq!(solve_exact(&g0, &h2, None, 10_000_000).is_found(), inst.meta.hom_g0_to_h2);
            assert!(n1 > 0);
        }
    }

    #[test]
    fn report_roundtrip_and_replay() {
        let cfg = FuzzConfig { trials: 60, seed: 3, ..Default::default() };
        let mut r = fuzz(&cfg);
        if r.discrepancies.is_empty() {
            // make a report out of an agreeing trial so the plumbing is still exercised
            let rec = r.records.iter().find(|x| x.pipeline_digest.is_some()).unwrap();
            let (g, h, phi) = generate_trial(&cfg.profile, 3, cfg.wnu_budget, rec.seed).unwrap();
            let (res, oracle) = run_instance(&g, &h, &phi, &cfg.pipeline, cfg.oracle_budget).unwrap();
            r.discrepancies.push(DiscrepancyReport {
                version: REPORT_VERSION,
                trial: rec.trial,
                seed: rec.seed,
                k: 3,
                instance: InstancePayload::new(&g, &h, &phi),
                config: cfg.pipeline.clone(),
                classification: Classification::Other,
                pipeline_digest: res.digest(),
                pipeline_verdict: res.verdict,
                oracle_verdict: oracle,
                trace_slice: vec![],
            });
        }
        let mut buf = Vec::new();
        write_reports(&mut buf, &r.discrepancies).unwrap();
        let back = read_reports(&buf[..]).unwrap();
        assert_eq!(back, r.discrepancies);
        for rep in &back {
            let rr = replay(rep, cfg.oracle_budget).unwrap();
            assert_eq!(rr.pipeline_verdict, rep.pipeline_verdict.kind());
            assert_eq!(rr.oracle_verdict, rep.oracle_verdict.kind());
        }
        // a corrupted instance no longer matches
        let mut bad = back[0].clone();
        bad.instance.g = Digraph::directed_cycle(7).to_text();
        let rr = replay(&bad, cfg.oracle_budget).unwrap();
        assert!(!rr.matches);
    }

    #[test]
    fn suite_on_small_instances() {
        let phi = z3_minority();
        let h = Digraph::directed_cycle(3);
        for n in [3, 4, 6] {
            let rep = validate_instance(&Digraph::directed_cycle(n), &h, &phi, &PipelineConfig::default(), 1_000_000, 10_000).unwrap();
            assert!(rep.all_passed(), "{rep:?}");
            // C4 is already rejected by preprocessing
            assert_eq!(rep.checks.iter().any(|c| c.name == "trace-replay"), n % 3 == 0);
        }
    }

    #[test]
    fn trial_seeds_are_stable() {
        assert_eq!(trial_seed(1, 2), trial_seed(1, 2));
        assert_ne!(trial_seed(1, 2), trial_seed(1, 3));
        assert_ne!(trial_seed(1, 2), trial_seed(2, 2));
    }

    #[test]
    fn z3_phi_is_minority() {
        let phi = z3_minority();
        let r = crate::polymorphism::analyze(&Digraph::directed_cycle(3), &phi).unwrap();
        assert!(r.is_valid_weak_nu());
        assert_eq!(r.is_maltsev, Some(true));
    }
}
