//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. All sizes, seeds, budgets and tolerances are fixed below.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dighom::chom::{validate_all, ConsistentHom};
use dighom::consistency::{preprocess, ListAssignment};
use dighom::digraph::{gen_balanced, gen_random_digraph, Digraph};
use dighom::harness::{
    fuzz, generate_trial, read_reports, replay, trial_seed, write_reports, Classification, FamilyParams, FuzzConfig,
    Profile,
};
use dighom::minority::derive_maltsev;
use dighom::oracle::{solve_exact, ExactOutcome};
use dighom::pipeline::{run_pipeline, PipelineConfig, PipelineResult, Verdict};
use dighom::polymorphism::{analyze, check_polymorphism, check_weak_nu, find_weak_nu, PolymorphismTable, SearchOutcome};
use dighom::reduction::{Fault, ValidateFrequency};
use dighom::valueset::ValueSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 3;
const WNU_BUDGET: u64 = 200_000;
const ORACLE_BUDGET: u64 = 10_000_000;

const C1_SEED: u64 = 0x00c1;
const C1_TRIALS: u64 = 1000;
const C1_MAX_UNVERIFIED: usize = 0;

const C2_SEED: u64 = 0x00c2;
const C2_INSTANCES: usize = 200;
const C2_MAX_MAPS: u64 = 100_000;
const C2_MAX_VIOLATIONS: usize = 0;

const C3_SEED: u64 = 0x00c3;
const C3_TRIALS: u64 = 400;
const C3_MAX_SILENT: usize = 0;

const C4_SEED: u64 = 0x00c4;
const C4_TRIALS: u64 = 500;
/// Reports replayed from the written file (the first ones in trial order).
const C4_REPLAYS: usize = 40;
const C4_FAULT_SEED: u64 = 0x04fa;
const C4_FAULT_TRIALS: u64 = 200;

const C5_BUDGET: u64 = 10_000_000;
const C5_TIME_LIMIT: Duration = Duration::from_secs(60);

const C6_SEED: u64 = 0x00c6;
const C6_Z3_TRIALS: u64 = 700;
const C6_Z3_G_MAX: usize = 12;
const C6_MIN_REACHED: usize = 300;

const C7_SIZES: [usize; 3] = [20, 40, 80];
const C7_SEEDS: u64 = 5;
const C7_LEVELS: usize = 3;
/// Expected out-degree of the balanced random G, kept fixed across sizes.
const C7_DEGREE: f64 = 3.0;
const C7_MAX_SLOPE: f64 = 3.5;

const C8_SEED: u64 = 0x00c8;
const C8_MIXED_TRIALS: u64 = 150;
const C8_FAMILY_TRIALS: u64 = 40;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, out: &Outcome) -> bool {
    println!("ACCEPTANCE {id} {} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
    out.pass
}

fn arc_preserving(g: &Digraph, h: &Digraph, map: &[usize]) -> bool {
    map.len() == g.n() && map.iter().all(|&v| v < h.n()) && g.arcs().iter().all(|&(u, v)| h.has_arc(map[u], map[v]))
}

fn tuples(values: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out.into_iter().flat_map(|t| values.iter().map(move |&v| [t.clone(), vec![v]].concat())).collect();
    }
    out
}

fn one_off(k: usize, b: usize, a: usize, pos: usize) -> Vec<usize> {
    (0..k).map(|i| if i == pos { a } else { b }).collect()
}

/// Direct check that `f` is defined on `L(x)^k`, stays in the lists, has all
/// weak-NU patterns agreeing, and maps arcs of `G x H^k` to arcs of `H`.
fn consistent_hom_ok(f: &ConsistentHom, g: &Digraph, h: &Digraph, lists: &[ValueSet]) -> Result<(), String> {
    let k = f.k();
    let per_vertex: Vec<Vec<Vec<usize>>> = lists.iter().map(|l| tuples(&l.to_vec(), k)).collect();
    for (x, ts) in per_vertex.iter().enumerate() {
        for t in ts {
            match f.get(x, t) {
                Some(v) if lists[x].contains(v) => {}
                other => return Err(format!("f({x}; {t:?}) = {other:?} outside L({x})")),
            }
        }
        for a in lists[x] {
            for b in lists[x] {
                let first = f.get(x, &one_off(k, b, a, 0));
                if (1..k).any(|i| f.get(x, &one_off(k, b, a, i)) != first) {
                    return Err(format!("weak-NU patterns of ({a}, {b}) disagree at {x}"));
                }
            }
        }
    }
    for &(x, y) in g.arcs() {
        for t in &per_vertex[x] {
            for s in &per_vertex[y] {
                if t.iter().zip(s).all(|(&a, &b)| h.has_arc(a, b)) {
                    let (u, v) = (f.get(x, t).unwrap(), f.get(y, s).unwrap());
                    if !h.has_arc(u, v) {
                        return Err(format!("arc ({x}, {y}) with {t:?} -> {s:?} maps to non-arc ({u}, {v})"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Every map `V(G) -> V(H)` that preserves arcs.
fn brute_force_homs(g: &Digraph, h: &Digraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut map = vec![0usize; n];
    let mut out = Vec::new();
    loop {
        if arc_preserving(g, h, &map) {
            out.push(map.clone());
        }
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            map[i] += 1;
            if map[i] < h.n() {
                break;
            }
            map[i] = 0;
            i += 1;
        }
    }
}

fn mixed() -> Profile {
    Profile::Mixed { g_max: 8, h_max: 5 }
}

fn mixed_instance(seed: u64, trial: u64) -> Option<(Digraph, Digraph, PolymorphismTable)> {
    generate_trial(&mixed(), K, WNU_BUDGET, trial_seed(seed, trial)).ok()
}

fn criterion_1() -> Outcome {
    let cfg = PipelineConfig::default();
    let (mut ran, mut yes, mut unverified) = (0, 0, Vec::new());
    let mut verdicts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for t in 0..C1_TRIALS {
        let Some((g, h, phi)) = mixed_instance(C1_SEED, t) else { continue };
        let res = run_pipeline(&g, &h, &phi, &cfg).expect("generated phi is a weak NU");
        ran += 1;
        *verdicts.entry(res.verdict.kind()).or_default() += 1;
        if let Verdict::Yes { homomorphism } = &res.verdict {
            yes += 1;
            if !arc_preserving(&g, &h, &homomorphism.assignment) {
                unverified.push(t);
            }
        }
    }
    Outcome {
        pass: unverified.len() <= C1_MAX_UNVERIFIED,
        detail: format!(
            "{C1_TRIALS} trials, {ran} with a weak NU, {yes} yes, {} non-verifying yes {:?}; verdicts {verdicts:?}",
            unverified.len(),
            &unverified[..unverified.len().min(10)]
        ),
    }
}

/// Random tiny instance; every other one is built as a preimage of `H`.
fn tiny_instance(rng: &mut ChaCha8Rng, planted: bool) -> (Digraph, Digraph) {
    loop {
        let hn = rng.gen_range(2..=5usize);
        let gn = rng.gen_range(2..=8usize);
        if (hn as u64).pow(gn as u32) > C2_MAX_MAPS {
            continue;
        }
        let h = gen_random_digraph(hn, rng.gen_range(0.3..0.7), rng.gen());
        if !planted {
            return (gen_random_digraph(gn, rng.gen_range(0.1..0.4), rng.gen()), h);
        }
        let map: Vec<usize> = (0..gn).map(|_| rng.gen_range(0..hn)).collect();
        let p = rng.gen_range(0.2..0.6);
        let mut arcs = Vec::new();
        for u in 0..gn {
            for v in 0..gn {
                if h.has_arc(map[u], map[v]) && rng.gen_bool(p) {
                    arcs.push((u, v));
                }
            }
        }
        return (Digraph::new(gn, arcs).unwrap(), h);
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(C2_SEED);
    let (mut violations, mut with_homs, mut total_homs) = (Vec::new(), 0, 0);
    for i in 0..C2_INSTANCES {
        let (g, h) = tiny_instance(&mut rng, i % 2 == 1);
        let homs = brute_force_homs(&g, &h);
        total_homs += homs.len();
        with_homs += usize::from(!homs.is_empty());
        let mut lists = ListAssignment::full(g.n(), h.n());
        if preprocess(&g, &h, &mut lists).is_err() {
            if !homs.is_empty() {
                violations.push(format!("#{i}: emptied with {} homomorphisms", homs.len()));
            }
            continue;
        }
        'homs: for m in &homs {
            for x in 0..g.n() {
                if !lists.list(x).contains(m[x]) {
                    violations.push(format!("#{i}: {} removed from L({x})", m[x]));
                    break 'homs;
                }
                for y in 0..g.n() {
                    if !lists.pair_allowed(x, y, m[x], m[y]) {
                        violations.push(format!("#{i}: ({}, {}) removed from L({x}, {y})", m[x], m[y]));
                        break 'homs;
                    }
                }
            }
        }
    }
    Outcome {
        pass: violations.len() <= C2_MAX_VIOLATIONS,
        detail: format!(
            "{C2_INSTANCES} instances ({with_homs} with homomorphisms, {total_homs} in total), {} violations {:?}",
            violations.len(),
            &violations[..violations.len().min(5)]
        ),
    }
}

/// A Falsified run must reproduce exactly, and its witness must re-check
/// where the state it refers to is available.
fn falsification_rechecks(g: &Digraph, h: &Digraph, phi: &PolymorphismTable, cfg: &PipelineConfig, res: &PipelineResult) -> Result<(), String> {
    let Verdict::Falsified { event } = &res.verdict else { return Ok(()) };
    let again = run_pipeline(g, h, phi, cfg).map_err(|e| e.to_string())?;
    if again.digest() != res.digest() {
        return Err("falsified run does not replay to the same digest".into());
    }
    let Some((lists, f)) = &res.after_nm else { return Ok(()) };
    match (event.check.as_str(), &event.witness) {
        ("validator", Some(w)) if event.depth == 0 => {
            if !w.holds(f, g, h, lists.lists()) {
                return Err(format!("validator witness {w:?} does not re-check"));
            }
        }
        ("not-minority", _) => {
            if derive_maltsev(f, lists).is_ok() {
                return Err("minority condition holds on the stored state".into());
            }
        }
        _ => {}
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let strict = PipelineConfig { validate: ValidateFrequency::Every, ..Default::default() };
    let faulty = PipelineConfig { fault: Some(Fault::CorruptRetarget { nth: 0 }), ..strict.clone() };
    let (mut runs, mut clean, mut falsified, mut fault_landed, mut fault_caught) = (0, 0, 0, 0, 0);
    let mut silent = Vec::new();
    for t in 0..C3_TRIALS {
        let Some((g, h, phi)) = mixed_instance(C3_SEED, t) else { continue };
        for (tag, cfg) in [("plain", &strict), ("fault", &faulty)] {
            let res = run_pipeline(&g, &h, &phi, cfg).expect("generated phi is a weak NU");
            runs += 1;
            if tag == "fault" && res.fault.is_some() {
                fault_landed += 1;
            }
            match &res.verdict {
                Verdict::Falsified { .. } => {
                    falsified += 1;
                    if tag == "fault" && res.fault.is_some() {
                        fault_caught += 1;
                    }
                    if let Err(e) = falsification_rechecks(&g, &h, &phi, cfg, &res) {
                        silent.push(format!("trial {t} {tag}: {e}"));
                    }
                }
                verdict => {
                    if let Some((lists, f)) = &res.after_nm {
                        clean += 1;
                        let direct = consistent_hom_ok(f, &g, &h, lists.lists());
                        let lib = validate_all(f, &g, &h, lists.lists()).is_ok();
                        if direct.is_err() || !lib {
                            silent.push(format!("trial {t} {tag}: {} after the reduction with {direct:?}", verdict.kind()));
                        }
                    }
                    if let Verdict::Yes { homomorphism } = verdict {
                        if !arc_preserving(&g, &h, &homomorphism.assignment) {
                            silent.push(format!("trial {t} {tag}: yes does not verify"));
                        }
                    }
                }
            }
        }
    }
    Outcome {
        pass: silent.len() <= C3_MAX_SILENT,
        detail: format!(
            "{runs} runs: {clean} clean after the reduction, {falsified} falsified and replayed; fault landed {fault_landed}, caught {fault_caught}; {} silent {:?}",
            silent.len(),
            &silent[..silent.len().min(5)]
        ),
    }
}

fn write_and_read(reports: &[dighom::harness::DiscrepancyReport]) -> Vec<dighom::harness::DiscrepancyReport> {
    let file = tempfile::NamedTempFile::new().unwrap();
    write_reports(std::io::BufWriter::new(file.reopen().unwrap()), reports).unwrap();
    read_reports(std::io::BufReader::new(file.reopen().unwrap())).unwrap()
}

fn criterion_4() -> Outcome {
    let cfg = FuzzConfig {
        trials: C4_TRIALS,
        seed: C4_SEED,
        k: K,
        profile: Profile::Family(FamilyParams::default()),
        ..Default::default()
    };
    let rep = fuzz(&cfg);
    let found: Vec<_> = rep
        .discrepancies
        .iter()
        .filter(|r| matches!(r.classification, Classification::UnsoundNo | Classification::InternalInvariantBroken))
        .cloned()
        .collect();
    let stored = write_and_read(&found);
    let mut replay_fail = Vec::new();
    for r in stored.iter().take(C4_REPLAYS) {
        match replay(r, cfg.oracle_budget) {
            Ok(rr) if rr.matches => {}
            other => replay_fail.push((r.trial, format!("{other:?}"))),
        }
    }
    let fault = injected_fault_detected();
    let branch = if found.is_empty() { "(b) none found at these sizes" } else { "(a) discrepancies found" };
    Outcome {
        pass: stored.len() == found.len() && replay_fail.is_empty() && fault.is_ok(),
        detail: format!(
            "{} family trials ({} ran, {} skipped without weak NU, {} generation failures): {branch}: {} reports, classes {:?}, checks {:?}; replayed {} with {} mismatches; injected fault: {}",
            rep.summary.trials,
            rep.summary.ran,
            rep.summary.skipped_no_wnu,
            rep.summary.skipped_generation,
            found.len(),
            rep.summary.discrepancies,
            rep.summary.falsified_checks,
            stored.len().min(C4_REPLAYS),
            replay_fail.len(),
            match &fault {
                Ok(s) => s.clone(),
                Err(e) => format!("FAILED {e}"),
            }
        ),
    }
}

/// Some trial that is clean without the fault must be reported as an internal
/// invariant break with one corrupted retarget, and that report must replay.
fn injected_fault_detected() -> Result<String, String> {
    // validators at every depth, so corruption inside a sub-instance is seen
    let strict = PipelineConfig { validate: ValidateFrequency::Every, ..Default::default() };
    let base = FuzzConfig {
        trials: C4_FAULT_TRIALS,
        seed: C4_FAULT_SEED,
        k: K,
        profile: mixed(),
        pipeline: strict.clone(),
        ..Default::default()
    };
    let faulty = FuzzConfig {
        pipeline: PipelineConfig { fault: Some(Fault::CorruptRetarget { nth: 0 }), ..strict },
        ..base.clone()
    };
    let plain = fuzz(&base);
    let broken = fuzz(&faulty);
    let clean_trials: Vec<u64> = plain
        .records
        .iter()
        .filter(|r| r.falsified_check.is_none() && r.pipeline_digest.is_some())
        .map(|r| r.trial)
        .collect();
    let detected: Vec<_> = broken
        .discrepancies
        .iter()
        .filter(|r| r.classification == Classification::InternalInvariantBroken && clean_trials.contains(&r.trial))
        .collect();
    let first = detected.first().ok_or("no clean trial was flagged under the fault")?;
    let stored = write_and_read(&[(*first).clone()]);
    let rr = replay(&stored[0], base.oracle_budget)?;
    if !rr.matches {
        return Err(format!("trial {} did not replay: {rr:?}", first.trial));
    }
    Ok(format!("{} clean trials flagged under the fault, trial {} replays", detected.len(), first.trial))
}

/// Table checks written out directly: polymorphism, idempotence, weak NU.
fn direct_weak_nu_check(h: &Digraph, t: &PolymorphismTable) -> bool {
    let vals: Vec<usize> = (0..h.n()).collect();
    let all = tuples(&vals, t.k());
    for a in &all {
        for b in &all {
            if a.iter().zip(b).all(|(&u, &v)| h.has_arc(u, v)) && !h.has_arc(t.get(a), t.get(b)) {
                return false;
            }
        }
    }
    vals.iter().all(|&a| t.get(&vec![a; t.k()]) == a)
        && vals.iter().all(|&a| {
            vals.iter().all(|&b| {
                let first = t.get(&one_off(t.k(), b, a, 0));
                (1..t.k()).all(|i| t.get(&one_off(t.k(), b, a, i)) == first)
            })
        })
}

fn criterion_5() -> Outcome {
    let c3 = Digraph::directed_cycle(3);
    let start = Instant::now();
    let c3_out = find_weak_nu(&c3, K, C5_BUDGET).unwrap();
    let c3_time = start.elapsed();
    let c3_ok = match &c3_out {
        SearchOutcome::Found(t) => {
            let poly = check_polymorphism(&c3, t).unwrap().is_polymorphism == Some(true);
            let wnu = check_weak_nu(t).is_weak_nu == Some(true);
            poly && wnu && analyze(&c3, t).unwrap().is_valid_weak_nu() && direct_weak_nu_check(&c3, t)
        }
        _ => false,
    };
    let k3 = Digraph::complete_symmetric(3);
    let start = Instant::now();
    let k3_out = find_weak_nu(&k3, K, C5_BUDGET).unwrap();
    let k3_time = start.elapsed();
    let k3_ok = k3_out == SearchOutcome::Refuted;
    Outcome {
        pass: c3_ok && k3_ok && c3_time < C5_TIME_LIMIT && k3_time < C5_TIME_LIMIT,
        detail: format!(
            "directed 3-cycle: table found and checked = {c3_ok} in {c3_time:?}; symmetric K3 refuted = {k3_ok} in {k3_time:?}; limit {C5_TIME_LIMIT:?}"
        ),
    }
}

/// Homomorphism to the directed triangle exists iff potentials mod 3 can be
/// assigned with every arc going up by one.
fn z3_solvable(g: &Digraph) -> bool {
    let mut pot: Vec<Option<u8>> = vec![None; g.n()];
    for s in 0..g.n() {
        if pot[s].is_some() {
            continue;
        }
        pot[s] = Some(0);
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            let p = pot[u].unwrap();
            let next = g.out_neighbors(u).iter().map(|&v| (v, (p + 1) % 3));
            let prev = g.in_neighbors(u).iter().map(|&v| (v, (p + 2) % 3));
            for (v, want) in next.chain(prev).collect::<Vec<_>>() {
                match pot[v] {
                    None => {
                        pot[v] = Some(want);
                        stack.push(v);
                    }
                    Some(q) if q != want => return false,
                    _ => {}
                }
            }
        }
    }
    true
}

fn criterion_6() -> Outcome {
    let cfg = PipelineConfig::default();
    let (mut z3_reached, mut z3_mismatch) = (0, Vec::new());
    let profile = Profile::Z3 { g_max: C6_Z3_G_MAX };
    for t in 0..C6_Z3_TRIALS {
        let (g, h, phi) = generate_trial(&profile, K, WNU_BUDGET, trial_seed(C6_SEED, t)).unwrap();
        let res = run_pipeline(&g, &h, &phi, &cfg).unwrap();
        if res.maltsev.is_none() {
            continue;
        }
        z3_reached += 1;
        let yes = matches!(res.verdict, Verdict::Yes { .. });
        let oracle = match solve_exact(&g, &h, None, ORACLE_BUDGET) {
            ExactOutcome::Found(_) => Some(true),
            ExactOutcome::Refuted => Some(false),
            ExactOutcome::BudgetExhausted => None,
        };
        let potential = z3_solvable(&g);
        if oracle != Some(yes) || potential != yes {
            z3_mismatch.push((t, res.verdict.kind(), oracle, potential));
        }
    }
    // mixed instances reaching the Maltsev phase: mismatches are data
    let (mut mixed_reached, mut mixed_mismatch) = (0, 0);
    for t in 0..C1_TRIALS {
        let Some((g, h, phi)) = mixed_instance(C6_SEED, t) else { continue };
        let res = run_pipeline(&g, &h, &phi, &cfg).unwrap();
        if res.maltsev.is_none() {
            continue;
        }
        mixed_reached += 1;
        let yes = matches!(res.verdict, Verdict::Yes { .. });
        let oracle = solve_exact(&g, &h, None, ORACLE_BUDGET);
        if !matches!(oracle, ExactOutcome::BudgetExhausted) && oracle.is_found() != yes {
            mixed_mismatch += 1;
        }
    }
    let reached = z3_reached + mixed_reached;
    Outcome {
        pass: reached >= C6_MIN_REACHED && z3_mismatch.is_empty(),
        detail: format!(
            "{reached} instances reached the Maltsev phase (need {C6_MIN_REACHED}); Z3 family {z3_reached} with {} mismatches {:?}; mixed {mixed_reached} with {mixed_mismatch} mismatches",
            z3_mismatch.len(),
            &z3_mismatch[..z3_mismatch.len().min(5)]
        ),
    }
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

fn criterion_7() -> Outcome {
    let h = Digraph::directed_path(3);
    let SearchOutcome::Found(phi) = find_weak_nu(&h, K, WNU_BUDGET).unwrap() else {
        return Outcome { pass: false, detail: "no weak NU for the directed path".into() };
    };
    let cfg = PipelineConfig::default();
    let mut points = Vec::new();
    let mut medians = Vec::new();
    for &n in &C7_SIZES {
        let mut times = Vec::new();
        let mut kinds = BTreeMap::new();
        for s in 0..C7_SEEDS {
            let g = gen_balanced(n, C7_LEVELS, C7_DEGREE / n as f64, s).base;
            let start = Instant::now();
            let res = run_pipeline(&g, &h, &phi, &cfg).unwrap();
            times.push(start.elapsed().as_secs_f64());
            *kinds.entry(res.verdict.kind()).or_insert(0) += 1;
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = times[times.len() / 2];
        medians.push(format!("n={n}: {med:.5}s {kinds:?}"));
        points.push(((n as f64).ln(), med.max(1e-9).ln()));
    }
    let e = slope(&points);
    Outcome {
        pass: e <= C7_MAX_SLOPE,
        detail: format!("fitted exponent {e:.3} (max {C7_MAX_SLOPE}); {}", medians.join(", ")),
    }
}

fn campaign_bytes(cfg: &FuzzConfig) -> (String, Vec<u8>, Vec<u8>) {
    let rep = fuzz(cfg);
    let mut jsonl = Vec::new();
    write_reports(&mut jsonl, &rep.discrepancies).unwrap();
    let records = serde_json::to_vec(&rep.records).unwrap();
    (rep.summary.report_digest, jsonl, records)
}

fn criterion_8() -> Outcome {
    let mixed_cfg = FuzzConfig { trials: C8_MIXED_TRIALS, seed: C8_SEED, k: K, profile: mixed(), ..Default::default() };
    let family_cfg = FuzzConfig {
        trials: C8_FAMILY_TRIALS,
        seed: C8_SEED,
        k: K,
        profile: Profile::Family(FamilyParams::default()),
        ..Default::default()
    };
    let mut details = Vec::new();
    let mut pass = true;
    for (name, cfg) in [("mixed", &mixed_cfg), ("family", &family_cfg)] {
        let a = campaign_bytes(cfg);
        let b = campaign_bytes(cfg);
        let same = a == b;
        pass &= same;
        details.push(format!("{name}: digest {} equal = {same}, {} report bytes", &a.0[..12], a.1.len()));
    }
    Outcome { pass, detail: details.join("; ") }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("yes answers verify", criterion_1),
        ("preprocessing keeps every homomorphism", criterion_2),
        ("invariants hold or the run is falsified", criterion_3),
        ("counterexample family discrepancies", criterion_4),
        ("weak NU search ground truths", criterion_5),
        ("Maltsev phase matches the oracle", criterion_6),
        ("polynomial running time", criterion_7),
        ("deterministic campaigns", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        if !report(i + 1, name, &out) {
            failed.push(i + 1);
        }
        println!("  ({:.1}s)", start.elapsed().as_secs_f64());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
