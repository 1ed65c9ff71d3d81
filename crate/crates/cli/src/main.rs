use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dighom::digraph::Digraph;
use dighom::harness::{
    family_weak_nu, fuzz, gen_counterexample_family, read_reports, replay, validate_instance, write_reports,
    FamilyParams, FuzzConfig, Profile,
};
use dighom::pipeline::{run_pipeline, PipelineConfig, Verdict};
use dighom::polymorphism::{find_weak_nu_with, PolymorphismTable, SearchOptions, SearchOutcome};
use dighom::reduction::{Fault, PickOrder, ValidateFrequency};

const EXIT_OK: u8 = 0;
const EXIT_FALSIFIED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "dighom", version, about = "Digraph homomorphism via weak NU polymorphisms, with a falsification harness")]
struct Cli {
    /// TOML config; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide HOM(H) for one instance.
    Solve(SolveArgs),
    /// Search for an idempotent weak NU polymorphism of H.
    WnuFind(WnuArgs),
    /// Random trials against the exact oracle.
    Fuzz(FuzzArgs),
    /// Re-run stored discrepancy reports.
    Replay(ReplayArgs),
    /// Generate a two-component family instance.
    Gen(GenArgs),
    /// Run the invariant checks on a stored instance.
    Validate(ValidateArgs),
}

#[derive(Args, Default)]
struct PipelineFlags {
    #[arg(long, value_enum)]
    pick_order: Option<PickArg>,
    #[arg(long, value_enum)]
    validate: Option<ValidateArg>,
    #[arg(long)]
    step_budget: Option<u64>,
    #[arg(long)]
    maltsev_budget: Option<u64>,
    /// Corrupt the nth retargeted tuple (testing the validators).
    #[arg(long)]
    fault_nth: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PickArg {
    Lexicographic,
    ReverseVertex,
}

#[derive(Clone, Copy, ValueEnum)]
enum ValidateArg {
    Every,
    Boundaries,
    Off,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    g: PathBuf,
    #[arg(long)]
    h: PathBuf,
    /// Polymorphism table; searched for when absent.
    #[arg(long)]
    phi: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Write the reduction trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct WnuArgs {
    #[arg(long)]
    h: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    /// Require the ternary minority identities as well.
    #[arg(long)]
    minority: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Mixed,
    LoopVertex,
    Family,
    Z3,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Discrepancy reports, one JSON document per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct ReplayArgs {
    reports: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Writes g.txt, h.txt, meta.json and (when found) phi.txt.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    g: PathBuf,
    #[arg(long)]
    h: PathBuf,
    #[arg(long)]
    phi: PathBuf,
    /// Skip the exhaustive preprocessing check above this many homomorphisms.
    #[arg(long, default_value_t = 100_000)]
    enum_cap: usize,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, rename_all = "kebab-case")]
struct CliConfig {
    k: usize,
    wnu_budget: u64,
    oracle_budget: u64,
    pipeline: PipelineConfig,
    fuzz: FuzzSection,
    family: FamilyParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, rename_all = "kebab-case")]
struct FuzzSection {
    trials: u64,
    seed: u64,
    profile: Profile,
    trace_slice: usize,
}

impl Default for FuzzSection {
    fn default() -> Self {
        let d = FuzzConfig::default();
        FuzzSection { trials: d.trials, seed: d.seed, profile: d.profile, trace_slice: d.trace_slice }
    }
}

impl Default for CliConfig {
    fn default() -> Self {
        let d = FuzzConfig::default();
        CliConfig {
            k: d.k,
            wnu_budget: d.wnu_budget,
            oracle_budget: d.oracle_budget,
            pipeline: PipelineConfig::default(),
            fuzz: FuzzSection::default(),
            family: FamilyParams::default(),
        }
    }
}

impl PipelineFlags {
    fn apply(&self, p: &mut PipelineConfig) {
        if let Some(o) = self.pick_order {
            p.pick_order = match o {
                PickArg::Lexicographic => PickOrder::Lexicographic,
                PickArg::ReverseVertex => PickOrder::ReverseVertex,
            };
        }
        if let Some(v) = self.validate {
            p.validate = match v {
                ValidateArg::Every => ValidateFrequency::Every,
                ValidateArg::Boundaries => ValidateFrequency::Boundaries,
                ValidateArg::Off => ValidateFrequency::Off,
            };
        }
        if let Some(b) = self.step_budget {
            p.step_budget = b;
        }
        if let Some(b) = self.maltsev_budget {
            p.maltsev_budget = b;
        }
        if let Some(nth) = self.fault_nth {
            p.fault = Some(Fault::CorruptRetarget { nth });
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    let Some(path) = path else { return Ok(CliConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_digraph(path: &Path) -> Result<Digraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Digraph::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_phi(path: &Path) -> Result<PolymorphismTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PolymorphismTable::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

/// Input and usage errors exit with 2; verdicts choose their own code.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let flags = match &cli.cmd {
        Cmd::Solve(a) => Some(&a.pipeline),
        Cmd::Fuzz(a) => Some(&a.pipeline),
        Cmd::Validate(a) => Some(&a.pipeline),
        _ => None,
    };
    if let Some(f) = flags {
        f.apply(&mut cfg.pipeline);
    }
    match &cli.cmd {
        Cmd::Solve(a) => cfg.k = a.k.unwrap_or(cfg.k),
        Cmd::WnuFind(a) => {
            cfg.k = a.k.unwrap_or(cfg.k);
            cfg.wnu_budget = a.budget.unwrap_or(cfg.wnu_budget);
        }
        Cmd::Fuzz(a) => {
            cfg.k = a.k.unwrap_or(cfg.k);
            cfg.fuzz.trials = a.trials.unwrap_or(cfg.fuzz.trials);
            cfg.fuzz.seed = a.seed.unwrap_or(cfg.fuzz.seed);
            if let Some(p) = a.profile {
                cfg.fuzz.profile = match p {
                    ProfileArg::Mixed => Profile::default(),
                    ProfileArg::LoopVertex => Profile::LoopVertex { g_max: 8 },
                    ProfileArg::Family => Profile::Family(cfg.family),
                    ProfileArg::Z3 => Profile::Z3 { g_max: 12 },
                };
            }
        }
        Cmd::Gen(a) => cfg.k = a.k.unwrap_or(cfg.k),
        _ => {}
    }
    if cli.show_config {
        let text = toml::to_string(&cfg).context("serializing config")?;
        print!("{text}");
        return Ok(EXIT_OK);
    }
    match cli.cmd {
        Cmd::Solve(a) => solve(&cfg, a),
        Cmd::WnuFind(a) => wnu_find(&cfg, a),
        Cmd::Fuzz(a) => run_fuzz(&cfg, a),
        Cmd::Replay(a) => run_replay(&cfg, a),
        Cmd::Gen(a) => run_gen(&cfg, a),
        Cmd::Validate(a) => run_validate(&cfg, a),
    }
}

fn search_phi(h: &Digraph, k: usize, budget: u64) -> Result<Result<PolymorphismTable, u8>> {
    let opts = SearchOptions { node_budget: budget, ..Default::default() };
    Ok(match find_weak_nu_with(h, k, &opts)? {
        SearchOutcome::Found(t) => Ok(t),
        SearchOutcome::Refuted => {
            eprintln!("H has no idempotent weak {k}-NU polymorphism");
            Err(EXIT_USAGE)
        }
        SearchOutcome::BudgetExhausted => {
            eprintln!("weak NU search ran out of budget");
            Err(EXIT_BUDGET)
        }
    })
}

fn solve(cfg: &CliConfig, a: SolveArgs) -> Result<u8> {
    let g = read_digraph(&a.g)?;
    let h = read_digraph(&a.h)?;
    let phi = match &a.phi {
        Some(p) => read_phi(p)?,
        None => match search_phi(&h, cfg.k, cfg.wnu_budget)? {
            Ok(t) => t,
            Err(code) => return Ok(code),
        },
    };
    let result = run_pipeline(&g, &h, &phi, &cfg.pipeline)?;
    if let Some(path) = &a.trace {
        let header = [("digest", result.trace_digest.clone())];
        fs::write(path, result.trace.to_text(&header)).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&serde_json::json!({
        "verdict": result.verdict,
        "digest": result.digest(),
        "trace_digest": result.trace_digest,
        "nm_iterations": result.nm_iterations,
        "validations": result.validations,
        "fault": result.fault,
        "timings_us": result.timings,
    }))?;
    Ok(match result.verdict {
        Verdict::Yes { .. } | Verdict::No { .. } => EXIT_OK,
        Verdict::Falsified { .. } => EXIT_FALSIFIED,
        Verdict::BudgetExhausted { .. } => EXIT_BUDGET,
    })
}

fn wnu_find(cfg: &CliConfig, a: WnuArgs) -> Result<u8> {
    let h = read_digraph(&a.h)?;
    let opts = SearchOptions { node_budget: cfg.wnu_budget, minority: a.minority, prefer: None };
    let outcome = find_weak_nu_with(&h, cfg.k, &opts)?;
    match outcome {
        SearchOutcome::Found(t) => {
            match &a.out {
                Some(p) => fs::write(p, t.to_text()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", t.to_text()),
            }
            Ok(EXIT_OK)
        }
        SearchOutcome::Refuted => {
            println!("refuted");
            Ok(EXIT_OK)
        }
        SearchOutcome::BudgetExhausted => {
            println!("budget-exhausted");
            Ok(EXIT_BUDGET)
        }
    }
}

fn run_fuzz(cfg: &CliConfig, a: FuzzArgs) -> Result<u8> {
    let fc = FuzzConfig {
        trials: cfg.fuzz.trials,
        seed: cfg.fuzz.seed,
        k: cfg.k,
        profile: cfg.fuzz.profile,
        wnu_budget: cfg.wnu_budget,
        oracle_budget: cfg.oracle_budget,
        pipeline: cfg.pipeline.clone(),
        trace_slice: cfg.fuzz.trace_slice,
    };
    let report = fuzz(&fc);
    if let Some(p) = &a.out {
        let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_reports(io::BufWriter::new(file), &report.discrepancies)?;
    }
    if let Some(p) = &a.summary {
        fs::write(p, serde_json::to_string_pretty(&report.summary).context("summary")?)?;
    }
    print_json(&report.summary)?;
    Ok(if report.discrepancies.is_empty() { EXIT_OK } else { EXIT_FALSIFIED })
}

fn run_replay(cfg: &CliConfig, a: ReplayArgs) -> Result<u8> {
    let file = fs::File::open(&a.reports).with_context(|| format!("opening {}", a.reports.display()))?;
    let reports = read_reports(BufReader::new(file)).map_err(anyhow::Error::msg)?;
    let mut reproduced = 0;
    let mut out = io::stdout().lock();
    for r in &reports {
        let rr = replay(r, cfg.oracle_budget).map_err(anyhow::Error::msg)?;
        reproduced += usize::from(rr.matches && rr.classification.is_some());
        serde_json::to_writer(&mut out, &rr).context("writing")?;
        writeln!(out).context("writing")?;
    }
    eprintln!("{} of {} reports reproduced", reproduced, reports.len());
    Ok(if reproduced > 0 { EXIT_FALSIFIED } else { EXIT_OK })
}

fn run_gen(cfg: &CliConfig, a: GenArgs) -> Result<u8> {
    let seed = a.seed.unwrap_or(0);
    let inst = match gen_counterexample_family(&cfg.family, seed) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_BUDGET);
        }
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    fs::write(a.out_dir.join("g.txt"), inst.g.to_text()).context("writing g.txt")?;
    fs::write(a.out_dir.join("h.txt"), inst.h.to_text()).context("writing h.txt")?;
    let phi = match family_weak_nu(&inst, cfg.k, cfg.wnu_budget) {
        SearchOutcome::Found(t) => {
            fs::write(a.out_dir.join("phi.txt"), t.to_text()).context("writing phi.txt")?;
            "found"
        }
        SearchOutcome::Refuted => "refuted",
        SearchOutcome::BudgetExhausted => "budget-exhausted",
    };
    let meta = serde_json::json!({ "seed": seed, "params": cfg.family, "meta": inst.meta, "weak_nu": phi });
    fs::write(a.out_dir.join("meta.json"), serde_json::to_string_pretty(&meta).context("meta")?).context("writing meta.json")?;
    print_json(&meta)?;
    Ok(EXIT_OK)
}

fn run_validate(cfg: &CliConfig, a: ValidateArgs) -> Result<u8> {
    let g = read_digraph(&a.g)?;
    let h = read_digraph(&a.h)?;
    let phi = read_phi(&a.phi)?;
    if phi.h_size() != h.n() {
        return Err(anyhow!("table is over {} values, H has {}", phi.h_size(), h.n()));
    }
    let rep = validate_instance(&g, &h, &phi, &cfg.pipeline, cfg.oracle_budget, a.enum_cap).map_err(anyhow::Error::msg)?;
    print_json(&rep)?;
    if rep.checks.iter().any(|c| c.name == "phi-weak-nu" && !c.passed) {
        return Err(anyhow!("the table is not a weak NU polymorphism of H"));
    }
    Ok(if rep.all_passed() { EXIT_OK } else { EXIT_FALSIFIED })
}
