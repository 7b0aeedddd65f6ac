//! `treeminer`: command-line driver for the mining game, the exploration
//! engines, the layered traversal, and the benchmark/verification harness.
//!
//! Exit codes: 0 success, 2 a performance bound was violated, 3 an internal
//! invariant failed (or a trace replay found a violation), 4 bad input.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use treeminer_core::acte::{run_acte, Scheduler};
use treeminer_core::cte::{competitive_ratio_experiment, dfs_baseline, run_cte};
use treeminer_core::game::{
    run_adversary, DeepestAdversary, GameState, RandomAdversary, ScriptAdversary,
};
use treeminer_core::harness::{
    bench, check_all, gen_tree, write_trace, BenchConfig, BenchMode, TreeFamily,
};
use treeminer_core::ltt::{
    fractional_traverse, gen_average_case, gen_unit_layered, tune_k, LayeredTree, RoundedSampler,
};
use treeminer_core::tm::{TmState, SHADOW_INIT_LEN};
use treeminer_core::tree::NodeId;
use treeminer_core::{Error, PotentialParams, Result, RootedTree};

const EXIT_BOUND: u8 = 2;
const EXIT_INVARIANT: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "treeminer",
    version,
    about = "Tree-mining game, collective exploration, and layered traversal"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play the continuous mining game against an adversary.
    Simulate(SimulateArgs),
    /// Explore a hidden tree with k robots and report move/round counts.
    Explore(ExploreArgs),
    /// Run the fractional (and optionally rounded) layered traversal.
    Traverse(TraverseArgs),
    /// Sweep an instance grid through an engine and emit a CSV.
    Bench(BenchArgs),
    /// Replay a JSONL trace and re-verify every event.
    Check(CheckArgs),
    /// Generate a benchmark instance and print its textual form.
    Gen(GenArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Adversary: `random`, `deepest`, or `script:<file>`.
    #[arg(long, default_value = "random")]
    adversary: String,
    /// Robot count.
    #[arg(long, default_value_t = 6)]
    k: u64,
    /// Maximum number of adversary moves.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// RNG seed (default: $TREEMINER_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Length of the starting edge.
    #[arg(long, default_value_t = 1.0)]
    initial_len: f64,
    /// Verify the run-long invariants after every event (slower).
    #[arg(long)]
    check: bool,
    /// Write the JSONL event trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    /// Tree file (`tree <n> <root>` header, `edge`/`node` lines).
    #[arg(long)]
    tree: PathBuf,
    /// Robot count.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// `acte` (asynchronous, counts moves) or `cte` (rounds).
    #[arg(long, default_value = "acte")]
    mode: String,
    /// Grant order: `roundrobin`, `random`, or `lopsided`.
    #[arg(long, default_value = "roundrobin")]
    scheduler: String,
    /// RNG seed (default: $TREEMINER_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Verify the mining-game invariants behind the exploration (slower).
    #[arg(long)]
    check: bool,
    /// Also run the reduced-crew experiment with floor(sqrt(k)) robots.
    #[arg(long)]
    sqrt_k: bool,
    /// Abort threshold for ratio/sqrt(k) in the reduced-crew experiment.
    #[arg(long, default_value_t = 5.0)]
    ratio_cap: f64,
}

#[derive(Args)]
struct TraverseArgs {
    /// Layered instance file (`layers`/`layer`/`edge`/`target` lines).
    #[arg(long)]
    instance: PathBuf,
    /// Robot count; omitted means floor(sqrt(width)), at least 2.
    #[arg(long)]
    k: Option<usize>,
    /// Monte Carlo samples of the rounded strategy (0 = skip).
    #[arg(long, default_value_t = 0)]
    samples: u64,
    /// RNG seed (default: $TREEMINER_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Engine to sweep: `acte`, `cte`, or `ltt`.
    #[arg(long, default_value = "acte")]
    mode: String,
    /// Comma-separated tree families (default: all six).
    #[arg(long)]
    families: Option<String>,
    /// Comma-separated node counts.
    #[arg(long)]
    ns: Option<String>,
    /// Comma-separated depth caps.
    #[arg(long)]
    depths: Option<String>,
    /// Comma-separated robot counts.
    #[arg(long)]
    ks: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated schedulers (acte mode only).
    #[arg(long)]
    schedulers: Option<String>,
    /// Comma-separated layer widths (ltt mode only).
    #[arg(long)]
    widths: Option<String>,
    /// Transitions per layered instance (ltt mode only).
    #[arg(long)]
    layers: Option<usize>,
    /// Engine-side invariant checking for every row (much slower).
    #[arg(long)]
    check: bool,
    /// Record wall-clock times (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
    /// Worker threads (0 = machine parallelism).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// JSONL trace produced by `simulate --trace`.
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// `path|star|broom|binary|randrec|spider` for node trees,
    /// `unit|average` for layered instances.
    #[arg(long)]
    family: String,
    /// Node count (tree families).
    #[arg(long)]
    n: Option<usize>,
    /// Depth cap (tree families).
    #[arg(long)]
    depth: Option<usize>,
    /// Layer width (layered families).
    #[arg(long)]
    width: Option<usize>,
    /// Layer transitions (layered families).
    #[arg(long)]
    layers: Option<usize>,
    /// RNG seed (default: $TREEMINER_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Write the instance here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

/// Maps engine errors onto the documented exit codes.
fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Parse(_)
        | Error::Script(_)
        | Error::InvalidParams(_)
        | Error::UnknownNode(_)
        | Error::DuplicateNode(_)
        | Error::InvalidEdgeLength { .. }
        | Error::NotALeaf(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::InvariantViolation(_)
        | Error::MoveBudgetExceeded { .. }
        | Error::ForkSearchFailed { .. }
        | Error::SolverFailed(_)
        | Error::IllegalMove(_)
        | Error::MassMismatch { .. }
        | Error::ConfigMismatch(_) => EXIT_INVARIANT,
    }
}

/// `--seed` falls back to $TREEMINER_SEED, then 0.
fn resolve_seed(explicit: Option<u64>) -> u64 {
    explicit.unwrap_or_else(|| {
        std::env::var("TREEMINER_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    })
}

fn emit(target: &Option<PathBuf>, content: &str) -> Result<()> {
    match target {
        Some(path) => fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Explore(args) => explore(args),
        Command::Traverse(args) => traverse(args),
        Command::Bench(args) => run_bench(args),
        Command::Check(args) => check(args),
        Command::Gen(args) => gen(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed);
    let params = PotentialParams::defaults_for_k(args.k);
    if let Some(path) = args.adversary.strip_prefix("script:") {
        let text = fs::read_to_string(path)?;
        if script_is_miner_game(&text) {
            return simulate_miner_script(&args, params, &text);
        }
        let mut adversary = ScriptAdversary::parse(&text)?;
        return simulate_continuous(&args, params, &mut adversary);
    }
    match args.adversary.as_str() {
        "random" => simulate_continuous(&args, params, &mut RandomAdversary::new(seed)),
        "deepest" => simulate_continuous(&args, params, &mut DeepestAdversary::default()),
        other => Err(Error::InvalidParams(format!(
            "unknown adversary {other:?} (expected random, deepest, or script:<file>)"
        ))),
    }
}

fn simulate_continuous(
    args: &SimulateArgs,
    params: PotentialParams,
    adversary: &mut dyn treeminer_core::game::Adversary,
) -> Result<u8> {
    let mut state = GameState::new(args.k, args.initial_len, params, args.check)?;
    let report = run_adversary(&mut state, adversary, args.steps)?;
    if let Some(path) = &args.trace {
        fs::write(path, write_trace(args.k, args.initial_len, &state))?;
    }
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(0)
}

/// True when the script drives the discrete miner game (`T` lines).
fn script_is_miner_game(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .any(|l| l.starts_with('T'))
}

/// Parses a miner-game script: one `T <node>` per line, no mixing with
/// continuous-game moves.
fn parse_miner_script(text: &str) -> Result<Vec<NodeId>> {
    let mut nodes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("T") => {}
            Some(other) => {
                return Err(Error::Script(format!(
                    "line {}: miner-game scripts take only T lines, found {other:?}",
                    lineno + 1
                )))
            }
            None => continue,
        }
        let node: NodeId = parts
            .next()
            .ok_or_else(|| Error::Script(format!("line {}: missing node", lineno + 1)))?
            .parse()
            .map_err(|e| Error::Script(format!("line {}: bad node: {e}", lineno + 1)))?;
        if parts.next().is_some() {
            return Err(Error::Script(format!("line {}: trailing tokens", lineno + 1)));
        }
        nodes.push(node);
    }
    Ok(nodes)
}

fn simulate_miner_script(
    args: &SimulateArgs,
    params: PotentialParams,
    text: &str,
) -> Result<u8> {
    let nodes = parse_miner_script(text)?;
    let mut tm = TmState::new(args.k, params, args.check)?;
    let mut steps = 0usize;
    for node in nodes {
        if steps >= args.steps {
            break;
        }
        if tm.finished {
            return Err(Error::Script(format!(
                "script mines node {node} after the game finished"
            )));
        }
        tm.step(node)?;
        steps += 1;
    }
    if let Some(path) = &args.trace {
        fs::write(path, write_trace(args.k, SHADOW_INIT_LEN, &tm.shadow))?;
    }
    let report = json!({
        "game": "miner",
        "steps": tm.steps,
        "cost": tm.cost,
        "shadow_cost": tm.shadow.cost,
        "finished": tm.finished,
        "active_leaves": tm.active.len(),
        "nodes": tm.tree.node_count(),
    });
    println!("{report}");
    Ok(0)
}

fn explore(args: ExploreArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed);
    let tree = RootedTree::from_text(&fs::read_to_string(&args.tree)?)?;
    let scheduler = Scheduler::parse(&args.scheduler)?;
    match args.mode.as_str() {
        "acte" => {
            let report = run_acte(&tree, args.k, scheduler, seed, args.check)?;
            let ok = report.within_bound();
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(if ok { 0 } else { EXIT_BOUND })
        }
        "cte" => {
            let report = run_cte(&tree, args.k, args.check)?;
            let ok = report.within_bound();
            let mut out = serde_json::to_value(&report).expect("report serializes");
            out["dfs_baseline"] = json!(dfs_baseline(&tree, args.k));
            if args.sqrt_k {
                let rows = competitive_ratio_experiment(
                    std::slice::from_ref(&tree),
                    args.k,
                    args.ratio_cap,
                )?;
                out["competitive"] = serde_json::to_value(rows).expect("rows serialize");
            }
            println!("{out}");
            Ok(if ok { 0 } else { EXIT_BOUND })
        }
        other => Err(Error::InvalidParams(format!(
            "unknown exploration mode {other:?} (expected acte or cte)"
        ))),
    }
}

fn traverse(args: TraverseArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed);
    let lt = LayeredTree::from_text(&fs::read_to_string(&args.instance)?)?;
    let k = args.k.unwrap_or_else(|| tune_k(&lt));
    let run = fractional_traverse(&lt, k)?;
    let mut out = json!({
        "k": run.k,
        "width": run.width,
        "depth": run.depth,
        "length": run.length,
        "expected_cost": run.expected_cost,
        "cost_bound": run.cost_bound,
        "moves": run.moves,
        "per_layer_ot": run.per_layer_ot,
    });
    if args.samples > 0 {
        let sampler = RoundedSampler::new(&lt, &run)?;
        let mut rng = treeminer_core::ltt::sampling_rng(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for _ in 0..args.samples {
            let c = sampler.sample(&mut rng);
            sum += c;
            sum_sq += c * c;
            min = min.min(c);
            max = max.max(c);
        }
        let m = args.samples as f64;
        let mean = sum / m;
        let variance = ((sum_sq - sum * sum / m) / (m - 1.0).max(1.0)).max(0.0);
        out["sampled"] = json!({
            "samples": args.samples,
            "mean": mean,
            "std_error": (variance / m).sqrt(),
            "min": min,
            "max": max,
        });
    }
    let ok = run.within_bound();
    println!("{out}");
    Ok(if ok { 0 } else { EXIT_BOUND })
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidParams(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

fn run_bench(args: BenchArgs) -> Result<u8> {
    let mode = BenchMode::parse(&args.mode)?;
    let mut config = BenchConfig::default_suite(mode);
    if let Some(text) = &args.families {
        config.families = text
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(TreeFamily::parse)
            .collect::<Result<_>>()?;
    }
    if let Some(text) = &args.ns {
        config.ns = parse_list("n", text)?;
    }
    if let Some(text) = &args.depths {
        config.depths = parse_list("depth", text)?;
    }
    if let Some(text) = &args.ks {
        config.ks = parse_list("k", text)?;
    }
    if let Some(text) = &args.seeds {
        config.seeds = parse_list("seed", text)?;
    }
    if let Some(text) = &args.schedulers {
        config.schedulers = text
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Scheduler::parse)
            .collect::<Result<_>>()?;
    }
    if let Some(text) = &args.widths {
        config.widths = parse_list("width", text)?;
    }
    if let Some(layers) = args.layers {
        config.layer_count = layers;
    }
    config.check = args.check;
    config.timing = args.timing;
    config.threads = args.threads;

    let outcome = bench(&config)?;
    emit(&args.out, &outcome.csv)?;
    eprintln!(
        "rows={} violations={} errors={} infeasible={}",
        outcome.rows, outcome.violations, outcome.errors, outcome.infeasible
    );
    if outcome.violations > 0 {
        Ok(EXIT_BOUND)
    } else if outcome.errors > 0 {
        Ok(EXIT_INVARIANT)
    } else {
        Ok(0)
    }
}

fn check(args: CheckArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.trace)?;
    let report = check_all(&text)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(if report.clean() { 0 } else { EXIT_INVARIANT })
}

fn gen(args: GenArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed);
    let need = |value: Option<usize>, flag: &str| {
        value.ok_or_else(|| Error::InvalidParams(format!("--{flag} is required for this family")))
    };
    let text = match args.family.as_str() {
        "unit" | "average" => {
            let width = need(args.width, "width")?;
            let layers = need(args.layers, "layers")?;
            let lt = if args.family == "unit" {
                gen_unit_layered(width, layers, seed)?
            } else {
                gen_average_case(width, layers, seed)?
            };
            lt.to_text()
        }
        family => {
            let family = TreeFamily::parse(family)?;
            let n = need(args.n, "n")?;
            let depth = need(args.depth, "depth")?;
            gen_tree(family, n, depth, seed)?.to_text()
        }
    };
    emit(&args.out, &text)?;
    Ok(0)
}
