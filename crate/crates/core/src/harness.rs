//! Instance generators, benchmark sweeps, and trace verification.
//!
//! Three tools live here:
//! * [`gen_tree`] builds the benchmark tree families, each with exactly `n`
//!   nodes, unit edges, and depth at most `D`, deterministically per seed.
//! * [`bench`] sweeps a grid of instances through one of the engines and
//!   emits an order-stable CSV of metric / bound / margin rows. Timing is
//!   opt-in so that fixed seeds reproduce byte-identical files.
//! * [`check_all`] replays a JSONL event trace from scratch, recomputing
//!   every recorded cost and potential and re-verifying the run-long
//!   invariants (cost-versus-benchmark inequality, componentwise placement
//!   bounds, one robot per leaf, simplicity) at every adversary event.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acte::{run_acte, Scheduler};
use crate::cte::run_cte;
use crate::error::{Error, Result};
use crate::game::{cost_ceiling, EventRecord, GameState};
use crate::ltt::{fractional_traverse, gen_average_case, gen_unit_layered, tune_k, LayeredTree};
use crate::oracle::{check_master_inequality, check_xy_bounds};
use crate::potential::{fork_config, fork_tree, potential_discrete, PotentialParams};
use crate::tree::{DiscreteConfig, NodeId, RootedTree};

/// Relative tolerance used when a replay recomputes recorded quantities.
pub const REPLAY_REL_TOL: f64 = 1e-6;

/// Benchmark tree families, chosen to stress both the node term and the
/// depth term of the move bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeFamily {
    /// Single chain; depth n−1.
    Path,
    /// Root with n−1 children; depth 1.
    Star,
    /// Chain of depth D with the surplus nodes as leaves near its end.
    Broom,
    /// Complete binary tree filled in breadth-first order.
    Binary,
    /// Random recursive tree with a depth cap.
    Randrec,
    /// Root with legs of length D (spider).
    Spider,
}

impl TreeFamily {
    pub const ALL: [TreeFamily; 6] = [
        TreeFamily::Path,
        TreeFamily::Star,
        TreeFamily::Broom,
        TreeFamily::Binary,
        TreeFamily::Randrec,
        TreeFamily::Spider,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TreeFamily::Path => "path",
            TreeFamily::Star => "star",
            TreeFamily::Broom => "broom",
            TreeFamily::Binary => "binary",
            TreeFamily::Randrec => "randrec",
            TreeFamily::Spider => "spider",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::InvalidParams(format!("unknown tree family {name:?}")))
    }
}

/// Builds one benchmark instance: a unit-edge tree with exactly `n` nodes
/// and depth at most `d`, deterministic in `seed`. Errors when the family
/// cannot realize the requested shape.
pub fn gen_tree(family: TreeFamily, n: usize, d: usize, seed: u64) -> Result<RootedTree> {
    if n == 0 {
        return Err(Error::InvalidParams("a tree needs at least one node".into()));
    }
    let mut tree = RootedTree::new();
    match family {
        TreeFamily::Path => {
            if n - 1 > d {
                return Err(Error::InvalidParams(format!(
                    "path with {n} nodes has depth {}, above the cap {d}",
                    n - 1
                )));
            }
            let mut tip = tree.root();
            for _ in 1..n {
                tip = tree.add_child(tip, 1.0)?;
            }
        }
        TreeFamily::Star => {
            if n >= 2 && d < 1 {
                return Err(Error::InvalidParams(format!(
                    "star with {n} nodes has depth 1, above the cap {d}"
                )));
            }
            for _ in 1..n {
                tree.add_child(tree.root(), 1.0)?;
            }
        }
        TreeFamily::Broom => {
            if d < 1 || n < d + 1 {
                return Err(Error::InvalidParams(format!(
                    "broom needs depth >= 1 and at least depth+1 nodes, got n={n} depth {d}"
                )));
            }
            let mut tip = tree.root();
            let mut penultimate = tree.root();
            for step in 0..d {
                penultimate = tip;
                tip = tree.add_child(tip, 1.0)?;
                let _ = step;
            }
            // The surplus leaves share the chain's penultimate node, keeping
            // every leaf at depth d.
            for _ in 0..n - d - 1 {
                tree.add_child(penultimate, 1.0)?;
            }
        }
        TreeFamily::Binary => {
            // Breadth-first filling reaches depth floor(log2(n)).
            if n.ilog2() as usize > d {
                return Err(Error::InvalidParams(format!(
                    "binary tree with {n} nodes needs depth {}, above the cap {d}",
                    n.ilog2()
                )));
            }
            let mut ids = vec![tree.root()];
            for i in 1..n {
                let parent = ids[(i - 1) / 2];
                ids.push(tree.add_child(parent, 1.0)?);
            }
        }
        TreeFamily::Randrec => {
            if n >= 2 && d < 1 {
                return Err(Error::InvalidParams(format!(
                    "random recursive tree with {n} nodes needs a positive depth cap"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Nodes still allowed to receive children.
            let mut open: Vec<(NodeId, usize)> = vec![(tree.root(), 0)];
            for _ in 1..n {
                let (parent, depth) = open[rng.gen_range(0..open.len())];
                let child = tree.add_child(parent, 1.0)?;
                if depth + 1 < d {
                    open.push((child, depth + 1));
                }
            }
        }
        TreeFamily::Spider => {
            if n >= 2 && d < 1 {
                return Err(Error::InvalidParams(format!(
                    "spider with {n} nodes needs a positive depth cap"
                )));
            }
            let mut remaining = n - 1;
            while remaining > 0 {
                let leg = remaining.min(d);
                let mut tip = tree.root();
                for _ in 0..leg {
                    tip = tree.add_child(tip, 1.0)?;
                }
                remaining -= leg;
            }
        }
    }
    debug_assert_eq!(tree.node_count(), n);
    Ok(tree)
}

/// Which engine a benchmark sweep drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Asynchronous exploration: metric = total moves.
    Acte,
    /// Synchronous exploration: metric = runtime rounds.
    Cte,
    /// Layered traversal: metric = expected traversal cost.
    Ltt,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Acte => "acte",
            BenchMode::Cte => "cte",
            BenchMode::Ltt => "ltt",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "acte" => Ok(BenchMode::Acte),
            "cte" => Ok(BenchMode::Cte),
            "ltt" => Ok(BenchMode::Ltt),
            other => Err(Error::InvalidParams(format!("unknown bench mode {other:?}"))),
        }
    }
}

/// Grid of instances for one sweep. Exploration modes read the tree
/// dimensions; the layered mode reads widths and the layer count.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub families: Vec<TreeFamily>,
    pub ns: Vec<usize>,
    pub depths: Vec<usize>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub schedulers: Vec<Scheduler>,
    /// Layer widths swept in layered mode.
    pub widths: Vec<usize>,
    /// Transitions per layered instance.
    pub layer_count: usize,
    /// Run engine-side invariant checking (slower).
    pub check: bool,
    /// Record wall-clock times; off by default to keep CSVs reproducible.
    pub timing: bool,
    /// Worker threads; 0 picks the machine's parallelism.
    pub threads: usize,
}

impl BenchConfig {
    /// The default suite for a mode: the full acceptance grid.
    pub fn default_suite(mode: BenchMode) -> Self {
        BenchConfig {
            mode,
            families: TreeFamily::ALL.to_vec(),
            ns: vec![100, 1000, 10000],
            depths: vec![5, 20, 100],
            ks: vec![2, 4, 8],
            seeds: (0..10).collect(),
            schedulers: vec![Scheduler::RoundRobin, Scheduler::Random, Scheduler::Lopsided],
            widths: vec![2, 4, 8, 16, 32],
            layer_count: 30,
            check: false,
            timing: false,
            threads: 0,
        }
    }
}

/// One grid point, resolved before dispatch to a worker.
#[derive(Debug, Clone, Copy)]
enum RowSpec {
    Tree {
        mode: BenchMode,
        family: TreeFamily,
        n: usize,
        depth: usize,
        k: usize,
        seed: u64,
        scheduler: Scheduler,
    },
    Layered {
        average: bool,
        width: usize,
        layers: usize,
        seed: u64,
    },
}

/// Sweep outcome: the CSV plus violation/error tallies for exit codes.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub csv: String,
    pub rows: usize,
    pub violations: usize,
    pub errors: usize,
    pub infeasible: usize,
}

const CSV_HEADER: [&str; 12] = [
    "mode", "family", "n", "depth", "k", "scheduler", "seed", "metric", "bound", "margin",
    "status", "wall_ms",
];

fn enumerate_rows(config: &BenchConfig) -> Vec<RowSpec> {
    let mut specs = Vec::new();
    match config.mode {
        BenchMode::Acte => {
            for &family in &config.families {
                for &n in &config.ns {
                    for &depth in &config.depths {
                        for &k in &config.ks {
                            for &seed in &config.seeds {
                                for &scheduler in &config.schedulers {
                                    specs.push(RowSpec::Tree {
                                        mode: BenchMode::Acte,
                                        family,
                                        n,
                                        depth,
                                        k,
                                        seed,
                                        scheduler,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        BenchMode::Cte => {
            for &family in &config.families {
                for &n in &config.ns {
                    for &depth in &config.depths {
                        for &k in &config.ks {
                            for &seed in &config.seeds {
                                specs.push(RowSpec::Tree {
                                    mode: BenchMode::Cte,
                                    family,
                                    n,
                                    depth,
                                    k,
                                    seed,
                                    scheduler: Scheduler::RoundRobin,
                                });
                            }
                        }
                    }
                }
            }
        }
        BenchMode::Ltt => {
            for &average in &[false, true] {
                for &width in &config.widths {
                    for &seed in &config.seeds {
                        specs.push(RowSpec::Layered {
                            average,
                            width,
                            layers: config.layer_count,
                            seed,
                        });
                    }
                }
            }
        }
    }
    specs
}

/// Fields of one CSV row in header order.
type RowValues = [String; 12];

fn compute_row(spec: RowSpec, check: bool, timing: bool) -> RowValues {
    let started = Instant::now();
    let mut row = match spec {
        RowSpec::Tree {
            mode,
            family,
            n,
            depth,
            k,
            seed,
            scheduler,
        } => {
            let base = |metric: String, bound: String, margin: String, status: String| {
                [
                    mode.name().to_string(),
                    family.name().to_string(),
                    n.to_string(),
                    depth.to_string(),
                    k.to_string(),
                    scheduler.name().to_string(),
                    seed.to_string(),
                    metric,
                    bound,
                    margin,
                    status,
                    String::new(),
                ]
            };
            let tree = match gen_tree(family, n, depth, seed) {
                Ok(t) => t,
                Err(_) => {
                    return base(
                        String::new(),
                        String::new(),
                        String::new(),
                        "infeasible".into(),
                    )
                }
            };
            // Emitted bounds always use the requested depth cap, which is at
            // least the realized depth.
            let params = PotentialParams::defaults_for_k(k as u64);
            let ceiling = cost_ceiling(&params, k as u64, depth as f64);
            let outcome: Result<(f64, f64)> = match mode {
                BenchMode::Acte => run_acte(&tree, k, scheduler, seed, check)
                    .map(|rep| (rep.moves as f64, 2.0 * n as f64 + ceiling)),
                BenchMode::Cte => run_cte(&tree, k, check).map(|rep| {
                    (
                        rep.runtime_rounds as f64,
                        (2.0 * n as f64 + ceiling) / k as f64 + depth as f64 + 1.0,
                    )
                }),
                BenchMode::Ltt => unreachable!("layered rows use RowSpec::Layered"),
            };
            match outcome {
                Ok((metric, bound)) => {
                    let margin = bound - metric;
                    let status = if margin >= 0.0 { "ok" } else { "violation" };
                    base(
                        metric.to_string(),
                        bound.to_string(),
                        margin.to_string(),
                        status.into(),
                    )
                }
                Err(e) => base(
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {e}"),
                ),
            }
        }
        RowSpec::Layered {
            average,
            width,
            layers,
            seed,
        } => {
            let family = if average { "average" } else { "unit" };
            let gen: Result<LayeredTree> = if average {
                gen_average_case(width, layers, seed)
            } else {
                gen_unit_layered(width, layers, seed)
            };
            let finish = |lt: Option<&LayeredTree>,
                          k: String,
                          metric: String,
                          bound: String,
                          margin: String,
                          status: String| {
                [
                    "ltt".to_string(),
                    family.to_string(),
                    lt.map_or_else(String::new, |t| t.total_length().to_string()),
                    lt.map_or_else(String::new, |t| t.source_target_distance().to_string()),
                    k,
                    String::new(),
                    seed.to_string(),
                    metric,
                    bound,
                    margin,
                    status,
                    String::new(),
                ]
            };
            match gen {
                Err(e) => finish(
                    None,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {e}"),
                ),
                Ok(lt) => {
                    let k = tune_k(&lt);
                    match fractional_traverse(&lt, k) {
                        Ok(run) => {
                            let margin = run.cost_bound - run.expected_cost;
                            let status = if margin >= 0.0 { "ok" } else { "violation" };
                            finish(
                                Some(&lt),
                                k.to_string(),
                                run.expected_cost.to_string(),
                                run.cost_bound.to_string(),
                                margin.to_string(),
                                status.into(),
                            )
                        }
                        Err(e) => finish(
                            Some(&lt),
                            k.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            format!("error: {e}"),
                        ),
                    }
                }
            }
        }
    };
    if timing {
        row[11] = format!("{:.3}", started.elapsed().as_secs_f64() * 1000.0);
    }
    row
}

/// Runs the sweep over a worker pool and assembles the CSV in grid order.
pub fn bench(config: &BenchConfig) -> Result<BenchOutcome> {
    let specs = enumerate_rows(config);
    let threads = if config.threads == 0 {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    } else {
        config.threads
    }
    .max(1)
    .min(specs.len().max(1));

    let mut results: Vec<Option<RowValues>> = Vec::new();
    results.resize_with(specs.len(), || None);
    if !specs.is_empty() {
        let chunks: Vec<Vec<(usize, RowValues)>> = std::thread::scope(|scope| {
            let specs = &specs;
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = w;
                        while i < specs.len() {
                            out.push((i, compute_row(specs[i], config.check, config.timing)));
                            i += threads;
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench worker panicked"))
                .collect()
        });
        for chunk in chunks {
            for (i, row) in chunk {
                results[i] = Some(row);
            }
        }
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| Error::Parse(format!("csv: {e}")))?;
    let mut violations = 0;
    let mut errors = 0;
    let mut infeasible = 0;
    let rows = results.len();
    for row in results {
        let row = row.expect("every row computed");
        match row[10].as_str() {
            "violation" => violations += 1,
            "infeasible" => infeasible += 1,
            s if s.starts_with("error") => errors += 1,
            _ => {}
        }
        writer
            .write_record(&row)
            .map_err(|e| Error::Parse(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Parse(format!("csv: {e}")))?;
    let csv = String::from_utf8(bytes).expect("csv output is utf-8");
    Ok(BenchOutcome {
        csv,
        rows,
        violations,
        errors,
        infeasible,
    })
}

/// First line of a trace file: everything needed to replay the event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeader {
    pub k: u64,
    pub initial_len: f64,
    pub params: PotentialParams,
}

/// Serializes a finished game as a self-contained JSONL trace: one header
/// line followed by the event log.
pub fn write_trace(k: u64, initial_len: f64, state: &GameState) -> String {
    let header = TraceHeader {
        k,
        initial_len,
        params: state.params,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&state.event_log_jsonl());
    out
}

/// First failure found by a replay.
#[derive(Debug, Clone, Serialize)]
pub struct TraceViolation {
    /// 0-based index of the offending event line.
    pub index: usize,
    pub message: String,
}

/// Outcome of replaying a trace.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    /// Events processed (including the offending one, if any).
    pub events: usize,
    pub violation: Option<TraceViolation>,
}

impl CheckReport {
    pub fn clean(&self) -> bool {
        self.violation.is_none()
    }
}

/// Mutable replay state threaded through the per-record verifier.
struct Replay {
    tree: RootedTree,
    config: DiscreteConfig,
    cost: f64,
    /// Costs of the robot moves since the last non-move record. A deletion
    /// summarizes its own evacuation moves, which form a suffix of this run
    /// (a truncated elongation can leave its trailing moves in front).
    trailing_moves: Vec<f64>,
    params: PotentialParams,
}

fn replay_tol(scale: f64) -> f64 {
    REPLAY_REL_TOL * scale.abs().max(1.0)
}

impl Replay {
    /// Applies one record, re-deriving its cost from the state; any
    /// discrepancy or invariant failure comes back as a violation message.
    fn step(&mut self, rec: &EventRecord) -> std::result::Result<(), String> {
        let engine = |e: Error| e.to_string();
        // Robot moves are intra-event bookkeeping; the invariant battery
        // runs on adversary-event boundaries.
        let mut boundary = true;
        let recorded_potential;
        match *rec {
            EventRecord::Elongate {
                leaf,
                amount,
                truncated: _,
                cost_delta,
                potential_after,
            } => {
                let x = self.config.get(leaf);
                if x < 2 {
                    return Err(format!(
                        "elongation of leaf {leaf} holding {x} robots (needs at least 2)"
                    ));
                }
                self.tree.elongate_edge(leaf, amount).map_err(engine)?;
                let expected = amount * x as f64;
                if (cost_delta - expected).abs() > replay_tol(expected) {
                    return Err(format!(
                        "elongation cost {cost_delta} disagrees with recomputed {expected}"
                    ));
                }
                self.cost += cost_delta;
                self.trailing_moves.clear();
                recorded_potential = potential_after;
            }
            EventRecord::Move {
                src,
                dst,
                cost_delta,
                potential_after,
            } => {
                let dist = self.tree.distance(src, dst).map_err(engine)?;
                self.config.move_unit(src, dst).map_err(engine)?;
                if (cost_delta - dist).abs() > replay_tol(dist) {
                    return Err(format!(
                        "move {src} -> {dst} cost {cost_delta} disagrees with distance {dist}"
                    ));
                }
                self.cost += cost_delta;
                self.trailing_moves.push(cost_delta);
                recorded_potential = potential_after;
                boundary = false;
            }
            EventRecord::Fork {
                leaf,
                m,
                delta,
                ref children,
                cost_delta,
                potential_after,
            } => {
                let x = self.config.get(leaf);
                let (forked, kids) = fork_tree(&self.tree, leaf, m, delta).map_err(engine)?;
                if &kids != children {
                    return Err(format!(
                        "fork of {leaf} produced children {kids:?}, trace says {children:?}"
                    ));
                }
                self.config = fork_config(&self.config, leaf, &kids);
                self.tree = forked;
                let expected = delta * x as f64;
                if (cost_delta - expected).abs() > replay_tol(expected) {
                    return Err(format!(
                        "fork cost {cost_delta} disagrees with recomputed {expected}"
                    ));
                }
                self.cost += cost_delta;
                self.trailing_moves.clear();
                recorded_potential = potential_after;
            }
            EventRecord::Delete {
                leaf,
                cost_delta,
                potential_after,
            } => {
                let left = self.config.get(leaf);
                if left != 0 {
                    return Err(format!("{left} robots remained on deleted leaf {leaf}"));
                }
                // The deletion entry summarizes its own evacuation moves,
                // which were already charged one by one and form a nonempty
                // suffix of the trailing move run.
                let mut suffix = 0.0;
                let matched = self.trailing_moves.iter().rev().any(|&c| {
                    suffix += c;
                    (cost_delta - suffix).abs() <= replay_tol(suffix)
                });
                if !matched {
                    return Err(format!(
                        "deletion cost {cost_delta} matches no suffix of the preceding {} move costs",
                        self.trailing_moves.len()
                    ));
                }
                self.tree.remove_leaf(leaf).map_err(engine)?;
                self.tree.normalize_simple();
                self.trailing_moves.clear();
                recorded_potential = potential_after;
            }
        }
        let potential = potential_discrete(&self.tree, &self.config, &self.params).map_err(engine)?;
        if (recorded_potential - potential).abs() > replay_tol(potential) {
            return Err(format!(
                "recorded potential {recorded_potential} disagrees with recomputed {potential}"
            ));
        }
        if boundary {
            self.verify_invariants()?;
        }
        Ok(())
    }

    fn verify_invariants(&self) -> std::result::Result<(), String> {
        let engine = |e: Error| e.to_string();
        for leaf in self.tree.leaves() {
            if self.config.get(leaf) < 1 {
                return Err(format!("leaf {leaf} is left without a robot"));
            }
        }
        let simple = self
            .tree
            .node_ids()
            .all(|u| u == self.tree.root() || self.tree.children(u).map_or(0, |c| c.len()) != 1);
        if !simple {
            return Err("tree has a non-root node with exactly one child".into());
        }
        let master =
            check_master_inequality(&self.tree, &self.config, self.cost, &self.params).map_err(engine)?;
        if !master.holds {
            return Err(format!(
                "cost-versus-benchmark inequality violated: {} > {}",
                master.lhs, master.rhs
            ));
        }
        let xy = check_xy_bounds(&self.tree, &self.config, &self.params).map_err(engine)?;
        if !xy.holds {
            return Err(format!(
                "componentwise bounds violated: upper margin {}, lower margin {}",
                xy.upper_margin, xy.lower_margin
            ));
        }
        Ok(())
    }
}

/// Replays a JSONL trace, re-verifying costs, potentials, and run-long
/// invariants at every event. Returns the first violation (with its event
/// index) or a clean report; malformed JSON is an error, not a violation.
pub fn check_all(trace: &str) -> Result<CheckReport> {
    let mut lines = trace.lines().map(str::trim).filter(|l| !l.is_empty());
    let Some(first) = lines.next() else {
        return Ok(CheckReport {
            events: 0,
            violation: None,
        });
    };
    let header: TraceHeader = serde_json::from_str(first)
        .map_err(|e| Error::Parse(format!("trace header: {e}")))?;
    header.params.validate(header.k)?;
    let mut tree = RootedTree::new();
    let leaf = tree.add_child(tree.root(), header.initial_len)?;
    let mut replay = Replay {
        tree,
        config: DiscreteConfig::single(leaf, header.k),
        cost: 0.0,
        trailing_moves: Vec::new(),
        params: header.params,
    };
    let mut events = 0;
    for (index, line) in lines.enumerate() {
        let rec: EventRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("event {index}: {e}")))?;
        events = index + 1;
        if let Err(message) = replay.step(&rec) {
            return Ok(CheckReport {
                events,
                violation: Some(TraceViolation { index, message }),
            });
        }
    }
    Ok(CheckReport {
        events,
        violation: None,
    })
}
