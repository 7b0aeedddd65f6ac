//! Synchronous collective tree exploration on top of the asynchronous
//! engine.
//!
//! The synchronous game proceeds in rounds: every robot makes at most one
//! move per round. Driving the asynchronous engine with the cyclic
//! scheduler packs its grants `0, 1, ..., k-1` into rounds of `k`, so the
//! exploration phase takes `ceil(moves / k)` rounds; afterwards all robots
//! walk back to the root simultaneously, which takes at most `depth` extra
//! rounds. Total runtime is therefore at most
//! `(2n + gamma * phi(k) * depth) / k + depth + 1`.

use serde::Serialize;

use crate::acte::{run_to_completion, ActeReport, ExplorationState, Scheduler};
use crate::error::{Error, Result};
use crate::game::cost_ceiling;
use crate::potential::PotentialParams;
use crate::tree::RootedTree;

/// Outcome of one synchronous exploration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CteReport {
    /// Number of nodes.
    pub n: usize,
    /// Maximum root distance (in edges) over all nodes.
    pub depth: usize,
    /// Number of robots.
    pub k: usize,
    /// Rounds spent exploring (`ceil(moves / k)` under cyclic grants).
    pub exploration_rounds: u64,
    /// Rounds spent walking every robot back to the root.
    pub return_rounds: u64,
    /// Total rounds; all robots are back at the root when it elapses.
    pub runtime_rounds: u64,
    /// Guaranteed ceiling `(2n + gamma * phi(k) * depth) / k + depth + 1`.
    pub round_bound: f64,
    /// Report of the underlying asynchronous run.
    pub exploration: ActeReport,
}

impl CteReport {
    /// Whether the run stayed within its round ceiling.
    pub fn within_bound(&self) -> bool {
        (self.runtime_rounds as f64) <= self.round_bound
    }
}

/// Explores `tree` with `k` robots in synchronous rounds and returns them
/// to the root.
///
/// Fails if the runtime exceeds either the packing inequality
/// `ceil(moves / k) + depth` or the absolute round ceiling.
pub fn run_cte(tree: &RootedTree, k: usize, check: bool) -> Result<CteReport> {
    let params = PotentialParams::defaults_for_k(k as u64);
    let mut state = ExplorationState::new(tree, k, params, check)?;
    // The cyclic scheduler ignores the seed; pass a fixed one.
    let exploration = run_to_completion(&mut state, Scheduler::RoundRobin, 0)?;

    let exploration_rounds = exploration.moves.div_ceil(k as u64);
    let return_rounds = (0..k)
        .map(|r| {
            state
                .depth_of(state.robot_position(r))
                .expect("robot stands on a tree node") as u64
        })
        .max()
        .unwrap_or(0);
    let runtime_rounds = exploration_rounds + return_rounds;

    let depth = exploration.depth;
    let round_bound = (2.0 * exploration.n as f64
        + cost_ceiling(&params, k as u64, depth as f64))
        / k as f64
        + depth as f64
        + 1.0;

    let packing = exploration.moves.div_ceil(k as u64) + depth as u64;
    if runtime_rounds > packing {
        return Err(Error::InvariantViolation(format!(
            "runtime {runtime_rounds} exceeds grant packing ceiling {packing}"
        )));
    }
    if runtime_rounds as f64 > round_bound {
        return Err(Error::InvariantViolation(format!(
            "runtime {runtime_rounds} exceeds round ceiling {round_bound}"
        )));
    }

    Ok(CteReport {
        n: exploration.n,
        depth,
        k,
        exploration_rounds,
        return_rounds,
        runtime_rounds,
        round_bound,
        exploration,
    })
}

/// Runtime of a single-robot depth-first sweep: every edge is crossed once
/// down and once up, regardless of how many robots stand idle.
pub fn dfs_baseline(tree: &RootedTree, _k: usize) -> u64 {
    2 * (tree.node_count() as u64 - 1)
}

/// One row of a competitive-ratio measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompetitiveRow {
    /// Number of nodes.
    pub n: usize,
    /// Tree depth in edges.
    pub depth: usize,
    /// Robots available to the adversary benchmark.
    pub k: usize,
    /// Robots actually moved: `floor(sqrt(k))`; the rest idle at the root.
    pub k_active: usize,
    /// Measured synchronous runtime with `k_active` robots.
    pub runtime_rounds: u64,
    /// Optimal-order estimate `n / k + depth` with the full `k`.
    pub lower_estimate: f64,
    /// `runtime_rounds / lower_estimate`.
    pub ratio: f64,
}

/// Runs each tree with `floor(sqrt(k))` active robots and reports the
/// runtime relative to the `n / k + depth` yardstick for the full crew.
///
/// Fails if any ratio exceeds `ratio_cap * sqrt(k)`.
pub fn competitive_ratio_experiment(
    trees: &[RootedTree],
    k: usize,
    ratio_cap: f64,
) -> Result<Vec<CompetitiveRow>> {
    if k == 0 {
        return Err(Error::InvalidParams("need at least one robot".into()));
    }
    let k_active = (k as f64).sqrt().floor() as usize;
    let k_active = k_active.max(1);
    let mut rows = Vec::with_capacity(trees.len());
    for tree in trees {
        let rep = run_cte(tree, k_active, false)?;
        let lower_estimate = rep.n as f64 / k as f64 + rep.depth as f64;
        let ratio = rep.runtime_rounds as f64 / lower_estimate;
        if ratio > ratio_cap * (k as f64).sqrt() {
            return Err(Error::InvariantViolation(format!(
                "competitive ratio {ratio:.3} exceeds {:.3} on n={} depth={}",
                ratio_cap * (k as f64).sqrt(),
                rep.n,
                rep.depth
            )));
        }
        rows.push(CompetitiveRow {
            n: rep.n,
            depth: rep.depth,
            k,
            k_active,
            runtime_rounds: rep.runtime_rounds,
            lower_estimate,
            ratio,
        });
    }
    Ok(rows)
}
