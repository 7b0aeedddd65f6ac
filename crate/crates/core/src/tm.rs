//! The discrete tree-mining game and its continuous shadow.
//!
//! In the discrete game a tree of unit edges grows at chosen active leaves:
//! mining a leaf holding `x` miners deactivates it, attaches fresh active
//! children that keep one miner each, and relocates the remaining miners,
//! paying their travel distance (relocations onto a fresh child are free).
//!
//! Rather than choosing relocation targets directly, the engine mirrors
//! every discrete step into a shadow continuous game — fork for several
//! children, a deferred unit elongation for one child, deletion for none —
//! then tops up all underlength shadow edges held by at least two robots.
//! The robot moves fired by the shadow determine where relocated miners go,
//! and the discrete cost never exceeds the shadow cost.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{CtmMove, GameState};
use crate::potential::PotentialParams;
use crate::tree::{NodeId, RootedTree};

/// Initial length of the shadow's approach edge. Kept tiny so shadow depths
/// exceed discrete depths by a negligible amount and depth-based cost
/// ceilings transfer unchanged.
pub const SHADOW_INIT_LEN: f64 = 1e-6;

/// Tolerance below which a shadow edge counts as fully grown.
const SHORTFALL_TOL: f64 = 1e-9;

/// One discrete mining step's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TmStepReport {
    pub chosen: NodeId,
    /// Fresh children attached under the mined leaf (one free miner each).
    pub children: Vec<NodeId>,
    /// Miners relocated to pre-existing leaves: (leaf, how many).
    pub relocations: Vec<(NodeId, u64)>,
    /// Discrete cost charged for this step.
    pub step_cost: f64,
    /// Shadow cost accrued while mirroring this step.
    pub shadow_cost_delta: f64,
}

/// State of one discrete mining game plus its continuous shadow.
#[derive(Debug, Clone)]
pub struct TmState {
    /// The discrete tree; every edge has unit length.
    pub tree: RootedTree,
    /// Leaves that may still be mined.
    pub active: BTreeSet<NodeId>,
    /// Miners per active leaf (always ≥ 1).
    pub miners: BTreeMap<NodeId, u64>,
    /// Accumulated discrete cost.
    pub cost: f64,
    pub steps: usize,
    /// The mirrored continuous game.
    pub shadow: GameState,
    tm_to_shadow: BTreeMap<NodeId, NodeId>,
    shadow_to_tm: BTreeMap<NodeId, NodeId>,
    /// Set once no active leaf remains.
    pub finished: bool,
    k: u64,
}

impl TmState {
    /// A fresh game: the root is the only active leaf and holds all miners.
    /// The shadow starts with all robots on a single short approach edge.
    pub fn new(k: u64, params: PotentialParams, check: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams("need at least one miner".into()));
        }
        let shadow = GameState::new(k, SHADOW_INIT_LEN, params, check)?;
        let tree = RootedTree::new();
        let root = tree.root();
        let shadow_leaf = shadow.tree.leaves()[0];
        let mut tm_to_shadow = BTreeMap::new();
        let mut shadow_to_tm = BTreeMap::new();
        tm_to_shadow.insert(root, shadow_leaf);
        shadow_to_tm.insert(shadow_leaf, root);
        Ok(TmState {
            tree,
            active: BTreeSet::from([root]),
            miners: BTreeMap::from([(root, k)]),
            cost: 0.0,
            steps: 0,
            shadow,
            tm_to_shadow,
            shadow_to_tm,
            finished: false,
            k,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn check(&self) -> bool {
        self.shadow.check
    }

    /// Shallowest depth (in edges) of any active leaf; `None` when finished.
    pub fn min_active_depth(&self) -> Option<usize> {
        self.active
            .iter()
            .map(|&l| self.tree.depth_hops(l).expect("active leaf exists"))
            .min()
    }

    /// Deepest depth (in edges) of any active leaf; `None` when finished.
    pub fn max_active_depth(&self) -> Option<usize> {
        self.active
            .iter()
            .map(|&l| self.tree.depth_hops(l).expect("active leaf exists"))
            .max()
    }

    /// Shadow leaf mirroring an active discrete leaf.
    pub fn shadow_leaf_of(&self, tm_leaf: NodeId) -> Option<NodeId> {
        self.tm_to_shadow.get(&tm_leaf).copied()
    }

    /// Discrete leaf mirrored by a shadow leaf.
    pub fn tm_leaf_of(&self, shadow_leaf: NodeId) -> Option<NodeId> {
        self.shadow_to_tm.get(&shadow_leaf).copied()
    }

    /// How far a shadow leaf's depth lags behind its discrete counterpart.
    fn shortfall(&self, shadow_leaf: NodeId) -> Result<f64> {
        let tm_leaf = self.shadow_to_tm[&shadow_leaf];
        let target = self.tree.depth_hops(tm_leaf)? as f64 + SHADOW_INIT_LEN;
        Ok(target - self.shadow.tree.depth_len(shadow_leaf)?)
    }

    /// Standard mining step: the mined leaf spawns one child per miner
    /// except the last.
    pub fn step(&mut self, chosen: NodeId) -> Result<TmStepReport> {
        let x = *self
            .miners
            .get(&chosen)
            .ok_or_else(|| Error::IllegalMove(format!("leaf {chosen} is not active")))?;
        self.step_with_children(chosen, x - 1)
    }

    /// Generalized mining step attaching exactly `children` fresh leaves
    /// (`children ≤ miners − 1`; zero children deactivates outright).
    pub fn step_with_children(&mut self, chosen: NodeId, children: u64) -> Result<TmStepReport> {
        if self.finished {
            return Err(Error::IllegalMove("mining game is finished".into()));
        }
        if !self.active.contains(&chosen) {
            return Err(Error::IllegalMove(format!("leaf {chosen} is not active")));
        }
        let x = self.miners[&chosen];
        if children > 0 && children > x - 1 {
            return Err(Error::IllegalMove(format!(
                "cannot attach {children} children at a leaf holding {x} miners"
            )));
        }
        let shadow_leaf = self.tm_to_shadow[&chosen];
        let before = self.miners.clone();
        let shadow_cost_before = self.shadow.cost;

        // Discrete side: deactivate and attach fresh children.
        self.active.remove(&chosen);
        self.miners.remove(&chosen);
        self.tm_to_shadow.remove(&chosen);
        let mut tm_children = Vec::with_capacity(children as usize);
        for _ in 0..children {
            let c = self.tree.add_child(chosen, 1.0)?;
            self.active.insert(c);
            tm_children.push(c);
        }

        // Shadow side: one structural move. A single child needs no
        // structural change — the mirrored leaf just gains another unit of
        // target depth, collected by the top-up pass below.
        match children {
            0 => {
                self.shadow_to_tm.remove(&shadow_leaf);
                if self.shadow.tree.leaves().len() >= 2 {
                    self.shadow.apply(CtmMove::Delete { leaf: shadow_leaf })?;
                } else {
                    // Last active leaf mined with nothing to attach: the
                    // game ends and the miners retire.
                    self.finished = true;
                }
            }
            1 => {
                self.shadow_to_tm.remove(&shadow_leaf);
                let child = tm_children[0];
                self.tm_to_shadow.insert(child, shadow_leaf);
                self.shadow_to_tm.insert(shadow_leaf, child);
            }
            m => {
                let out = self.shadow.apply(CtmMove::Fork { leaf: shadow_leaf, m })?;
                self.shadow_to_tm.remove(&shadow_leaf);
                for (&tm_c, &sh_c) in tm_children.iter().zip(out.children.iter()) {
                    self.tm_to_shadow.insert(tm_c, sh_c);
                    self.shadow_to_tm.insert(sh_c, tm_c);
                }
            }
        }

        // Top-up pass: grow every underlength shadow edge holding at least
        // two robots until it matches its discrete depth. Robot moves fired
        // along the way decide where relocated miners end up. When several
        // short siblings are near-tied, a surplus robot legitimately cycles
        // among them in small slices (events fire roughly every
        // sibling-distance / marginal-potential units of growth), so the
        // iteration cap is a generous safety valve, not a tuning knob:
        // total shortfall strictly decreases every iteration.
        if !self.finished {
            let budget = 100_000;
            let mut iters = 0;
            loop {
                iters += 1;
                if iters > budget {
                    return Err(Error::MoveBudgetExceeded { budget });
                }
                let mut pending = None;
                for l in self.shadow.tree.leaves() {
                    if self.shadow.config.get(l) >= 2 {
                        let s = self.shortfall(l)?;
                        if s > SHORTFALL_TOL {
                            pending = Some((l, s));
                            break;
                        }
                    }
                }
                let Some((l, s)) = pending else { break };
                self.shadow.apply(CtmMove::Elongate { leaf: l, amount: s })?;
            }
        }

        // Read the new miner counts off the shadow and charge relocations
        // that landed on pre-existing leaves.
        let mut new_miners = BTreeMap::new();
        let mut step_cost = 0.0;
        let mut relocations = Vec::new();
        if !self.finished {
            for (&tm_leaf, &sh_leaf) in &self.tm_to_shadow {
                let cnt = self.shadow.config.get(sh_leaf);
                if cnt == 0 {
                    return Err(Error::InvariantViolation(format!(
                        "active leaf {tm_leaf} lost its miner"
                    )));
                }
                new_miners.insert(tm_leaf, cnt);
            }
            let total: u64 = new_miners.values().sum();
            if total != self.k {
                return Err(Error::InvariantViolation(format!(
                    "miner count drifted: {total} != {}",
                    self.k
                )));
            }
            for (&tm_leaf, &cnt) in &new_miners {
                if tm_children.contains(&tm_leaf) {
                    continue; // arrivals on fresh children are free
                }
                let prev = before.get(&tm_leaf).copied().unwrap_or(0);
                if cnt < prev {
                    return Err(Error::InvariantViolation(format!(
                        "pre-existing leaf {tm_leaf} lost miners ({prev} -> {cnt})"
                    )));
                }
                if cnt > prev {
                    let d = self.tree.distance(chosen, tm_leaf)?;
                    step_cost += (cnt - prev) as f64 * d;
                    relocations.push((tm_leaf, cnt - prev));
                }
            }
        }
        self.miners = new_miners;
        self.cost += step_cost;
        self.steps += 1;

        if self.check() {
            self.assert_mirror_properties()?;
        }

        Ok(TmStepReport {
            chosen,
            children: tm_children,
            relocations,
            step_cost,
            shadow_cost_delta: self.shadow.cost - shadow_cost_before,
        })
    }

    /// Step-boundary properties of the discrete/shadow correspondence:
    /// the active leaves are in bijection with shadow leaves, miner counts
    /// match the shadow placement, shadow edges never exceed their discrete
    /// depth, any lag is under one unit and confined to single-robot leaves,
    /// and the discrete cost never exceeds the shadow cost.
    pub fn assert_mirror_properties(&self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        let shadow_leaves = self.shadow.tree.leaves();
        if self.active.len() != shadow_leaves.len()
            || self.active.len() != self.tm_to_shadow.len()
        {
            return Err(Error::InvariantViolation(format!(
                "active/shadow leaf mismatch: {} active, {} shadow",
                self.active.len(),
                shadow_leaves.len()
            )));
        }
        for &sh in &shadow_leaves {
            let tm = self
                .shadow_to_tm
                .get(&sh)
                .copied()
                .ok_or_else(|| Error::InvariantViolation(format!("unmapped shadow leaf {sh}")))?;
            let cnt = self.shadow.config.get(sh);
            if self.miners.get(&tm).copied().unwrap_or(0) != cnt {
                return Err(Error::InvariantViolation(format!(
                    "miner count for leaf {tm} disagrees with shadow"
                )));
            }
            let s = self.shortfall(sh)?;
            if s < -1e-6 {
                return Err(Error::InvariantViolation(format!(
                    "shadow leaf {sh} overshoots its discrete depth by {}",
                    -s
                )));
            }
            if s >= 1.0 {
                return Err(Error::InvariantViolation(format!(
                    "shadow leaf {sh} lags a full unit behind ({s})"
                )));
            }
            if cnt >= 2 && s > 1e-6 {
                return Err(Error::InvariantViolation(format!(
                    "shadow leaf {sh} holds {cnt} robots but still lags by {s}"
                )));
            }
        }
        if self.cost > self.shadow.cost + 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "discrete cost {} exceeds shadow cost {}",
                self.cost, self.shadow.cost
            )));
        }
        Ok(())
    }
}

/// A strategy choosing which active leaf to mine next.
pub trait TmAdversary {
    fn next_leaf(&mut self, state: &TmState) -> Result<Option<NodeId>>;
}

/// Mines a uniformly random active leaf.
pub struct RandomTmAdversary {
    rng: ChaCha8Rng,
}

impl RandomTmAdversary {
    pub fn new(seed: u64) -> Self {
        RandomTmAdversary {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TmAdversary for RandomTmAdversary {
    fn next_leaf(&mut self, state: &TmState) -> Result<Option<NodeId>> {
        let active: Vec<NodeId> = state.active.iter().copied().collect();
        Ok(active.choose(&mut self.rng).copied())
    }
}

/// Always mines the deepest active leaf (smallest id on ties), pushing the
/// frontier down as fast as possible.
pub struct DeepestTmAdversary;

impl TmAdversary for DeepestTmAdversary {
    fn next_leaf(&mut self, state: &TmState) -> Result<Option<NodeId>> {
        let mut best: Option<(usize, NodeId)> = None;
        for &l in &state.active {
            let d = state.tree.depth_hops(l)?;
            if best.map_or(true, |(bd, _)| d > bd) {
                best = Some((d, l));
            }
        }
        Ok(best.map(|(_, l)| l))
    }
}

/// Replays a fixed list of leaves to mine.
pub struct ScriptTmAdversary {
    leaves: std::collections::VecDeque<NodeId>,
}

impl ScriptTmAdversary {
    pub fn new(leaves: Vec<NodeId>) -> Self {
        ScriptTmAdversary {
            leaves: leaves.into(),
        }
    }

    /// Parses `T <leaf>` lines; blanks and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut leaves = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("T") => {}
                other => {
                    return Err(Error::Script(format!(
                        "line {}: expected `T <leaf>`, got {other:?}",
                        lineno + 1
                    )))
                }
            }
            let leaf: NodeId = parts
                .next()
                .ok_or_else(|| Error::Script(format!("line {}: missing leaf", lineno + 1)))?
                .parse()
                .map_err(|e| Error::Script(format!("line {}: bad leaf: {e}", lineno + 1)))?;
            if parts.next().is_some() {
                return Err(Error::Script(format!("line {}: trailing tokens", lineno + 1)));
            }
            leaves.push(leaf);
        }
        Ok(Self::new(leaves))
    }
}

impl TmAdversary for ScriptTmAdversary {
    fn next_leaf(&mut self, _state: &TmState) -> Result<Option<NodeId>> {
        Ok(self.leaves.pop_front())
    }
}

/// Summary of a discrete mining run.
#[derive(Debug, Clone, Serialize)]
pub struct TmRunReport {
    pub steps: usize,
    pub tm_cost: f64,
    pub shadow_cost: f64,
    pub min_active_depth: Option<usize>,
    pub max_active_depth: Option<usize>,
    pub finished: bool,
}

/// Runs `adversary` for at most `budget` mining steps.
pub fn run_tm_adversary(
    state: &mut TmState,
    adversary: &mut dyn TmAdversary,
    budget: usize,
) -> Result<TmRunReport> {
    for _ in 0..budget {
        if state.finished {
            break;
        }
        match adversary.next_leaf(state)? {
            None => break,
            Some(leaf) => {
                state.step(leaf)?;
            }
        }
    }
    Ok(TmRunReport {
        steps: state.steps,
        tm_cost: state.cost,
        shadow_cost: state.shadow.cost,
        min_active_depth: state.min_active_depth(),
        max_active_depth: state.max_active_depth(),
        finished: state.finished,
    })
}
