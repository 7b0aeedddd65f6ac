//! Asynchronous collective exploration of an unknown unit-edge tree.
//!
//! `k` robots start at the root. A scheduler grants one robot at a time; the
//! granted robot traverses an unexplored child edge if one hangs at its
//! position, and otherwise walks one edge toward its current target. Targets
//! are the anchors of an internal discrete mining game ([`TmState`]): each
//! active mining leaf is pinned to a discovered, not-yet-exhausted node of
//! the real tree, and carries as many miners as there are robots targeting
//! that node. When a robot stands on its own target with nothing left to
//! open, the corresponding mining leaf is mined and the robots targeting it
//! are redistributed exactly as the mining game redistributes its miners.
//!
//! Because the anchor map embeds mining-game paths isometrically into the
//! real tree, the relocation charges of the mining game account one-for-one
//! for the retargeting distances, which keeps the total number of moves
//! within `2n + gamma * phi(k) * depth`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::cost_ceiling;
use crate::potential::PotentialParams;
use crate::tm::TmState;
use crate::tree::{NodeId, RootedTree, LEN_TOL};

/// Tolerance on the exact accounting identities maintained by the engine
/// (ledger vs. mining cost, anchor-path isometry).
pub const LEDGER_TOL: f64 = 1e-9;

/// Order in which robots receive their one-edge grants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Cyclic grants `0, 1, ..., k-1, 0, 1, ...`.
    RoundRobin,
    /// Independent uniform robot choice per grant, from a seeded generator.
    Random,
    /// Robot 0 receives `k - 1` of every `k` grants; the remaining grant
    /// cycles through the other robots.
    Lopsided,
}

impl Scheduler {
    /// Parses a scheduler name as accepted on the command line.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "roundrobin" => Ok(Scheduler::RoundRobin),
            "random" => Ok(Scheduler::Random),
            "lopsided" => Ok(Scheduler::Lopsided),
            other => Err(Error::Parse(format!(
                "unknown scheduler {other:?} (expected roundrobin, random or lopsided)"
            ))),
        }
    }

    /// Canonical name, matching what [`Scheduler::parse`] accepts.
    pub fn name(self) -> &'static str {
        match self {
            Scheduler::RoundRobin => "roundrobin",
            Scheduler::Random => "random",
            Scheduler::Lopsided => "lopsided",
        }
    }
}

/// Stateful grant dispenser for a fixed robot count.
struct GrantSource {
    scheduler: Scheduler,
    k: usize,
    counter: u64,
    rng: ChaCha8Rng,
}

impl GrantSource {
    fn new(scheduler: Scheduler, k: usize, seed: u64) -> Self {
        GrantSource {
            scheduler,
            k,
            counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> usize {
        let k = self.k as u64;
        let pick = match self.scheduler {
            Scheduler::RoundRobin => (self.counter % k) as usize,
            Scheduler::Random => self.rng.gen_range(0..self.k),
            Scheduler::Lopsided => {
                let phase = self.counter % k;
                if self.k == 1 || phase < k - 1 {
                    0
                } else {
                    let cycle = (self.counter / k) as usize;
                    1 + cycle % (self.k - 1)
                }
            }
        };
        self.counter += 1;
        pick
    }
}

/// Summary of a completed exploration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActeReport {
    /// Number of nodes in the explored tree.
    pub n: usize,
    /// Maximum root distance (in edges) over all nodes.
    pub depth: usize,
    /// Number of robots.
    pub k: usize,
    /// Total one-edge grants issued (each grant counts as one move, even
    /// when the robot ends the grant where it started).
    pub moves: u64,
    /// Guaranteed ceiling `2n + gamma * phi(k) * depth` on `moves`.
    pub move_bound: f64,
    /// Total cost paid by the internal mining game across all phases.
    pub mining_cost: f64,
    /// Retargeting distance charged to the robots; equals `mining_cost` up
    /// to [`LEDGER_TOL`].
    pub ledger_cost: f64,
    /// Number of mining steps fired.
    pub fires: u64,
    /// Times the mining game was restarted on a surviving unexplored pocket.
    pub rebases: u64,
}

impl ActeReport {
    /// Whether the run stayed within its move ceiling.
    pub fn within_bound(&self) -> bool {
        (self.moves as f64) <= self.move_bound
    }
}

/// Full state of an exploration in progress.
///
/// The structure owns a copy of the instance ("hidden") tree, but the
/// decision logic only ever reads the parts a robot has legitimately seen:
/// child edges are enumerated only at visited nodes, and anchors are chosen
/// among children of mined nodes, all of which have been visited.
pub struct ExplorationState {
    hidden: RootedTree,
    discovered: BTreeSet<NodeId>,
    explored_edges: BTreeSet<NodeId>,
    mined: BTreeSet<NodeId>,
    finished_nodes: BTreeSet<NodeId>,
    /// Per-node count of children already opened; children are opened in
    /// ascending id order, so this doubles as the next-fresh-child index.
    fresh_cursor: BTreeMap<NodeId, usize>,
    /// Children whose subtrees still need work, per node; drained as the
    /// subtrees finish so stale branches are never rescanned.
    open_children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Discovered-but-unmined nodes keyed by (root distance, id); the next
    /// restart anchor is the minimum.
    open_discovered: BTreeSet<(usize, NodeId)>,
    /// Root distance of every instance node, computed once.
    depths: BTreeMap<NodeId, usize>,
    /// Maximum root distance over the instance, computed once.
    depth_max: usize,
    robots: Vec<NodeId>,
    targets: Vec<NodeId>,
    moves: u64,
    tm: TmState,
    /// Active mining leaf -> real node it is pinned to.
    anchor: BTreeMap<NodeId, NodeId>,
    /// Real node -> active mining leaf pinned to it.
    anchor_rev: BTreeMap<NodeId, NodeId>,
    ledger_cost: f64,
    /// Mining cost of completed phases plus restart charges.
    tm_cost_closed: f64,
    fires: u64,
    rebases: u64,
    params: PotentialParams,
    check: bool,
}

impl ExplorationState {
    /// Places `k` robots at the root of `hidden`, all targeting the root.
    ///
    /// Every edge of `hidden` must have unit length.
    pub fn new(hidden: &RootedTree, k: usize, params: PotentialParams, check: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams("need at least one robot".into()));
        }
        let root = hidden.root();
        for u in hidden.node_ids() {
            if u != root && (hidden.edge_len(u)? - 1.0).abs() > LEN_TOL {
                return Err(Error::InvalidEdgeLength {
                    node: u,
                    len: hidden.edge_len(u)?,
                });
            }
        }
        let tm = TmState::new(k as u64, params, check)?;
        let tm_root = *tm
            .active
            .iter()
            .next()
            .expect("fresh mining game has one active leaf");

        let mut depths = BTreeMap::from([(root, 0usize)]);
        let mut open_children = BTreeMap::new();
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            let du = depths[&u];
            let cs = hidden.children(u)?;
            if !cs.is_empty() {
                open_children.insert(u, cs.iter().copied().collect::<BTreeSet<_>>());
            }
            for &c in cs {
                depths.insert(c, du + 1);
                stack.push(c);
            }
        }
        let depth_max = depths.values().copied().max().unwrap_or(0);

        Ok(ExplorationState {
            hidden: hidden.clone(),
            discovered: BTreeSet::from([root]),
            explored_edges: BTreeSet::new(),
            mined: BTreeSet::new(),
            finished_nodes: BTreeSet::new(),
            fresh_cursor: BTreeMap::new(),
            open_children,
            open_discovered: BTreeSet::from([(0, root)]),
            depths,
            depth_max,
            robots: vec![root; k],
            targets: vec![root; k],
            moves: 0,
            tm,
            anchor: BTreeMap::from([(tm_root, root)]),
            anchor_rev: BTreeMap::from([(root, tm_root)]),
            ledger_cost: 0.0,
            tm_cost_closed: 0.0,
            fires: 0,
            rebases: 0,
            params,
            check,
        })
    }

    /// Number of robots.
    pub fn k(&self) -> usize {
        self.robots.len()
    }

    /// Number of nodes in the instance tree.
    pub fn n(&self) -> usize {
        self.hidden.node_count()
    }

    /// Maximum root distance (in edges) over all instance nodes.
    pub fn depth_hops(&self) -> usize {
        self.depth_max
    }

    /// All nodes mined, nothing left to do.
    pub fn is_finished(&self) -> bool {
        self.mined.len() == self.hidden.node_count()
    }

    /// Grants issued so far.
    pub fn moves(&self) -> u64 {
        self.moves
    }

    /// Current position of robot `r`.
    pub fn robot_position(&self, r: usize) -> NodeId {
        self.robots[r]
    }

    /// Current target of robot `r`.
    pub fn robot_target(&self, r: usize) -> NodeId {
        self.targets[r]
    }

    /// Root distance (in edges) of a node of the instance tree.
    pub fn depth_of(&self, node: NodeId) -> Result<usize> {
        self.hidden.depth_hops(node)
    }

    /// Total mining cost paid so far (all phases).
    pub fn mining_cost(&self) -> f64 {
        self.tm_cost_closed + self.tm.cost
    }

    /// Total retargeting distance charged so far.
    pub fn ledger_cost(&self) -> f64 {
        self.ledger_cost
    }

    /// Count of edges already traversed at least once.
    pub fn edges_explored(&self) -> usize {
        self.explored_edges.len()
    }

    /// Move ceiling `2n + gamma * phi(k) * depth` for this instance.
    pub fn move_bound(&self) -> f64 {
        2.0 * self.n() as f64
            + cost_ceiling(&self.params, self.k() as u64, self.depth_hops() as f64)
    }

    /// Summary of the run so far.
    pub fn report(&self) -> ActeReport {
        ActeReport {
            n: self.n(),
            depth: self.depth_hops(),
            k: self.k(),
            moves: self.moves,
            move_bound: self.move_bound(),
            mining_cost: self.mining_cost(),
            ledger_cost: self.ledger_cost,
            fires: self.fires,
            rebases: self.rebases,
        }
    }

    /// Executes one grant for robot `r`: open a fresh edge if one hangs at
    /// the robot's position, otherwise mine the position and walk one edge
    /// toward the (possibly just reassigned) target. Exactly one move is
    /// counted per call.
    pub fn step(&mut self, r: usize) -> Result<()> {
        if r >= self.robots.len() {
            return Err(Error::InvalidParams(format!("no robot {r}")));
        }
        if self.is_finished() {
            return Err(Error::IllegalMove("exploration is already finished".into()));
        }
        let pos = self.robots[r];

        // Fresh edge first: descend into the lowest-id unexplored child.
        // Edges are only ever opened here, in ascending child order, so the
        // cursor always points at the next unexplored child.
        let cursor = self.fresh_cursor.get(&pos).copied().unwrap_or(0);
        let fresh = self.hidden.children(pos)?.get(cursor).copied();
        if let Some(child) = fresh {
            self.fresh_cursor.insert(pos, cursor + 1);
            self.explored_edges.insert(child);
            self.discovered.insert(child);
            self.open_discovered.insert((self.depths[&child], child));
            self.robots[r] = child;
            self.moves += 1;
            return Ok(());
        }

        // Nothing to open here: the position is exhausted, hence mined.
        if self.mined.insert(pos) {
            self.open_discovered.remove(&(self.depths[&pos], pos));
            self.propagate_finished(pos)?;
        }

        // Standing on one's own target fires the mining game there.
        if self.targets[r] == pos {
            self.fire(pos)?;
        }

        // Walk one edge toward the target; a grant with no displacement
        // (terminal probe) still counts.
        if !self.is_finished() {
            let tgt = self.targets[r];
            if tgt != pos {
                self.robots[r] = step_toward(&self.hidden, pos, tgt)?;
            }
        }
        self.moves += 1;
        Ok(())
    }

    /// Marks `v` finished if it is mined with all children finished, then
    /// propagates the property up the ancestor chain.
    fn propagate_finished(&mut self, v: NodeId) -> Result<()> {
        let mut cur = Some(v);
        while let Some(u) = cur {
            let done = self.mined.contains(&u)
                && self.open_children.get(&u).is_none_or(BTreeSet::is_empty);
            if !done || !self.finished_nodes.insert(u) {
                break;
            }
            let parent = self.hidden.parent(u)?;
            if let Some(p) = parent {
                if let Some(s) = self.open_children.get_mut(&p) {
                    s.remove(&u);
                }
            }
            cur = parent;
        }
        Ok(())
    }

    /// Fires the mining step pinned at `v` and redistributes the robots
    /// targeting `v` exactly as the mining game redistributes its miners.
    fn fire(&mut self, v: NodeId) -> Result<()> {
        let tm_leaf = *self.anchor_rev.get(&v).ok_or_else(|| {
            Error::InvariantViolation(format!("target {v} has no active mining leaf"))
        })?;
        let movers: Vec<usize> = (0..self.k()).filter(|&i| self.targets[i] == v).collect();
        let x = movers.len() as u64;
        if self.tm.miners.get(&tm_leaf) != Some(&x) {
            return Err(Error::InvariantViolation(format!(
                "mining leaf {tm_leaf} holds {:?} miners but {x} robots target node {v}",
                self.tm.miners.get(&tm_leaf)
            )));
        }

        // Children of v that still need work; v is mined, so all of them
        // have been visited. At most x - 1 of them can be staffed now.
        let open_children: Vec<NodeId> = self
            .open_children
            .get(&v)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let c = (x.saturating_sub(1)).min(open_children.len() as u64);

        let rep = self.tm.step_with_children(tm_leaf, c)?;
        self.fires += 1;
        self.anchor.remove(&tm_leaf);
        self.anchor_rev.remove(&v);

        // Pin the fresh mining leaves onto the first `c` open children.
        for (tm_child, real_child) in rep.children.iter().zip(open_children.iter()) {
            if self.anchor.insert(*tm_child, *real_child).is_some()
                || self.anchor_rev.insert(*real_child, *tm_child).is_some()
            {
                return Err(Error::InvariantViolation(format!(
                    "node {real_child} pinned twice by the mining game"
                )));
            }
        }

        // Relocations: charge the real retargeting distance and check that
        // the anchor map preserved it exactly.
        for &(b, count) in &rep.relocations {
            let real_b = *self.anchor.get(&b).ok_or_else(|| {
                Error::InvariantViolation(format!("relocation to unpinned mining leaf {b}"))
            })?;
            let d_tm = self.tm.tree.distance(tm_leaf, b)?;
            let d_real = self.hidden.distance(v, real_b)?;
            if (d_tm - d_real).abs() > LEDGER_TOL {
                return Err(Error::InvariantViolation(format!(
                    "anchor map distorted a path: mining distance {d_tm}, real distance {d_real}"
                )));
            }
            self.ledger_cost += count as f64 * d_real;
        }

        if self.tm.finished {
            if !self.is_finished() {
                self.rebase(v)?;
            }
            // Terminal fire: nothing left to target.
        } else {
            // One slot per miner now sitting on a fresh child or newly
            // arrived at a pre-existing leaf; exactly x slots in total.
            let mut slots: Vec<NodeId> = Vec::with_capacity(x as usize);
            for tm_child in &rep.children {
                let m = self.tm.miners[tm_child];
                slots.extend(std::iter::repeat(self.anchor[tm_child]).take(m as usize));
            }
            for &(b, count) in &rep.relocations {
                slots.extend(std::iter::repeat(self.anchor[&b]).take(count as usize));
            }
            if slots.len() != movers.len() {
                return Err(Error::InvariantViolation(format!(
                    "mining step freed {} miners but produced {} slots",
                    movers.len(),
                    slots.len()
                )));
            }
            self.assign_nearest(&movers, slots)?;
        }

        // Running identity: everything the mining game has charged has been
        // charged to the retargeting ledger too.
        let total = self.tm_cost_closed + self.tm.cost;
        if (self.ledger_cost - total).abs() > LEDGER_TOL {
            return Err(Error::InvariantViolation(format!(
                "ledger {:.12} drifted from mining cost {total:.12}",
                self.ledger_cost
            )));
        }
        Ok(())
    }

    /// Greedy nearest matching of movers to target slots; ties broken by
    /// robot id, then target id.
    fn assign_nearest(&mut self, movers: &[usize], mut slots: Vec<NodeId>) -> Result<()> {
        let mut unmatched: Vec<usize> = movers.to_vec();
        while !unmatched.is_empty() {
            let mut best: Option<(f64, usize, NodeId, usize, usize)> = None;
            for (ui, &i) in unmatched.iter().enumerate() {
                for (si, &s) in slots.iter().enumerate() {
                    let d = self.hidden.distance(self.robots[i], s)?;
                    let better = match best {
                        None => true,
                        Some((bd, bi, bs, _, _)) => (d, i, s) < (bd, bi, bs),
                    };
                    if better {
                        best = Some((d, i, s, ui, si));
                    }
                }
            }
            let (_, i, s, ui, si) = best.expect("both lists are non-empty");
            self.targets[i] = s;
            unmatched.swap_remove(ui);
            slots.swap_remove(si);
        }
        Ok(())
    }

    /// Restarts the mining game on the shallowest node still awaiting work
    /// and routes every robot there. The restart is charged as if all `k`
    /// miners relocated from the last mined node.
    fn rebase(&mut self, from: NodeId) -> Result<()> {
        self.rebases += 1;
        self.tm_cost_closed += self.tm.cost;
        let u = self
            .open_discovered
            .iter()
            .next()
            .map(|&(_, w)| w)
            .ok_or_else(|| {
                Error::InvariantViolation(
                    "unfinished exploration without a discovered open node".into(),
                )
            })?;
        let charge = self.k() as f64 * self.hidden.distance(from, u)?;
        self.ledger_cost += charge;
        self.tm_cost_closed += charge;

        self.tm = TmState::new(self.k() as u64, self.params, self.check)?;
        let tm_root = *self
            .tm
            .active
            .iter()
            .next()
            .expect("fresh mining game has one active leaf");
        self.anchor.clear();
        self.anchor_rev.clear();
        self.anchor.insert(tm_root, u);
        self.anchor_rev.insert(u, tm_root);
        for t in self.targets.iter_mut() {
            *t = u;
        }
        Ok(())
    }

    /// Final consistency checks, run once exploration has finished.
    fn verify_complete(&self) -> Result<()> {
        if !self.is_finished() {
            return Err(Error::InvariantViolation("exploration not finished".into()));
        }
        if self.explored_edges.len() != self.n() - 1 {
            return Err(Error::InvariantViolation(format!(
                "{} of {} edges explored at termination",
                self.explored_edges.len(),
                self.n() - 1
            )));
        }
        let total = self.tm_cost_closed + self.tm.cost;
        if (self.ledger_cost - total).abs() > LEDGER_TOL {
            return Err(Error::InvariantViolation(format!(
                "ledger {:.12} differs from mining cost {total:.12}",
                self.ledger_cost
            )));
        }
        Ok(())
    }
}

/// Next node on the unique path from `pos` to `tgt` (`tgt != pos`).
fn step_toward(tree: &RootedTree, pos: NodeId, tgt: NodeId) -> Result<NodeId> {
    let meet = tree.lca(pos, tgt)?;
    if pos != meet {
        return Ok(tree
            .parent(pos)?
            .expect("node above the meeting point has a parent"));
    }
    let path = tree.path_nodes_to_ancestor(tgt, pos)?;
    Ok(*path.last().expect("tgt differs from pos"))
}

/// Drives `state` to completion under the given scheduler and returns the
/// final report. Fails if the run exceeds twice its move ceiling.
pub fn run_to_completion(
    state: &mut ExplorationState,
    scheduler: Scheduler,
    seed: u64,
) -> Result<ActeReport> {
    let mut grants = GrantSource::new(scheduler, state.k(), seed);
    let cap = (2.0 * state.move_bound() + 16.0) as u64;
    while !state.is_finished() {
        if state.moves() > cap {
            return Err(Error::InvariantViolation(format!(
                "exploration exceeded its move cap {cap}"
            )));
        }
        let r = grants.next();
        state.step(r)?;
    }
    state.verify_complete()?;
    Ok(state.report())
}

/// Explores `hidden` with `k` robots and default potential parameters.
pub fn run_acte(
    hidden: &RootedTree,
    k: usize,
    scheduler: Scheduler,
    seed: u64,
    check: bool,
) -> Result<ActeReport> {
    let params = PotentialParams::defaults_for_k(k as u64);
    let mut state = ExplorationState::new(hidden, k, params, check)?;
    run_to_completion(&mut state, scheduler, seed)
}
