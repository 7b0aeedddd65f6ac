//! Layered tree traversal driven by collective exploration.
//!
//! A searcher must travel from the source (layer 0) to a target in the last
//! layer of a tree revealed layer by layer, paying the length of every edge
//! it crosses. Edge lengths are 0 or 1; longer integer lengths are reduced
//! to this case by subdividing edges through inserted layers.
//!
//! The fractional strategy contracts all 0-length edges, runs the
//! asynchronous exploration engine on the contracted tree with a
//! layer-synchronized grant policy (robots that already stand on a
//! representative of the next layer are frozen until the whole crew
//! arrives), and reads off one probability distribution per layer: the
//! empirical distribution of the `k` robots. Its cost — the sum of optimal
//! transport distances between consecutive distributions — is at most
//! `moves / k`, which keeps it within `(2L + gamma * phi(k) * D) / k + 1`.
//!
//! The rounded strategy samples a single searcher trajectory from per-layer
//! transport couplings; its expectation equals the fractional cost.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acte::ExplorationState;
use crate::error::{Error, Result};
use crate::game::cost_ceiling;
use crate::potential::PotentialParams;
use crate::tree::{ot_cost_nodes, ot_plan_nodes, NodeId, RootedTree};

/// Tolerance on mass and accounting identities in the traversal pipeline.
pub const MASS_TOL: f64 = 1e-9;

/// A tree revealed layer by layer: layer 0 holds the source; every node of
/// layer `i + 1` has exactly one parent in layer `i`, over an edge of
/// length 0 or 1; the target lives in the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTree {
    layers: Vec<Vec<NodeId>>,
    /// child -> (parent, edge length).
    parents: BTreeMap<NodeId, (NodeId, u8)>,
    layer_of: BTreeMap<NodeId, usize>,
    target: NodeId,
}

impl LayeredTree {
    /// Builds and validates a layered tree from its layer lists, parent
    /// relation and target.
    pub fn new(
        mut layers: Vec<Vec<NodeId>>,
        parents: BTreeMap<NodeId, (NodeId, u8)>,
        target: NodeId,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parse("a layered tree needs at least one layer".into()));
        }
        if layers[0].len() != 1 {
            return Err(Error::Parse(format!(
                "layer 0 must hold exactly the source, found {} nodes",
                layers[0].len()
            )));
        }
        let mut layer_of = BTreeMap::new();
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.sort_unstable();
            if layer.is_empty() {
                return Err(Error::Parse(format!("layer {i} is empty")));
            }
            for &u in layer.iter() {
                if layer_of.insert(u, i).is_some() {
                    return Err(Error::DuplicateNode(u));
                }
            }
        }
        for (&c, &(p, len)) in &parents {
            let lc = *layer_of
                .get(&c)
                .ok_or(Error::UnknownNode(c))?;
            let lp = *layer_of.get(&p).ok_or(Error::UnknownNode(p))?;
            if lc != lp + 1 {
                return Err(Error::Parse(format!(
                    "edge {p} -> {c} must connect consecutive layers, found {lp} -> {lc}"
                )));
            }
            if len > 1 {
                return Err(Error::Parse(format!(
                    "edge {p} -> {c} has length {len}, expected 0 or 1"
                )));
            }
        }
        for (&u, &l) in &layer_of {
            if l > 0 && !parents.contains_key(&u) {
                return Err(Error::Parse(format!("node {u} in layer {l} has no parent")));
            }
        }
        match layer_of.get(&target) {
            Some(&l) if l == layers.len() - 1 => {}
            Some(&l) => {
                return Err(Error::Parse(format!(
                    "target {target} sits in layer {l}, not the last layer {}",
                    layers.len() - 1
                )))
            }
            None => return Err(Error::UnknownNode(target)),
        }
        Ok(LayeredTree {
            layers,
            parents,
            layer_of,
            target,
        })
    }

    /// Builds a layered tree whose edges carry arbitrary nonnegative
    /// integer lengths by cutting every edge into segments of length 0 and
    /// 1, inserting intermediary layers where needed. Width, total length
    /// and source-target distance are unchanged; all nodes are renumbered.
    pub fn from_integer_lengths(
        layers: Vec<Vec<NodeId>>,
        parents: BTreeMap<NodeId, (NodeId, u64)>,
        target: NodeId,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parse("a layered tree needs at least one layer".into()));
        }
        let mut next_id: NodeId = 0;
        let mut fresh = || {
            let id = next_id;
            next_id += 1;
            id
        };
        // Old node -> new id, filled layer by layer.
        let mut renamed: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut out_layers: Vec<Vec<NodeId>> = Vec::new();
        let mut out_parents: BTreeMap<NodeId, (NodeId, u8)> = BTreeMap::new();

        let first: Vec<NodeId> = layers[0]
            .iter()
            .map(|&u| {
                let id = fresh();
                renamed.insert(u, id);
                id
            })
            .collect();
        out_layers.push(first);

        for i in 1..layers.len() {
            // Segment count for this transition: the longest edge, floor 1.
            let segments = layers[i]
                .iter()
                .map(|c| parents.get(c).map(|&(_, len)| len).unwrap_or(0))
                .max()
                .unwrap_or(0)
                .max(1);
            let mut chains: Vec<Vec<NodeId>> = Vec::new();
            for &c in &layers[i] {
                let &(p, len) = parents
                    .get(&c)
                    .ok_or_else(|| Error::Parse(format!("node {c} has no parent")))?;
                let p_new = *renamed.get(&p).ok_or(Error::UnknownNode(p))?;
                // `len` unit segments first, then padding zeros.
                let mut chain = Vec::with_capacity(segments as usize);
                let mut prev = p_new;
                for s in 0..segments {
                    let id = fresh();
                    out_parents.insert(id, (prev, u8::from(s < len)));
                    chain.push(id);
                    prev = id;
                }
                renamed.insert(c, prev);
                chains.push(chain);
            }
            for s in 0..segments as usize {
                out_layers.push(chains.iter().map(|ch| ch[s]).collect());
            }
        }
        let target_new = *renamed.get(&target).ok_or(Error::UnknownNode(target))?;
        LayeredTree::new(out_layers, out_parents, target_new)
    }

    /// The source node (sole occupant of layer 0).
    pub fn source(&self) -> NodeId {
        self.layers[0][0]
    }

    /// The target node, in the last layer.
    pub fn target(&self) -> NodeId {
        self.target
    }

    /// Layer lists, ascending node ids within each layer.
    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    /// Number of layers (the source layer counts).
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer index of a node.
    pub fn layer_of(&self, u: NodeId) -> Result<usize> {
        self.layer_of.get(&u).copied().ok_or(Error::UnknownNode(u))
    }

    /// Parent and edge length of a non-source node.
    pub fn parent_of(&self, u: NodeId) -> Option<(NodeId, u8)> {
        self.parents.get(&u).copied()
    }

    /// Maximum layer size.
    pub fn width(&self) -> usize {
        self.layers.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Total length `L`: the number of length-1 edges.
    pub fn total_length(&self) -> u64 {
        self.parents.values().map(|&(_, len)| len as u64).sum()
    }

    /// Source-target distance `D` along the unique tree path.
    pub fn source_target_distance(&self) -> u64 {
        let mut d = 0;
        let mut cur = self.target;
        while let Some(&(p, len)) = self.parents.get(&cur) {
            d += len as u64;
            cur = p;
        }
        d
    }

    /// Parses the textual format: `layers <N>`, one `layer <i> <ids...>`
    /// line per layer, `edge <parent> <child> <length>` lines, and a final
    /// `target <node>`. Lengths above 1 are accepted and subdivided
    /// (which renumbers all nodes). `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut n_layers: Option<usize> = None;
        let mut layers: Vec<Vec<NodeId>> = Vec::new();
        let mut parents: BTreeMap<NodeId, (NodeId, u64)> = BTreeMap::new();
        let mut target: Option<NodeId> = None;
        let bad = |line: &str, why: &str| Error::Parse(format!("{why}: {line:?}"));
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            match it.next() {
                Some("layers") => {
                    let n: usize = it
                        .next()
                        .ok_or_else(|| bad(line, "missing layer count"))?
                        .parse()
                        .map_err(|_| bad(line, "bad layer count"))?;
                    if n == 0 {
                        return Err(bad(line, "layer count must be positive"));
                    }
                    n_layers = Some(n);
                    layers = vec![Vec::new(); n];
                }
                Some("layer") => {
                    let n = n_layers.ok_or_else(|| bad(line, "layer before layers header"))?;
                    let i: usize = it
                        .next()
                        .ok_or_else(|| bad(line, "missing layer index"))?
                        .parse()
                        .map_err(|_| bad(line, "bad layer index"))?;
                    if i >= n {
                        return Err(bad(line, "layer index out of range"));
                    }
                    for tok in it {
                        let u: NodeId = tok.parse().map_err(|_| bad(line, "bad node id"))?;
                        layers[i].push(u);
                    }
                }
                Some("edge") => {
                    let p: NodeId = it
                        .next()
                        .ok_or_else(|| bad(line, "missing parent"))?
                        .parse()
                        .map_err(|_| bad(line, "bad parent id"))?;
                    let c: NodeId = it
                        .next()
                        .ok_or_else(|| bad(line, "missing child"))?
                        .parse()
                        .map_err(|_| bad(line, "bad child id"))?;
                    let len: u64 = it
                        .next()
                        .ok_or_else(|| bad(line, "missing length"))?
                        .parse()
                        .map_err(|_| bad(line, "bad length"))?;
                    if parents.insert(c, (p, len)).is_some() {
                        return Err(bad(line, "node given two parents"));
                    }
                }
                Some("target") => {
                    let u: NodeId = it
                        .next()
                        .ok_or_else(|| bad(line, "missing target id"))?
                        .parse()
                        .map_err(|_| bad(line, "bad target id"))?;
                    target = Some(u);
                }
                Some(other) => {
                    return Err(Error::Parse(format!("unknown directive {other:?}")));
                }
                None => unreachable!("empty lines are skipped"),
            }
        }
        let target = target.ok_or_else(|| Error::Parse("missing target line".into()))?;
        if layers.is_empty() {
            return Err(Error::Parse("missing layers header".into()));
        }
        if parents.values().all(|&(_, len)| len <= 1) {
            let binary = parents
                .into_iter()
                .map(|(c, (p, len))| (c, (p, len as u8)))
                .collect();
            LayeredTree::new(layers, binary, target)
        } else {
            LayeredTree::from_integer_lengths(layers, parents, target)
        }
    }

    /// Writes the textual format accepted by [`LayeredTree::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = format!("layers {}\n", self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            out.push_str(&format!("layer {i}"));
            for u in layer {
                out.push_str(&format!(" {u}"));
            }
            out.push('\n');
        }
        for (&c, &(p, len)) in &self.parents {
            out.push_str(&format!("edge {p} {c} {len}\n"));
        }
        out.push_str(&format!("target {}\n", self.target));
        out
    }
}

/// Result of contracting all 0-length edges of a layered tree.
pub struct Contraction {
    /// The contracted tree; every edge has length 1.
    pub tree: RootedTree,
    /// Layered node -> contracted node holding its 0-class.
    pub class_of: BTreeMap<NodeId, NodeId>,
    /// Per layer: the set of contracted nodes with a member in that layer.
    pub layer_classes: Vec<BTreeSet<NodeId>>,
    /// Contracted node -> (layer -> lowest-id member in that layer).
    pub members: BTreeMap<NodeId, BTreeMap<usize, NodeId>>,
}

/// Contracts every 0-length edge of `lt`, returning the unit-edge tree of
/// 0-classes together with the membership maps. Path lengths are preserved:
/// the distance between two layered nodes equals the distance between their
/// classes.
pub fn contract_zero_edges(lt: &LayeredTree) -> Result<Contraction> {
    let mut tree = RootedTree::new();
    let mut class_of: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut layer_classes: Vec<BTreeSet<NodeId>> = Vec::with_capacity(lt.num_layers());
    let mut members: BTreeMap<NodeId, BTreeMap<usize, NodeId>> = BTreeMap::new();
    for (i, layer) in lt.layers().iter().enumerate() {
        let mut present = BTreeSet::new();
        for &u in layer {
            let class = match lt.parent_of(u) {
                None => tree.root(),
                Some((p, 0)) => class_of[&p],
                Some((p, _)) => tree.add_child(class_of[&p], 1.0)?,
            };
            class_of.insert(u, class);
            present.insert(class);
            members
                .entry(class)
                .or_default()
                .entry(i)
                .or_insert(u); // layers are id-sorted, first hit is lowest
        }
        layer_classes.push(present);
    }
    Ok(Contraction {
        tree,
        class_of,
        layer_classes,
        members,
    })
}

/// Probability distribution of the searcher over one revealed layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalPosition {
    /// Layer index the distribution lives on.
    pub layer: usize,
    /// Node -> probability mass; sums to 1 within [`MASS_TOL`].
    pub distribution: BTreeMap<NodeId, f64>,
}

impl FractionalPosition {
    /// Total mass (should be 1).
    pub fn mass(&self) -> f64 {
        self.distribution.values().sum()
    }
}

/// Output of the fractional traversal strategy.
pub struct LttRun {
    /// Robots used by the underlying exploration.
    pub k: usize,
    /// Maximum layer size.
    pub width: usize,
    /// Source-target distance `D`.
    pub depth: u64,
    /// Total edge length `L`.
    pub length: u64,
    /// Sum of transport distances between consecutive distributions.
    pub expected_cost: f64,
    /// Ceiling `(2L + gamma * phi(k) * D) / k + 1` on `expected_cost`.
    pub cost_bound: f64,
    /// Total exploration grants spent; `expected_cost <= moves / k`.
    pub moves: u64,
    /// Transport distance paid entering each layer `i + 1`.
    pub per_layer_ot: Vec<f64>,
    /// One searcher distribution per layer.
    pub positions: Vec<FractionalPosition>,
    /// Robot counts per contracted class, one map per layer.
    pub class_counts: Vec<BTreeMap<NodeId, u64>>,
    /// The contraction the run was computed on.
    pub contraction: Contraction,
}

impl LttRun {
    /// Whether the fractional cost stayed within its ceiling.
    pub fn within_bound(&self) -> bool {
        self.expected_cost <= self.cost_bound
    }
}

/// Robot counts -> probability distribution on the given layer, placing
/// each class's mass on its lowest-id member there (the target itself for
/// the last layer's target class).
fn translate_counts(
    lt: &LayeredTree,
    con: &Contraction,
    counts: &BTreeMap<NodeId, u64>,
    layer: usize,
    k: usize,
) -> Result<FractionalPosition> {
    let mut distribution = BTreeMap::new();
    let target_class = con.class_of[&lt.target()];
    let last = lt.num_layers() - 1;
    for (&class, &cnt) in counts {
        if cnt == 0 {
            continue;
        }
        let member = if layer == last && class == target_class {
            lt.target()
        } else {
            *con.members
                .get(&class)
                .and_then(|m| m.get(&layer))
                .ok_or_else(|| {
                    Error::InvariantViolation(format!(
                        "class {class} holds robots but has no member in layer {layer}"
                    ))
                })?
        };
        *distribution.entry(member).or_insert(0.0) += cnt as f64 / k as f64;
    }
    let pos = FractionalPosition {
        layer,
        distribution,
    };
    if (pos.mass() - 1.0).abs() > MASS_TOL {
        return Err(Error::InvariantViolation(format!(
            "layer {layer} distribution carries mass {}",
            pos.mass()
        )));
    }
    Ok(pos)
}

/// Runs the fractional strategy: explore the contracted tree with `k`
/// robots, synchronizing on layers, and report the per-layer searcher
/// distributions and their transport cost.
pub fn fractional_traverse(lt: &LayeredTree, k: usize) -> Result<LttRun> {
    if k < 2 {
        return Err(Error::InvalidParams(
            "fractional traversal needs at least two robots".into(),
        ));
    }
    let con = contract_zero_edges(lt)?;
    let params = PotentialParams::defaults_for_k(k as u64);
    let mut state = ExplorationState::new(&con.tree, k, params, false)?;
    let cap = (2.0 * state.move_bound() + 16.0) as u64;
    let n_layers = lt.num_layers();
    let target_class = con.class_of[&lt.target()];

    let mut class_counts: Vec<BTreeMap<NodeId, u64>> = Vec::with_capacity(n_layers);
    let mut positions = Vec::with_capacity(n_layers);
    let mut per_layer_ot = Vec::with_capacity(n_layers.saturating_sub(1));
    let start_counts = BTreeMap::from([(con.class_of[&lt.source()], k as u64)]);
    positions.push(translate_counts(lt, &con, &start_counts, 0, k)?);
    class_counts.push(start_counts);

    let final_frontier = BTreeSet::from([target_class]);
    for i in 0..n_layers - 1 {
        let frontier: &BTreeSet<NodeId> = if i + 1 == n_layers - 1 {
            &final_frontier
        } else {
            &con.layer_classes[i + 1]
        };
        let window_start = state.moves();
        loop {
            let mut all_on = true;
            let mut granted = false;
            for r in 0..k {
                if frontier.contains(&state.robot_position(r)) {
                    continue;
                }
                all_on = false;
                if state.is_finished() {
                    return Err(Error::InvariantViolation(
                        "exploration finished before the crew reached the frontier".into(),
                    ));
                }
                state.step(r)?;
                granted = true;
                if state.moves() > cap {
                    return Err(Error::InvariantViolation(format!(
                        "layer synchronization exceeded the move cap {cap}"
                    )));
                }
            }
            if all_on {
                break;
            }
            if !granted {
                return Err(Error::InvariantViolation(
                    "no robot could be granted during layer synchronization".into(),
                ));
            }
        }
        let mut counts: BTreeMap<NodeId, u64> = BTreeMap::new();
        for r in 0..k {
            *counts.entry(state.robot_position(r)).or_insert(0) += 1;
        }
        let as_f64 = |m: &BTreeMap<NodeId, u64>| -> BTreeMap<NodeId, f64> {
            m.iter().map(|(&u, &w)| (u, w as f64)).collect()
        };
        let transported = ot_cost_nodes(
            &con.tree,
            &as_f64(class_counts.last().expect("seeded above")),
            &as_f64(&counts),
        )?;
        let window_moves = state.moves() - window_start;
        if transported > window_moves as f64 + MASS_TOL {
            return Err(Error::InvariantViolation(format!(
                "layer {} transported {transported} with only {window_moves} moves",
                i + 1
            )));
        }
        per_layer_ot.push(transported / k as f64);
        positions.push(translate_counts(lt, &con, &counts, i + 1, k)?);
        class_counts.push(counts);
    }

    let expected_cost: f64 = per_layer_ot.iter().sum();
    let moves = state.moves();
    let depth = lt.source_target_distance();
    let length = lt.total_length();
    let cost_bound =
        (2.0 * length as f64 + cost_ceiling(&params, k as u64, depth as f64)) / k as f64 + 1.0;
    if expected_cost > moves as f64 / k as f64 + MASS_TOL {
        return Err(Error::InvariantViolation(format!(
            "fractional cost {expected_cost} exceeds moves/k = {}",
            moves as f64 / k as f64
        )));
    }
    if expected_cost > cost_bound {
        return Err(Error::InvariantViolation(format!(
            "fractional cost {expected_cost} exceeds its ceiling {cost_bound}"
        )));
    }
    Ok(LttRun {
        k,
        width: lt.width(),
        depth,
        length,
        expected_cost,
        cost_bound,
        moves,
        per_layer_ot,
        positions,
        class_counts,
        contraction: con,
    })
}

/// Per-layer couplings drawn from a fractional run; samples deterministic
/// searcher trajectories whose expected cost equals the fractional cost.
pub struct RoundedSampler<'a> {
    lt: &'a LayeredTree,
    run: &'a LttRun,
    /// One map per transition: source class -> weighted choice list of
    /// (destination class, distance), one entry per unit of robot mass.
    phases: Vec<BTreeMap<NodeId, Vec<(NodeId, f64)>>>,
}

impl<'a> RoundedSampler<'a> {
    /// Builds the couplings from the run's per-layer robot counts.
    pub fn new(lt: &'a LayeredTree, run: &'a LttRun) -> Result<Self> {
        let tree = &run.contraction.tree;
        let mut phases = Vec::with_capacity(run.class_counts.len().saturating_sub(1));
        for (i, window) in run.class_counts.windows(2).enumerate() {
            let (from, to) = (&window[0], &window[1]);
            let plan = ot_plan_nodes(tree, from, to)?;
            let mut by_src: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
            let mut moved: BTreeMap<NodeId, u64> = BTreeMap::new();
            let mut plan_cost = 0.0;
            for &(s, d) in &plan {
                let dist = tree.distance(s, d)?;
                plan_cost += dist;
                by_src.entry(s).or_default().push((d, dist));
                *moved.entry(s).or_insert(0) += 1;
            }
            // Stay-pairs for the mass that does not move.
            for (&s, &cnt) in from {
                let stay = cnt
                    .checked_sub(moved.get(&s).copied().unwrap_or(0))
                    .ok_or_else(|| Error::MassMismatch {
                        expected: cnt as f64,
                        got: moved.get(&s).copied().unwrap_or(0) as f64,
                    })?;
                for _ in 0..stay {
                    by_src.entry(s).or_default().push((s, 0.0));
                }
            }
            // Conservation: the coupling must reproduce both marginals.
            let mut arrived: BTreeMap<NodeId, u64> = BTreeMap::new();
            for (&s, choices) in &by_src {
                if choices.len() as u64 != from.get(&s).copied().unwrap_or(0) {
                    return Err(Error::MassMismatch {
                        expected: from.get(&s).copied().unwrap_or(0) as f64,
                        got: choices.len() as f64,
                    });
                }
                for &(d, _) in choices {
                    *arrived.entry(d).or_insert(0) += 1;
                }
            }
            if &arrived != to {
                return Err(Error::MassMismatch {
                    expected: to.values().sum::<u64>() as f64,
                    got: arrived.values().sum::<u64>() as f64,
                });
            }
            let claimed = run.per_layer_ot[i] * run.k as f64;
            if (plan_cost - claimed).abs() > MASS_TOL {
                return Err(Error::InvariantViolation(format!(
                    "coupling for layer {} costs {plan_cost}, expected {claimed}",
                    i + 1
                )));
            }
            phases.push(by_src);
        }
        Ok(RoundedSampler { lt, run, phases })
    }

    /// Samples one trajectory; returns the visited node per layer and the
    /// total length traversed.
    pub fn sample_trajectory(&self, rng: &mut ChaCha8Rng) -> (Vec<NodeId>, f64) {
        let con = &self.run.contraction;
        let mut class = con.class_of[&self.lt.source()];
        let mut nodes = vec![self.lt.source()];
        let mut cost = 0.0;
        let last = self.lt.num_layers() - 1;
        let target_class = con.class_of[&self.lt.target()];
        for (i, by_src) in self.phases.iter().enumerate() {
            let choices = &by_src[&class];
            let (dst, dist) = choices[rng.gen_range(0..choices.len())];
            cost += dist;
            class = dst;
            let layer = i + 1;
            let node = if layer == last && class == target_class {
                self.lt.target()
            } else {
                con.members[&class][&layer]
            };
            nodes.push(node);
        }
        (nodes, cost)
    }

    /// Samples one trajectory and returns its cost.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.sample_trajectory(rng).1
    }
}

/// Seeded RNG for trajectory sampling, exposed so that callers do not need
/// their own dependency on the RNG crates.
pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One-shot rounded traversal: run the fractional strategy, then sample a
/// single searcher trajectory with the given seed and return its cost.
pub fn rounded_traverse(lt: &LayeredTree, k: usize, seed: u64) -> Result<f64> {
    let run = fractional_traverse(lt, k)?;
    let sampler = RoundedSampler::new(lt, &run)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

/// Random layered tree with unit edge lengths: layer 0 is the source,
/// layers `1..N` have uniform random sizes in `1..=w`, the final layer is
/// the lone target; every node picks a uniform parent in the layer above.
/// The source-target distance is exactly `N`.
pub fn gen_unit_layered(w: usize, n_transitions: usize, seed: u64) -> Result<LayeredTree> {
    if w == 0 || n_transitions == 0 {
        return Err(Error::InvalidParams(
            "width and transition count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id: NodeId = 0;
    let mut fresh = |n: usize| -> Vec<NodeId> {
        let ids = (next_id..next_id + n).collect();
        next_id += n;
        ids
    };
    let mut layers = vec![fresh(1)];
    let mut parents: BTreeMap<NodeId, (NodeId, u8)> = BTreeMap::new();
    for _ in 1..n_transitions {
        let size = rng.gen_range(1..=w);
        let layer = fresh(size);
        for &u in &layer {
            let prev = &layers[layers.len() - 1];
            parents.insert(u, (prev[rng.gen_range(0..prev.len())], 1));
        }
        layers.push(layer);
    }
    let tgt_layer = fresh(1);
    let prev = &layers[layers.len() - 1];
    parents.insert(tgt_layer[0], (prev[rng.gen_range(0..prev.len())], 1));
    let target = tgt_layer[0];
    layers.push(tgt_layer);
    LayeredTree::new(layers, parents, target)
}

/// Random layered tree from the average-case model: `N` layers of exactly
/// `w` nodes with uniform random parents, every edge length an independent
/// fair coin in {0, 1}, and the target attached to a uniform node of the
/// last full layer by a 0-length edge. The expected total length is
/// `w * N / 2` and the source-target distance is at most `N`.
pub fn gen_average_case(w: usize, n_layers: usize, seed: u64) -> Result<LayeredTree> {
    if w == 0 || n_layers == 0 {
        return Err(Error::InvalidParams(
            "width and layer count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id: NodeId = 0;
    let mut fresh = |n: usize| -> Vec<NodeId> {
        let ids = (next_id..next_id + n).collect();
        next_id += n;
        ids
    };
    let mut layers = vec![fresh(1)];
    let mut parents: BTreeMap<NodeId, (NodeId, u8)> = BTreeMap::new();
    for _ in 0..n_layers {
        let layer = fresh(w);
        for &u in &layer {
            let prev = &layers[layers.len() - 1];
            let p = prev[rng.gen_range(0..prev.len())];
            let len = u8::from(rng.gen_bool(0.5));
            parents.insert(u, (p, len));
        }
        layers.push(layer);
    }
    let tgt_layer = fresh(1);
    let prev = &layers[layers.len() - 1];
    parents.insert(tgt_layer[0], (prev[rng.gen_range(0..prev.len())], 0));
    let target = tgt_layer[0];
    layers.push(tgt_layer);
    LayeredTree::new(layers, parents, target)
}

/// Crew size calibrated to the instance width: `floor(sqrt(w))`, clamped
/// to the minimum of 2 the game requires.
pub fn tune_k(lt: &LayeredTree) -> usize {
    ((lt.width() as f64).sqrt().floor() as usize).max(2)
}

/// Cost of the naive strategy that ignores layers and sweeps the whole
/// revealed tree depth-first: every unit of length is walked once down and
/// once back up.
pub fn dfs_baseline(lt: &LayeredTree) -> u64 {
    2 * lt.total_length()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Source - {a, b} - target diamond with one 0-edge.
    fn diamond() -> LayeredTree {
        let layers = vec![vec![0], vec![1, 2], vec![3]];
        let parents = BTreeMap::from([(1, (0, 1)), (2, (0, 0)), (3, (1, 1))]);
        LayeredTree::new(layers, parents, 3).unwrap()
    }

    #[test]
    fn validation_rejects_malformed_instances() {
        // Two nodes in layer 0.
        assert!(LayeredTree::new(vec![vec![0, 1]], BTreeMap::new(), 0).is_err());
        // Duplicate id across layers.
        assert!(LayeredTree::new(
            vec![vec![0], vec![0]],
            BTreeMap::from([(0, (0, 1))]),
            0
        )
        .is_err());
        // Parent not in the layer above.
        assert!(LayeredTree::new(
            vec![vec![0], vec![1], vec![2]],
            BTreeMap::from([(1, (0, 1)), (2, (0, 1))]),
            2
        )
        .is_err());
        // Orphan node.
        assert!(LayeredTree::new(vec![vec![0], vec![1]], BTreeMap::new(), 1).is_err());
        // Length outside {0, 1}.
        assert!(LayeredTree::new(
            vec![vec![0], vec![1]],
            BTreeMap::from([(1, (0, 2))]),
            1
        )
        .is_err());
        // Target not in the last layer.
        assert!(LayeredTree::new(
            vec![vec![0], vec![1]],
            BTreeMap::from([(1, (0, 1))]),
            0
        )
        .is_err());
    }

    #[test]
    fn quantities_on_the_diamond() {
        let lt = diamond();
        assert_eq!(lt.source(), 0);
        assert_eq!(lt.target(), 3);
        assert_eq!(lt.width(), 2);
        assert_eq!(lt.total_length(), 2);
        assert_eq!(lt.source_target_distance(), 2);
        assert_eq!(lt.num_layers(), 3);
        assert_eq!(dfs_baseline(&lt), 4);
    }

    #[test]
    fn text_roundtrip_preserves_the_instance() {
        let lt = diamond();
        let text = lt.to_text();
        let back = LayeredTree::from_text(&text).unwrap();
        assert_eq!(lt, back);
        // Comments and blank lines are tolerated.
        let commented = format!("# instance\n\n{text}# done\n");
        assert_eq!(LayeredTree::from_text(&commented).unwrap(), lt);
    }

    #[test]
    fn text_parser_rejects_malformed_input() {
        assert!(LayeredTree::from_text("").is_err());
        assert!(LayeredTree::from_text("layers 0\ntarget 0\n").is_err());
        assert!(LayeredTree::from_text("layers 1\nlayer 0 0\n").is_err()); // no target
        assert!(LayeredTree::from_text("layers 1\nlayer 2 0\ntarget 0\n").is_err());
        assert!(LayeredTree::from_text("squares 1\n").is_err());
        assert!(
            LayeredTree::from_text("layers 2\nlayer 0 0\nlayer 1 1\nedge 0 1 1\nedge 0 1 0\ntarget 1\n")
                .is_err(),
            "double parent"
        );
    }

    #[test]
    fn contraction_is_identity_on_unit_lengths() {
        let lt = gen_unit_layered(4, 12, 7).unwrap();
        let con = contract_zero_edges(&lt).unwrap();
        let n_nodes: usize = lt.layers().iter().map(Vec::len).sum();
        assert_eq!(con.tree.node_count(), n_nodes);
        let classes: BTreeSet<NodeId> = con.class_of.values().copied().collect();
        assert_eq!(classes.len(), n_nodes);
    }

    #[test]
    fn zero_chains_collapse_to_one_class() {
        // r -1- a -0- b -0- c -1- d as a path of singletons.
        let layers = vec![vec![0], vec![1], vec![2], vec![3], vec![4]];
        let parents = BTreeMap::from([
            (1, (0, 1)),
            (2, (1, 0)),
            (3, (2, 0)),
            (4, (3, 1)),
        ]);
        let lt = LayeredTree::new(layers, parents, 4).unwrap();
        let con = contract_zero_edges(&lt).unwrap();
        assert_eq!(con.tree.node_count(), 3);
        assert_eq!(con.class_of[&1], con.class_of[&2]);
        assert_eq!(con.class_of[&2], con.class_of[&3]);
        // The middle class spans layers 1..=3.
        let spans: Vec<usize> = con.members[&con.class_of[&1]].keys().copied().collect();
        assert_eq!(spans, vec![1, 2, 3]);
        assert_eq!(
            con.tree
                .depth_len(con.class_of[&4])
                .unwrap(),
            2.0
        );
    }

    #[test]
    fn contraction_preserves_all_root_distances() {
        let lt = gen_average_case(4, 30, 123).unwrap();
        let con = contract_zero_edges(&lt).unwrap();
        for layer in lt.layers() {
            for &u in layer {
                // Distance from the source along the parent chain.
                let mut d = 0.0;
                let mut cur = u;
                while let Some((p, len)) = lt.parent_of(cur) {
                    d += len as f64;
                    cur = p;
                }
                assert_eq!(con.tree.depth_len(con.class_of[&u]).unwrap(), d);
            }
        }
        assert_eq!(
            con.tree.depth_len(con.class_of[&lt.target()]).unwrap(),
            lt.source_target_distance() as f64
        );
    }

    #[test]
    fn width_one_instance_costs_exactly_its_depth() {
        let lt = gen_unit_layered(1, 12, 3).unwrap();
        assert_eq!(lt.width(), 1);
        let run = fractional_traverse(&lt, 2).unwrap();
        assert_eq!(run.expected_cost, 12.0);
        assert_eq!(run.depth, 12);
        assert!(run.within_bound());
        // Point masses all the way down.
        for pos in &run.positions {
            assert_eq!(pos.distribution.len(), 1);
            assert_eq!(pos.mass(), 1.0);
        }
        // Rounding a deterministic instance is exact for every seed.
        for seed in 0..5 {
            assert_eq!(rounded_traverse(&lt, 2, seed).unwrap(), 12.0);
        }
    }

    #[test]
    fn diamond_traversal_stays_within_bound() {
        let run = fractional_traverse(&diamond(), 2).unwrap();
        assert!(run.within_bound());
        assert!(run.expected_cost <= run.moves as f64 / 2.0 + MASS_TOL);
        assert_eq!(run.positions.len(), 3);
        // Final distribution is a point mass on the target.
        let last = run.positions.last().unwrap();
        assert_eq!(last.distribution.len(), 1);
        assert!(last.distribution.contains_key(&3));
    }

    #[test]
    fn fractional_needs_at_least_two_robots() {
        assert!(matches!(
            fractional_traverse(&diamond(), 1),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn per_layer_transport_is_covered_by_window_moves() {
        for seed in 0..5 {
            let lt = gen_average_case(5, 25, seed).unwrap();
            let k = tune_k(&lt);
            let run = fractional_traverse(&lt, k).unwrap();
            let total: f64 = run.per_layer_ot.iter().sum();
            assert!((total - run.expected_cost).abs() < 1e-12);
            assert!(run.expected_cost <= run.moves as f64 / k as f64 + MASS_TOL);
            assert!(run.within_bound());
        }
    }

    #[test]
    fn monte_carlo_mean_matches_fractional_cost() {
        let lt = gen_average_case(4, 20, 11).unwrap();
        let k = 3;
        let run = fractional_traverse(&lt, k).unwrap();
        let sampler = RoundedSampler::new(&lt, &run).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let m = 4000;
        let samples: Vec<f64> = (0..m).map(|_| sampler.sample(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - run.expected_cost).abs() <= 3.0 * se + 1e-12,
            "mean {mean} vs expected {} (se {se})",
            run.expected_cost
        );
    }

    #[test]
    fn sampled_trajectories_visit_one_node_per_layer() {
        let lt = gen_average_case(4, 15, 2).unwrap();
        let run = fractional_traverse(&lt, 2).unwrap();
        let sampler = RoundedSampler::new(&lt, &run).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (nodes, cost) = sampler.sample_trajectory(&mut rng);
            assert_eq!(nodes.len(), lt.num_layers());
            assert_eq!(nodes[0], lt.source());
            assert_eq!(*nodes.last().unwrap(), lt.target());
            for (i, &u) in nodes.iter().enumerate() {
                assert_eq!(lt.layer_of(u).unwrap(), i);
            }
            assert!(cost >= 0.0);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let lt = gen_unit_layered(3, 10, 9).unwrap();
        let a = rounded_traverse(&lt, 2, 77).unwrap();
        let b = rounded_traverse(&lt, 2, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_generator_respects_its_contract() {
        for seed in 0..10 {
            let lt = gen_unit_layered(4, 20, seed).unwrap();
            assert!(lt.width() <= 4);
            assert_eq!(lt.source_target_distance(), 20);
            assert!(lt.total_length() <= 4 * 20);
            assert_eq!(lt.to_text(), gen_unit_layered(4, 20, seed).unwrap().to_text());
        }
        // Width 1 degenerates to a path.
        let path = gen_unit_layered(1, 6, 0).unwrap();
        assert!(path.layers().iter().all(|l| l.len() == 1));
    }

    #[test]
    fn average_case_generator_matches_its_moments() {
        let (w, n) = (4, 25);
        let mut lengths = Vec::new();
        for seed in 0..300 {
            let lt = gen_average_case(w, n, seed).unwrap();
            for layer in &lt.layers()[1..=n] {
                assert_eq!(layer.len(), w);
            }
            assert!(lt.source_target_distance() <= n as u64);
            lengths.push(lt.total_length() as f64);
        }
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let expect = (w * n) as f64 / 2.0;
        // L is Binomial(wN, 1/2): sigma of the mean over 300 seeds.
        let sigma = ((w * n) as f64 / 4.0 / lengths.len() as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * sigma,
            "mean {mean} vs {expect} (sigma {sigma})"
        );
    }

    #[test]
    fn crew_size_follows_the_width() {
        assert_eq!(tune_k(&gen_unit_layered(1, 5, 0).unwrap()), 2);
        assert_eq!(tune_k(&gen_average_case(16, 3, 0).unwrap()), 4);
        assert_eq!(tune_k(&gen_average_case(10, 3, 0).unwrap()), 3);
    }

    #[test]
    fn integer_lengths_are_subdivided() {
        // r -3- a -1- target alongside r -0- b -2- target sibling.
        let layers = vec![vec![0], vec![1, 2], vec![3]];
        let parents = BTreeMap::from([
            (1, (0, 3u64)),
            (2, (0, 0u64)),
            (3, (1, 2u64)),
        ]);
        let lt = LayeredTree::from_integer_lengths(layers, parents, 3).unwrap();
        // Quantities preserved.
        assert_eq!(lt.total_length(), 5);
        assert_eq!(lt.source_target_distance(), 5);
        assert_eq!(lt.width(), 2);
        for (_, &(_, len)) in lt.parents.iter() {
            assert!(len <= 1);
        }
        let run = fractional_traverse(&lt, 2).unwrap();
        assert!(run.within_bound());
        assert_eq!(run.expected_cost, 5.0, "single real branch walks straight");
    }

    #[test]
    fn parser_subdivides_long_edges() {
        let text = "layers 2\nlayer 0 0\nlayer 1 1\nedge 0 1 4\ntarget 1\n";
        let lt = LayeredTree::from_text(text).unwrap();
        assert_eq!(lt.num_layers(), 5);
        assert_eq!(lt.total_length(), 4);
        assert_eq!(lt.source_target_distance(), 4);
    }
}
