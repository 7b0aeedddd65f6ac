//! The potential function, tensions between leaves, and the player's
//! rebalancing rule, implemented as an event-driven atomic-move engine.
//!
//! The potential of a placement is `Σ_u d_u·φ(x_u)` over non-root nodes,
//! with `φ(x) = a·x + b·x²` and `x_u` the total mass below `u`. Moving one
//! robot from leaf `ℓ` to leaf `ℓ′` is worthwhile when the potential drop
//! (the *tension*) reaches the travel distance; the engine fires such moves
//! one at a time, which realizes the global rebalancing rule because
//! tensions are subadditive over transport plans.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{extend_discrete, DiscreteConfig, NodeId, RootedTree};

/// Slack at or below this value fires a move; stability demands slack above.
pub const STABILITY_TOL: f64 = 1e-9;

/// Smallest fork edge length tried before giving up.
pub const MIN_FORK_DELTA: f64 = 1e-12;

/// Coefficients of the potential and the bound constants tied to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    /// Linear coefficient of φ.
    pub a: f64,
    /// Quadratic coefficient of φ.
    pub b: f64,
    /// Lower-bound margin kept on fractional leaf mass.
    pub epsilon: f64,
    /// Slack fraction in the coupling between `a`, `b`, and the team size.
    pub epsilon_prime: f64,
    /// Constant in the guaranteed bound `cost + Ψ(x) ≤ γ·Ψ(y)`.
    pub gamma: f64,
}

impl PotentialParams {
    /// Default coefficients for a team of `k` robots: a = 20k, b = 5,
    /// ε = ε′ = 1/2, γ = 48. These satisfy [`PotentialParams::validate`]
    /// with equality in both inequalities.
    pub fn defaults_for_k(k: u64) -> Self {
        PotentialParams {
            a: 20.0 * k as f64,
            b: 5.0,
            epsilon: 0.5,
            epsilon_prime: 0.5,
            gamma: 48.0,
        }
    }

    /// Checks the two coefficient inequalities the engine's guarantees rest
    /// on: `2bk ≤ ε′a` and `b(2−2ε−ε′) ≥ 2+ε′`.
    pub fn validate(&self, k: u64) -> Result<()> {
        if !(self.a > 0.0) || !(self.b > 0.0) {
            return Err(Error::InvalidParams(format!(
                "coefficients must be positive, got a={}, b={}",
                self.a, self.b
            )));
        }
        if !(self.epsilon > 0.0) || !(self.epsilon_prime > 0.0) {
            return Err(Error::InvalidParams(
                "epsilon and epsilon_prime must be positive".into(),
            ));
        }
        let lhs = 2.0 * self.b * k as f64;
        let rhs = self.epsilon_prime * self.a;
        if lhs > rhs + 1e-9 {
            return Err(Error::InvalidParams(format!(
                "2bk = {lhs} exceeds epsilon_prime*a = {rhs}"
            )));
        }
        let lhs2 = self.b * (2.0 - 2.0 * self.epsilon - self.epsilon_prime);
        let rhs2 = 2.0 + self.epsilon_prime;
        if lhs2 < rhs2 - 1e-9 {
            return Err(Error::InvalidParams(format!(
                "b(2-2*epsilon-epsilon_prime) = {lhs2} is below 2+epsilon_prime = {rhs2}"
            )));
        }
        Ok(())
    }

    /// φ(x) = a·x + b·x², strictly convex and increasing on x ≥ 0.
    /// Panics on negative `x` (beyond a small rounding allowance).
    pub fn phi(&self, x: f64) -> f64 {
        assert!(x >= -1e-6, "phi called with negative mass {x}");
        self.a * x + self.b * x * x
    }

    /// φ(x) − φ(x−1) = a + b(2x−1), the marginal potential of the x-th unit.
    pub fn phi_diff(&self, x: f64) -> f64 {
        self.a + self.b * (2.0 * x - 1.0)
    }

    /// φ′(x) = a + 2bx.
    pub fn phi_prime(&self, x: f64) -> f64 {
        self.a + 2.0 * self.b * x
    }
}

/// Tension of the unit move `source → dest` together with its travel cost.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TensionReport {
    pub source: NodeId,
    pub dest: NodeId,
    /// Potential drop achieved by the move.
    pub tension: f64,
    /// Travel distance of the move.
    pub distance: f64,
    /// distance − tension; the move fires when this reaches zero.
    pub slack: f64,
}

/// One executed rebalancing move.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UnitMove {
    pub src: NodeId,
    pub dst: NodeId,
    /// Travel distance paid for the move.
    pub cost: f64,
    /// Tension at execution time (≥ cost up to tolerance).
    pub tension: f64,
}

/// Σ over non-root nodes of d_u·φ(x_u) for a discrete placement.
pub fn potential_discrete(
    tree: &RootedTree,
    c: &DiscreteConfig,
    params: &PotentialParams,
) -> Result<f64> {
    let ext = extend_discrete(tree, c)?;
    let mut sum = 0.0;
    for (&u, &x) in &ext {
        if u != tree.root() {
            sum += tree.edge_len(u)? * params.phi(x as f64);
        }
    }
    Ok(sum)
}

/// Σ over non-root nodes of d_u·φ(y_u) for a fractional placement.
pub fn potential_fractional(
    tree: &RootedTree,
    y: &crate::tree::FractionalConfig,
    params: &PotentialParams,
) -> Result<f64> {
    let ext = crate::tree::extend_fractional(tree, y)?;
    let mut sum = 0.0;
    for (&u, &x) in &ext {
        if u != tree.root() {
            sum += tree.edge_len(u)? * params.phi(x.max(0.0));
        }
    }
    Ok(sum)
}

fn tension_with_ext(
    tree: &RootedTree,
    ext: &BTreeMap<NodeId, u64>,
    src: NodeId,
    dst: NodeId,
    params: &PotentialParams,
) -> Result<TensionReport> {
    if src == dst {
        return Ok(TensionReport {
            source: src,
            dest: dst,
            tension: 0.0,
            distance: 0.0,
            slack: 0.0,
        });
    }
    let anc = tree.lca(src, dst)?;
    let mut tension = 0.0;
    let mut distance = 0.0;
    for u in tree.path_nodes_to_ancestor(src, anc)? {
        let d_u = tree.edge_len(u)?;
        tension += d_u * params.phi_diff(ext[&u] as f64);
        distance += d_u;
    }
    for u in tree.path_nodes_to_ancestor(dst, anc)? {
        let d_u = tree.edge_len(u)?;
        tension -= d_u * params.phi_diff(ext[&u] as f64 + 1.0);
        distance += d_u;
    }
    Ok(TensionReport {
        source: src,
        dest: dst,
        tension,
        distance,
        slack: distance - tension,
    })
}

/// Potential drop of moving one robot from `src` to `dst`, computed in
/// closed form from the two leaf-to-ancestor paths.
pub fn tension(
    tree: &RootedTree,
    c: &DiscreteConfig,
    src: NodeId,
    dst: NodeId,
    params: &PotentialParams,
) -> Result<TensionReport> {
    if c.get(src) == 0 {
        return Err(Error::IllegalMove(format!("source leaf {src} carries no robot")));
    }
    let ext = extend_discrete(tree, c)?;
    tension_with_ext(tree, &ext, src, dst, params)
}

/// The most violated (smallest-slack) candidate move, ties broken towards
/// the lexicographically smallest (source, destination) pair.
fn min_slack_move(
    tree: &RootedTree,
    c: &DiscreteConfig,
    params: &PotentialParams,
) -> Result<Option<TensionReport>> {
    let ext = extend_discrete(tree, c)?;
    let leaves = tree.leaves();
    let mut best: Option<TensionReport> = None;
    for (src, _) in c.support() {
        for &dst in &leaves {
            if dst == src {
                continue;
            }
            let rep = tension_with_ext(tree, &ext, src, dst, params)?;
            if best.map_or(true, |b| rep.slack < b.slack) {
                best = Some(rep);
            }
        }
    }
    Ok(best)
}

/// True when no single-robot move has tension within [`STABILITY_TOL`] of
/// its distance. Pairwise stability implies stability against simultaneous
/// moves because tensions are subadditive over transport plans.
pub fn stable(tree: &RootedTree, c: &DiscreteConfig, params: &PotentialParams) -> Result<bool> {
    Ok(min_slack_move(tree, c, params)?.map_or(true, |rep| rep.slack > STABILITY_TOL))
}

/// Fires the most violated move repeatedly until the placement is stable.
///
/// Returns the settled placement, the total travel cost, and the executed
/// moves in order. Errors with [`Error::MoveBudgetExceeded`] after 10·k·n
/// moves, which indicates the coefficient inequalities do not hold.
pub fn settle(
    tree: &RootedTree,
    c: &DiscreteConfig,
    params: &PotentialParams,
) -> Result<(DiscreteConfig, f64, Vec<UnitMove>)> {
    let budget = (10 * c.k() as usize * tree.node_count()).max(10);
    let mut cur = c.clone();
    let mut cost = 0.0;
    let mut moves = Vec::new();
    loop {
        let Some(rep) = min_slack_move(tree, &cur, params)? else {
            break;
        };
        if rep.slack > STABILITY_TOL {
            break;
        }
        cur.move_unit(rep.source, rep.dest)?;
        cost += rep.distance;
        moves.push(UnitMove {
            src: rep.source,
            dst: rep.dest,
            cost: rep.distance,
            tension: rep.tension,
        });
        if moves.len() > budget {
            return Err(Error::MoveBudgetExceeded { budget });
        }
    }
    Ok((cur, cost, moves))
}

/// The next move fired while the edge above `elongating` grows at unit rate.
#[derive(Debug, Clone, Copy)]
pub struct ElongationEvent {
    /// Elongation amount after which the move fires; infinite when no other
    /// leaf exists.
    pub delta: f64,
    /// Destination of the firing move (`None` iff `delta` is infinite).
    pub dest: Option<NodeId>,
    /// Rate at which the tightest slack shrinks per unit of elongation.
    pub rate: f64,
}

/// Computes, in closed form, how much the edge above `elongating` can grow
/// before a tension first reaches its distance, and where that first move
/// goes.
///
/// Growing `d_ℓ` by `t` raises the tension out of `ℓ` by `t·(φ(x_ℓ)−φ(x_ℓ−1))`
/// while the distance grows by `t`, so the slack towards every destination
/// shrinks at the same rate `(φ(x_ℓ)−φ(x_ℓ−1)) − 1 > 0`; slacks of moves not
/// leaving `ℓ` never shrink. Requires at least two robots on the leaf and a
/// stable placement.
pub fn next_elongation_event(
    tree: &RootedTree,
    c: &DiscreteConfig,
    elongating: NodeId,
    params: &PotentialParams,
) -> Result<ElongationEvent> {
    let x_l = c.get(elongating);
    if x_l < 2 {
        return Err(Error::IllegalMove(format!(
            "elongated leaf {elongating} carries {x_l} robots; at least 2 required"
        )));
    }
    if !tree.is_leaf(elongating)? {
        return Err(Error::NotALeaf(elongating));
    }
    let ext = extend_discrete(tree, c)?;
    let rate = params.phi_diff(x_l as f64) - 1.0;
    debug_assert!(rate > 0.0, "slack shrink rate must be positive");
    let mut best: Option<(f64, NodeId)> = None;
    for dst in tree.leaves() {
        if dst == elongating {
            continue;
        }
        let rep = tension_with_ext(tree, &ext, elongating, dst, params)?;
        if rep.slack <= STABILITY_TOL {
            return Err(Error::InvariantViolation(format!(
                "placement not stable before elongation: slack {} on {} -> {}",
                rep.slack, elongating, dst
            )));
        }
        let delta = rep.slack / rate;
        if best.map_or(true, |(d, _)| delta < d) {
            best = Some((delta, dst));
        }
    }
    Ok(match best {
        Some((delta, dest)) => ElongationEvent {
            delta,
            dest: Some(dest),
            rate,
        },
        None => ElongationEvent {
            delta: f64::INFINITY,
            dest: None,
            rate,
        },
    })
}

/// Splits `x` robots into `m` parts that differ by at most one, larger parts
/// first (so lower-id children receive the extra robots).
pub fn even_split(x: u64, m: u64) -> Vec<u64> {
    let q = x / m;
    let r = x % m;
    (0..m).map(|i| if i < r { q + 1 } else { q }).collect()
}

/// Clone of `tree` with `m` fresh children of length `delta` under `leaf`.
/// Returns the new tree and the child ids in ascending order.
pub fn fork_tree(
    tree: &RootedTree,
    leaf: NodeId,
    m: u64,
    delta: f64,
) -> Result<(RootedTree, Vec<NodeId>)> {
    if !tree.is_leaf(leaf)? {
        return Err(Error::NotALeaf(leaf));
    }
    let mut forked = tree.clone();
    let mut children = Vec::with_capacity(m as usize);
    for _ in 0..m {
        children.push(forked.add_child(leaf, delta)?);
    }
    Ok((forked, children))
}

/// The placement after a fork: the forked leaf's robots are split evenly
/// over the new children; all other leaves are untouched.
pub fn fork_config(c: &DiscreteConfig, leaf: NodeId, children: &[NodeId]) -> DiscreteConfig {
    let split = even_split(c.get(leaf), children.len() as u64);
    let mut forked = c.clone();
    forked.set(leaf, 0);
    for (&child, &w) in children.iter().zip(split.iter()) {
        forked.set(child, w);
    }
    forked
}

/// Finds an initial edge length δ ∈ (0,1] for forking `leaf` into `m`
/// children such that the even-split placement is stable in the forked tree,
/// by halving from δ = 1. Shrinking δ recovers the pre-fork slack on every
/// pair of surviving leaves, but the sibling pairs only have slack ~2δ,
/// which must itself clear the stability tolerance: when an incumbent slack
/// hugs the tolerance the qualifying window can close or fall between two
/// probed lengths, and the search fails. Callers that must fork anyway
/// should pick a length by other criteria and rebalance afterwards.
pub fn fork_delta(
    tree: &RootedTree,
    c: &DiscreteConfig,
    leaf: NodeId,
    m: u64,
    params: &PotentialParams,
) -> Result<f64> {
    fork_delta_with(tree, c, leaf, m, params, |_, _, _| Ok(true))
}

/// [`fork_delta`] with an extra acceptance predicate evaluated on the forked
/// tree and placement after the stability check passes.
pub fn fork_delta_with(
    tree: &RootedTree,
    c: &DiscreteConfig,
    leaf: NodeId,
    m: u64,
    params: &PotentialParams,
    extra: impl Fn(&RootedTree, &DiscreteConfig, f64) -> Result<bool>,
) -> Result<f64> {
    let x = c.get(leaf);
    if x < 3 {
        return Err(Error::IllegalMove(format!(
            "forked leaf {leaf} carries {x} robots; at least 3 required"
        )));
    }
    if m < 2 || m > x - 1 {
        return Err(Error::IllegalMove(format!(
            "fork into {m} children requires 2 ≤ m ≤ {}",
            x - 1
        )));
    }
    let mut delta = 1.0;
    while delta >= MIN_FORK_DELTA {
        let (forked, children) = fork_tree(tree, leaf, m, delta)?;
        let fc = fork_config(c, leaf, &children);
        if stable(&forked, &fc, params)? && extra(&forked, &fc, delta)? {
            return Ok(delta);
        }
        delta /= 2.0;
    }
    Err(Error::ForkSearchFailed { delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::ot_plan;
    use crate::tree::test_support::{random_config, random_tree};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_unit_leaves() -> (RootedTree, NodeId, NodeId) {
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let l2 = t.add_child(0, 1.0).unwrap();
        (t, l1, l2)
    }

    fn config(pairs: &[(NodeId, u64)]) -> DiscreteConfig {
        DiscreteConfig::new(pairs.iter().copied().collect())
    }

    #[test]
    fn phi_values() {
        let p = PotentialParams::defaults_for_k(2); // a = 40, b = 5
        assert_eq!(p.phi(0.0), 0.0);
        assert_eq!(p.phi(2.0), 100.0); // 80 + 20
        // with defaults φ(k) = 25k²
        for k in 1..=8u64 {
            let p = PotentialParams::defaults_for_k(k);
            assert_eq!(p.phi(k as f64), 25.0 * (k * k) as f64);
        }
        assert_eq!(PotentialParams::defaults_for_k(4).phi(4.0), 400.0);
    }

    #[test]
    #[should_panic(expected = "negative mass")]
    fn phi_rejects_negative_input() {
        PotentialParams::defaults_for_k(2).phi(-1.0);
    }

    #[test]
    fn default_params_satisfy_coefficient_inequalities_with_equality() {
        for k in 1..=8 {
            PotentialParams::defaults_for_k(k).validate(k).unwrap();
        }
        // 2bk ≤ ε′a fails when b is too large relative to a
        let mut bad = PotentialParams::defaults_for_k(4);
        bad.b = 100.0;
        assert!(bad.validate(4).is_err());
        // b(2−2ε−ε′) ≥ 2+ε′ fails when the margins eat the whole slope
        let mut bad = PotentialParams::defaults_for_k(4);
        bad.epsilon = 0.9;
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn potential_on_symmetric_star() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4); // a = 80, b = 5
        let c = config(&[(l1, 2), (l2, 2)]);
        // each leaf contributes 1·φ(2) = 160 + 20 = 180
        assert_eq!(potential_discrete(&t, &c, &p).unwrap(), 360.0);
    }

    #[test]
    fn potential_of_zero_mass_is_zero() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 0), (l2, 0)]);
        assert_eq!(potential_discrete(&t, &c, &p).unwrap(), 0.0);
    }

    #[test]
    fn potential_matches_per_node_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let t = random_tree(&mut rng, 6);
            let leaves = t.leaves();
            let c = random_config(&mut rng, &leaves, 5);
            let p = PotentialParams::defaults_for_k(5);
            let got = potential_discrete(&t, &c, &p).unwrap();
            let mut want = 0.0;
            for u in t.node_ids() {
                if u == t.root() {
                    continue;
                }
                let below: u64 = t.subtree_leaves(u).unwrap().iter().map(|&l| c.get(l)).sum();
                want += t.edge_len(u).unwrap() * p.phi(below as f64);
            }
            assert!((got - want).abs() < 1e-9, "potential {got} != recomputed {want}");
        }
    }

    #[test]
    fn tension_of_self_move_is_zero() {
        let (t, l1, _) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 2), (2, 2)]);
        let rep = tension(&t, &c, l1, l1, &p).unwrap();
        assert_eq!(rep.tension, 0.0);
        assert_eq!(rep.slack, 0.0);
    }

    #[test]
    fn balanced_star_has_negative_outgoing_tension() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 2), (l2, 2)]);
        let rep = tension(&t, &c, l1, l2, &p).unwrap();
        assert!(rep.tension < 0.0, "imbalancing move must raise the potential");
    }

    #[test]
    fn tension_closed_form_matches_potential_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = PotentialParams::defaults_for_k(6);
        for _ in 0..25 {
            let t = random_tree(&mut rng, 9);
            let leaves = t.leaves();
            let c = random_config(&mut rng, &leaves, 6);
            let srcs: Vec<NodeId> = c.support().map(|(l, _)| l).collect();
            if srcs.is_empty() || leaves.len() < 2 {
                continue;
            }
            let src = *srcs.choose(&mut rng).unwrap();
            let dst = *leaves.choose(&mut rng).unwrap();
            if dst == src {
                continue;
            }
            let rep = tension(&t, &c, src, dst, &p).unwrap();
            let mut moved = c.clone();
            moved.move_unit(src, dst).unwrap();
            let want = potential_discrete(&t, &c, &p).unwrap()
                - potential_discrete(&t, &moved, &p).unwrap();
            assert!(
                (rep.tension - want).abs() < 1e-9,
                "closed form {} != potential difference {want}",
                rep.tension
            );
            assert!((rep.distance - t.distance(src, dst).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn tension_requires_an_occupied_source() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 4)]);
        assert!(tension(&t, &c, l2, l1, &p).is_err());
    }

    #[test]
    fn single_leaf_tree_is_stable() {
        let mut t = RootedTree::new();
        let l = t.add_child(0, 1.0).unwrap();
        let p = PotentialParams::defaults_for_k(4);
        assert!(stable(&t, &DiscreteConfig::single(l, 4), &p).unwrap());
    }

    #[test]
    fn piled_up_configuration_is_unstable() {
        // x = (4,0) on two unit leaves: tension is
        // (φ(4)−φ(3)) − (φ(1)−φ(0)) = 115 − 85 = 30 ≥ distance 2.
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4); // a = 80, b = 5
        let c = config(&[(l1, 4), (l2, 0)]);
        let rep = tension(&t, &c, l1, l2, &p).unwrap();
        assert!((rep.tension - 30.0).abs() < 1e-12);
        assert!(!stable(&t, &c, &p).unwrap());
    }

    #[test]
    fn settle_leaves_stable_input_unchanged() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 2), (l2, 2)]);
        let (settled, cost, moves) = settle(&t, &c, &p).unwrap();
        assert_eq!(settled, c);
        assert_eq!(cost, 0.0);
        assert!(moves.is_empty());
    }

    #[test]
    fn settle_balances_a_pile_with_unit_moves() {
        // (4,0) → (3,1) → (2,2); tensions 30 then 10, each move costs 2.
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 4), (l2, 0)]);
        let (settled, cost, moves) = settle(&t, &c, &p).unwrap();
        assert_eq!(settled.get(l1), 2);
        assert_eq!(settled.get(l2), 2);
        assert_eq!(cost, 4.0);
        assert_eq!(moves.len(), 2);
        for mv in &moves {
            assert_eq!((mv.src, mv.dst), (l1, l2));
            assert_eq!(mv.cost, 2.0);
            assert!(mv.tension >= mv.cost - STABILITY_TOL);
        }
        assert!((moves[0].tension - 30.0).abs() < 1e-12);
        assert!((moves[1].tension - 10.0).abs() < 1e-12);
        assert!(stable(&t, &settled, &p).unwrap());
    }

    #[test]
    fn settle_output_is_stable_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let t = random_tree(&mut rng, 8);
            let leaves = t.leaves();
            let k = rng.gen_range(1..=6u64);
            let c = random_config(&mut rng, &leaves, k);
            let p = PotentialParams::defaults_for_k(k);
            let (settled, cost, moves) = settle(&t, &c, &p).unwrap();
            assert!(stable(&t, &settled, &p).unwrap());
            let paid: f64 = moves.iter().map(|m| m.cost).sum();
            assert!((paid - cost).abs() < 1e-9);
            for mv in &moves {
                assert!(mv.tension >= mv.cost - STABILITY_TOL, "move fired early");
            }
        }
    }

    #[test]
    fn elongation_event_on_balanced_star() {
        // x = (2,2), k = 4: slack(ℓ1→ℓ2) = 2 − (95 − 105) = 12,
        // rate = φ(2) − φ(1) − 1 = 180 − 85 − 1 = 94.
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let c = config(&[(l1, 2), (l2, 2)]);
        let ev = next_elongation_event(&t, &c, l1, &p).unwrap();
        assert_eq!(ev.dest, Some(l2));
        assert!((ev.rate - 94.0).abs() < 1e-12);
        assert!((ev.delta - 12.0 / 94.0).abs() < 1e-12);
    }

    #[test]
    fn elongation_event_is_positive_after_settling() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        let (settled, _, _) = settle(&t, &config(&[(l1, 4), (l2, 0)]), &p).unwrap();
        let ev = next_elongation_event(&t, &settled, l1, &p).unwrap();
        assert!(ev.delta > 0.0);
    }

    #[test]
    fn elongation_event_requires_two_robots_and_no_peer_means_never() {
        let (t, l1, l2) = two_unit_leaves();
        let p = PotentialParams::defaults_for_k(4);
        assert!(next_elongation_event(&t, &config(&[(l1, 1), (l2, 3)]), l1, &p).is_err());

        let mut t1 = RootedTree::new();
        let l = t1.add_child(0, 1.0).unwrap();
        let ev = next_elongation_event(&t1, &DiscreteConfig::single(l, 3), l, &p).unwrap();
        assert!(ev.delta.is_infinite());
        assert_eq!(ev.dest, None);
    }

    #[test]
    fn elongation_event_matches_bisection_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut tested = 0;
        for _ in 0..40 {
            let t = random_tree(&mut rng, 7);
            let leaves = t.leaves();
            if leaves.len() < 2 {
                continue;
            }
            let k = rng.gen_range(3..=6u64);
            let p = PotentialParams::defaults_for_k(k);
            let (c, _, _) = settle(&t, &random_config(&mut rng, &leaves, k), &p).unwrap();
            let sources: Vec<NodeId> = c.support().filter(|&(_, w)| w >= 2).map(|(l, _)| l).collect();
            let Some(&l) = sources.first() else { continue };
            let ev = next_elongation_event(&t, &c, l, &p).unwrap();
            if !ev.delta.is_finite() {
                continue;
            }
            // Bracket the first instability with coarse steps, then bisect.
            let still_stable = |amount: f64| {
                let mut t2 = t.clone();
                t2.elongate_edge(l, amount).unwrap();
                stable(&t2, &c, &p).unwrap()
            };
            let mut hi = 1e-3;
            while still_stable(hi) {
                hi *= 2.0;
                assert!(hi < 1e12, "no instability found by stepping");
            }
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if still_stable(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(
                (ev.delta - hi).abs() < 1e-6,
                "event amount {} disagrees with bisection {hi}",
                ev.delta
            );
            tested += 1;
        }
        assert!(tested >= 5, "too few usable random instances ({tested})");
    }

    #[test]
    fn even_split_shapes() {
        assert_eq!(even_split(7, 3), vec![3, 2, 2]);
        assert_eq!(even_split(6, 3), vec![2, 2, 2]);
        assert_eq!(even_split(5, 2), vec![3, 2]);
    }

    #[test]
    fn fork_delta_is_one_on_a_lone_leaf() {
        // Forking the only leaf: the split children see no outside mass, so
        // the even split is stable already at δ = 1.
        let mut t = RootedTree::new();
        let l = t.add_child(0, 1.0).unwrap();
        let p = PotentialParams::defaults_for_k(4);
        let c = DiscreteConfig::single(l, 4);
        assert_eq!(fork_delta(&t, &c, l, 2, &p).unwrap(), 1.0);
        assert_eq!(fork_delta(&t, &c, l, 3, &p).unwrap(), 1.0);
    }

    #[test]
    fn fork_delta_yields_a_stable_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut tested = 0;
        for _ in 0..40 {
            let t = random_tree(&mut rng, 6);
            let leaves = t.leaves();
            let k = rng.gen_range(3..=7u64);
            let p = PotentialParams::defaults_for_k(k);
            let (c, _, _) = settle(&t, &random_config(&mut rng, &leaves, k), &p).unwrap();
            let candidates: Vec<NodeId> =
                c.support().filter(|&(_, w)| w >= 3).map(|(l, _)| l).collect();
            let Some(&leaf) = candidates.first() else { continue };
            let m = rng.gen_range(2..=(c.get(leaf) - 1).min(4));
            let delta = fork_delta(&t, &c, leaf, m, &p).unwrap();
            assert!(delta > 0.0 && delta <= 1.0);
            let (forked, children) = fork_tree(&t, leaf, m, delta).unwrap();
            let fc = fork_config(&c, leaf, &children);
            assert!(stable(&forked, &fc, &p).unwrap());
            // split values differ by at most one and only the forked leaf moved
            let split: Vec<u64> = children.iter().map(|&ch| fc.get(ch)).collect();
            let (lo, hi) = (split.iter().min().unwrap(), split.iter().max().unwrap());
            assert!(hi - lo <= 1);
            assert_eq!(split.iter().sum::<u64>(), c.get(leaf));
            tested += 1;
        }
        assert!(tested >= 5, "too few usable random instances ({tested})");
    }

    #[test]
    fn fork_delta_rejects_bad_arity() {
        let mut t = RootedTree::new();
        let l = t.add_child(0, 1.0).unwrap();
        let p = PotentialParams::defaults_for_k(4);
        let c = DiscreteConfig::single(l, 4);
        assert!(fork_delta(&t, &c, l, 1, &p).is_err());
        assert!(fork_delta(&t, &c, l, 4, &p).is_err()); // m ≤ x−1
        assert!(fork_delta(&t, &DiscreteConfig::single(l, 2), l, 2, &p).is_err());
    }

    #[test]
    fn tensions_are_subadditive_over_transport_plans() {
        // For small random instances, the potential drop of a whole plan is
        // at most the sum of the per-move tensions all evaluated at the
        // starting placement, strictly when plan paths overlap.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut overlaps = 0;
        for _ in 0..60 {
            let t = random_tree(&mut rng, 7);
            let leaves = t.leaves();
            if leaves.len() > 5 {
                continue;
            }
            let k = rng.gen_range(1..=5u64);
            let p = PotentialParams::defaults_for_k(k);
            let c1 = random_config(&mut rng, &leaves, k);
            let c2 = random_config(&mut rng, &leaves, k);
            if c1 == c2 {
                continue;
            }
            let plan = ot_plan(&t, &c1, &c2).unwrap();
            let drop = potential_discrete(&t, &c1, &p).unwrap()
                - potential_discrete(&t, &c2, &p).unwrap();
            let ext = extend_discrete(&t, &c1).unwrap();
            let mut sum = 0.0;
            let mut edge_use: BTreeMap<NodeId, usize> = BTreeMap::new();
            for &(s, d) in &plan {
                sum += tension_with_ext(&t, &ext, s, d, &p).unwrap().tension;
                let a = t.lca(s, d).unwrap();
                for u in t
                    .path_nodes_to_ancestor(s, a)
                    .unwrap()
                    .into_iter()
                    .chain(t.path_nodes_to_ancestor(d, a).unwrap())
                {
                    *edge_use.entry(u).or_insert(0) += 1;
                }
            }
            assert!(drop <= sum + 1e-9, "plan drop {drop} exceeds tension sum {sum}");
            if edge_use.values().any(|&n| n >= 2) {
                assert!(drop < sum - 1e-9, "overlapping plan must be strictly subadditive");
                overlaps += 1;
            }
        }
        assert!(overlaps >= 3, "too few overlapping plans exercised ({overlaps})");
    }
}
