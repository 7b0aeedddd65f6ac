//! Shared instance builders for the criterion benchmarks.
//!
//! Everything here goes through the public generators so the benchmarks
//! measure the same code paths the harness and CLI exercise.

use std::collections::BTreeMap;

use treeminer_core::harness::{gen_tree, TreeFamily};
use treeminer_core::{DiscreteConfig, RootedTree};

/// Random recursive tree plus a configuration that parks one robot on every
/// leaf and the whole surplus on the lowest-id leaf — the shape the settler
/// sees right after a burst of growth on one branch.
pub fn loaded_tree(
    n: usize,
    depth: usize,
    seed: u64,
    surplus: u64,
) -> (RootedTree, DiscreteConfig) {
    let tree = gen_tree(TreeFamily::Randrec, n, depth, seed).expect("feasible shape");
    let leaves = tree.leaves();
    let mut weights: BTreeMap<_, _> = leaves.iter().map(|&l| (l, 1u64)).collect();
    *weights.get_mut(&leaves[0]).expect("tree has leaves") += surplus;
    (tree, DiscreteConfig::new(weights))
}

/// Tree with two configurations of equal mass whose surplus sits on opposite
/// extremes of the leaf set, forcing transport across the whole tree.
pub fn transport_pair(
    n: usize,
    depth: usize,
    seed: u64,
    surplus: u64,
) -> (RootedTree, DiscreteConfig, DiscreteConfig) {
    let (tree, from) = loaded_tree(n, depth, seed, surplus);
    let leaves = tree.leaves();
    let mut weights: BTreeMap<_, _> = leaves.iter().map(|&l| (l, 1u64)).collect();
    *weights.get_mut(leaves.last().expect("tree has leaves")).unwrap() += surplus;
    let to = DiscreteConfig::new(weights);
    (tree, from, to)
}
