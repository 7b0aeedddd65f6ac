//! Rooted weighted trees, robot configurations, and optimal-transport cost.
//!
//! Trees are arenas of nodes addressed by stable integer ids. Ids are never
//! reused within a run, so event logs may reference nodes that have since
//! been deleted. All iteration orders are deterministic (ascending id).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable node identifier; never reused within a run.
pub type NodeId = usize;

/// Absolute tolerance for comparisons on accumulated edge lengths and masses.
pub const LEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Node {
    parent: Option<NodeId>,
    /// Length of the edge towards the parent; 0.0 for the root (unused).
    edge_len: f64,
    /// Children, kept sorted by id.
    children: Vec<NodeId>,
}

/// A rooted tree with positive edge lengths on every non-root node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootedTree {
    root: NodeId,
    nodes: BTreeMap<NodeId, Node>,
    next_id: NodeId,
}

impl RootedTree {
    /// A tree consisting of a single root node with id 0.
    pub fn new() -> Self {
        Self::with_root(0)
    }

    /// A tree consisting of a single root node with the given id.
    pub fn with_root(root: NodeId) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            Node {
                parent: None,
                edge_len: 0.0,
                children: Vec::new(),
            },
        );
        RootedTree {
            root,
            nodes,
            next_id: root + 1,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.nodes.contains_key(&u)
    }

    fn node(&self, u: NodeId) -> Result<&Node> {
        self.nodes.get(&u).ok_or(Error::UnknownNode(u))
    }

    /// All node ids in ascending order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Parent of `u`, `None` for the root.
    pub fn parent(&self, u: NodeId) -> Result<Option<NodeId>> {
        Ok(self.node(u)?.parent)
    }

    /// Length of the edge from `u` to its parent; 0.0 for the root.
    pub fn edge_len(&self, u: NodeId) -> Result<f64> {
        Ok(self.node(u)?.edge_len)
    }

    /// Children of `u`, sorted by id.
    pub fn children(&self, u: NodeId) -> Result<&[NodeId]> {
        Ok(&self.node(u)?.children)
    }

    /// True when `u` has no children. In a single-node tree the root is the
    /// unique leaf.
    pub fn is_leaf(&self, u: NodeId) -> Result<bool> {
        Ok(self.node(u)?.children.is_empty())
    }

    /// All leaves in ascending id order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.children.is_empty())
            .map(|(&id, _)| id)
            .collect()
    }

    /// Adds a child of `parent` with a fresh id and the given edge length.
    pub fn add_child(&mut self, parent: NodeId, edge_len: f64) -> Result<NodeId> {
        let id = self.next_id;
        self.add_child_with_id(parent, id, edge_len)?;
        Ok(id)
    }

    /// Adds a child of `parent` with an explicit id (used by the parser).
    pub fn add_child_with_id(&mut self, parent: NodeId, id: NodeId, edge_len: f64) -> Result<()> {
        if self.nodes.contains_key(&id) {
            return Err(Error::DuplicateNode(id));
        }
        if !(edge_len > 0.0) {
            return Err(Error::InvalidEdgeLength { node: id, len: edge_len });
        }
        if !self.nodes.contains_key(&parent) {
            return Err(Error::UnknownNode(parent));
        }
        self.nodes.insert(
            id,
            Node {
                parent: Some(parent),
                edge_len,
                children: Vec::new(),
            },
        );
        let siblings = &mut self.nodes.get_mut(&parent).unwrap().children;
        let pos = siblings.partition_point(|&c| c < id);
        siblings.insert(pos, id);
        self.next_id = self.next_id.max(id + 1);
        Ok(())
    }

    /// Removes a leaf node. The parent may be left with a single child;
    /// callers restore simplicity with [`RootedTree::normalize_simple`].
    pub fn remove_leaf(&mut self, leaf: NodeId) -> Result<()> {
        let node = self.node(leaf)?;
        if !node.children.is_empty() {
            return Err(Error::NotALeaf(leaf));
        }
        let parent = node.parent.ok_or_else(|| {
            Error::IllegalMove(format!("cannot remove the root node {leaf}"))
        })?;
        self.nodes.remove(&leaf);
        let siblings = &mut self.nodes.get_mut(&parent).unwrap().children;
        siblings.retain(|&c| c != leaf);
        Ok(())
    }

    /// Increases the length of the edge above `u` by `amount`.
    pub fn elongate_edge(&mut self, u: NodeId, amount: f64) -> Result<()> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::InvalidEdgeLength { node: u, len: amount });
        }
        let node = self.nodes.get_mut(&u).ok_or(Error::UnknownNode(u))?;
        if node.parent.is_none() {
            return Err(Error::IllegalMove("cannot elongate above the root".into()));
        }
        node.edge_len += amount;
        Ok(())
    }

    /// Merges away every non-root node with exactly one child, preserving all
    /// distances. Returns the number of merged nodes.
    pub fn normalize_simple(&mut self) -> usize {
        let mut merged = 0;
        loop {
            let candidate = self
                .nodes
                .iter()
                .find(|(&id, n)| id != self.root && n.children.len() == 1)
                .map(|(&id, _)| id);
            let Some(u) = candidate else { break };
            let node = self.nodes.remove(&u).unwrap();
            let child = node.children[0];
            let parent = node.parent.unwrap();
            {
                let c = self.nodes.get_mut(&child).unwrap();
                c.parent = Some(parent);
                c.edge_len += node.edge_len;
            }
            let siblings = &mut self.nodes.get_mut(&parent).unwrap().children;
            siblings.retain(|&c| c != u);
            let pos = siblings.partition_point(|&c| c < child);
            siblings.insert(pos, child);
            merged += 1;
        }
        merged
    }

    /// Number of edges between `u` and the root.
    pub fn depth_hops(&self, u: NodeId) -> Result<usize> {
        let mut hops = 0;
        let mut cur = u;
        while let Some(p) = self.node(cur)?.parent {
            hops += 1;
            cur = p;
        }
        Ok(hops)
    }

    /// Sum of edge lengths between `u` and the root.
    pub fn depth_len(&self, u: NodeId) -> Result<f64> {
        let mut len = 0.0;
        let mut cur = u;
        while let Some(p) = self.node(cur)?.parent {
            len += self.node(cur)?.edge_len;
            cur = p;
        }
        Ok(len)
    }

    /// Weighted depth of the tree: maximum root-to-node distance.
    pub fn depth(&self) -> f64 {
        self.nodes
            .keys()
            .map(|&u| self.depth_len(u).unwrap())
            .fold(0.0, f64::max)
    }

    /// Lowest common ancestor of `u` and `v`.
    pub fn lca(&self, u: NodeId, v: NodeId) -> Result<NodeId> {
        let mut du = self.depth_hops(u)?;
        let mut dv = self.depth_hops(v)?;
        let (mut a, mut b) = (u, v);
        while du > dv {
            a = self.node(a)?.parent.unwrap();
            du -= 1;
        }
        while dv > du {
            b = self.node(b)?.parent.unwrap();
            dv -= 1;
        }
        while a != b {
            a = self.node(a)?.parent.unwrap();
            b = self.node(b)?.parent.unwrap();
        }
        Ok(a)
    }

    /// True when `anc` lies on the path from `u` to the root (inclusive).
    pub fn is_ancestor(&self, anc: NodeId, u: NodeId) -> Result<bool> {
        let mut cur = u;
        loop {
            if cur == anc {
                return Ok(true);
            }
            match self.node(cur)?.parent {
                Some(p) => cur = p,
                None => return Ok(false),
            }
        }
    }

    /// Sum of edge lengths on the unique path between `u` and `v`.
    pub fn distance(&self, u: NodeId, v: NodeId) -> Result<f64> {
        let a = self.lca(u, v)?;
        Ok(self.path_len_to_ancestor(u, a)? + self.path_len_to_ancestor(v, a)?)
    }

    /// Sum of edge lengths from `u` up to (but excluding the parent edge of)
    /// the ancestor `anc`.
    pub fn path_len_to_ancestor(&self, u: NodeId, anc: NodeId) -> Result<f64> {
        let mut len = 0.0;
        let mut cur = u;
        while cur != anc {
            len += self.node(cur)?.edge_len;
            cur = self
                .node(cur)?
                .parent
                .ok_or_else(|| Error::IllegalMove(format!("{anc} is not an ancestor of {u}")))?;
        }
        Ok(len)
    }

    /// Nodes on the path from `u` up to `anc`, excluding `anc` itself.
    pub fn path_nodes_to_ancestor(&self, u: NodeId, anc: NodeId) -> Result<Vec<NodeId>> {
        let mut path = Vec::new();
        let mut cur = u;
        while cur != anc {
            path.push(cur);
            cur = self
                .node(cur)?
                .parent
                .ok_or_else(|| Error::IllegalMove(format!("{anc} is not an ancestor of {u}")))?;
        }
        Ok(path)
    }

    /// Post-order traversal (children before parents), iterative.
    pub fn post_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((u, expanded)) = stack.pop() {
            if expanded {
                order.push(u);
            } else {
                stack.push((u, true));
                for &c in self.nodes[&u].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Leaves of the subtree rooted at `u`, ascending id order.
    pub fn subtree_leaves(&self, u: NodeId) -> Result<Vec<NodeId>> {
        self.node(u)?;
        let mut leaves = Vec::new();
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            let n = &self.nodes[&v];
            if n.children.is_empty() {
                leaves.push(v);
            } else {
                stack.extend(n.children.iter().copied());
            }
        }
        leaves.sort_unstable();
        Ok(leaves)
    }

    /// Parses the text format: header `tree <n> <root_id>`, then one line per
    /// non-root node: `<node_id> <parent_id> <edge_length>`. Blank lines and
    /// `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
        let mut parts = header.split_whitespace();
        match parts.next() {
            Some("tree") => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header starting with 'tree', got {other:?}"
                )))
            }
        }
        let n: usize = parts
            .next()
            .ok_or_else(|| Error::Parse("header missing node count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad node count: {e}")))?;
        let root: NodeId = parts
            .next()
            .ok_or_else(|| Error::Parse("header missing root id".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad root id: {e}")))?;
        if parts.next().is_some() {
            return Err(Error::Parse("trailing tokens in header".into()));
        }

        let mut entries: Vec<(NodeId, NodeId, f64)> = Vec::new();
        for line in lines {
            let mut p = line.split_whitespace();
            let id: NodeId = p
                .next()
                .ok_or_else(|| Error::Parse(format!("bad node line: {line}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad node id in '{line}': {e}")))?;
            let parent: NodeId = p
                .next()
                .ok_or_else(|| Error::Parse(format!("node line missing parent: {line}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad parent id in '{line}': {e}")))?;
            let len: f64 = p
                .next()
                .ok_or_else(|| Error::Parse(format!("node line missing length: {line}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad edge length in '{line}': {e}")))?;
            if p.next().is_some() {
                return Err(Error::Parse(format!("trailing tokens in node line: {line}")));
            }
            entries.push((id, parent, len));
        }
        if entries.len() + 1 != n {
            return Err(Error::Parse(format!(
                "header declares {n} nodes but {} node lines follow",
                entries.len()
            )));
        }

        let mut tree = RootedTree::with_root(root);
        // Insert entries whose parent is already present until done; a stall
        // means an orphan or a cycle.
        let mut remaining = entries;
        while !remaining.is_empty() {
            let before = remaining.len();
            let mut deferred = Vec::new();
            for (id, parent, len) in remaining {
                if tree.contains(parent) {
                    tree.add_child_with_id(parent, id, len)?;
                } else {
                    deferred.push((id, parent, len));
                }
            }
            if deferred.len() == before {
                return Err(Error::Parse(format!(
                    "{} node lines reference no reachable parent (orphan or cycle)",
                    deferred.len()
                )));
            }
            remaining = deferred;
        }
        Ok(tree)
    }

    /// Writes the text format parsed by [`RootedTree::from_text`]. Node lines
    /// are sorted by id, so output is deterministic.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "tree {} {}", self.node_count(), self.root).unwrap();
        for (&id, node) in &self.nodes {
            if let Some(p) = node.parent {
                writeln!(out, "{} {} {}", id, p, node.edge_len).unwrap();
            }
        }
        out
    }
}

impl Default for RootedTree {
    fn default() -> Self {
        Self::new()
    }
}

/// Integer robot placement on the leaves of a tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteConfig {
    weights: BTreeMap<NodeId, u64>,
}

impl DiscreteConfig {
    pub fn new(weights: BTreeMap<NodeId, u64>) -> Self {
        DiscreteConfig { weights }
    }

    /// Places all `k` robots on a single leaf.
    pub fn single(leaf: NodeId, k: u64) -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(leaf, k);
        DiscreteConfig { weights }
    }

    /// Total robot count.
    pub fn k(&self) -> u64 {
        self.weights.values().sum()
    }

    /// Robots on `leaf` (zero when absent).
    pub fn get(&self, leaf: NodeId) -> u64 {
        self.weights.get(&leaf).copied().unwrap_or(0)
    }

    pub fn set(&mut self, leaf: NodeId, w: u64) {
        if w == 0 {
            self.weights.remove(&leaf);
        } else {
            self.weights.insert(leaf, w);
        }
    }

    /// Leaves carrying positive weight, ascending id order.
    pub fn support(&self) -> impl Iterator<Item = (NodeId, u64)> + '_ {
        self.weights.iter().filter(|(_, &w)| w > 0).map(|(&l, &w)| (l, w))
    }

    /// Moves one robot from `src` to `dst`.
    pub fn move_unit(&mut self, src: NodeId, dst: NodeId) -> Result<()> {
        let w = self.get(src);
        if w == 0 {
            return Err(Error::IllegalMove(format!("no robot to move on leaf {src}")));
        }
        self.set(src, w - 1);
        self.set(dst, self.get(dst) + 1);
        Ok(())
    }

    pub fn to_fractional(&self) -> FractionalConfig {
        FractionalConfig::new(
            self.weights
                .iter()
                .map(|(&l, &w)| (l, w as f64))
                .collect(),
        )
    }

    /// Checks that every weighted leaf is a leaf of `tree`.
    pub fn validate_on(&self, tree: &RootedTree) -> Result<()> {
        for (&l, &w) in &self.weights {
            if w > 0 && !tree.is_leaf(l).unwrap_or(false) {
                return Err(Error::ConfigMismatch(format!(
                    "weighted node {l} is not a leaf of the tree"
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative real mass placement on the leaves of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalConfig {
    weights: BTreeMap<NodeId, f64>,
}

impl FractionalConfig {
    pub fn new(weights: BTreeMap<NodeId, f64>) -> Self {
        FractionalConfig { weights }
    }

    /// Total mass.
    pub fn k(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn get(&self, leaf: NodeId) -> f64 {
        self.weights.get(&leaf).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, leaf: NodeId, w: f64) {
        self.weights.insert(leaf, w);
    }

    /// Leaves carrying mass above `LEN_TOL`, ascending id order.
    pub fn support(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.weights
            .iter()
            .filter(|(_, &w)| w > LEN_TOL)
            .map(|(&l, &w)| (l, w))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.weights.iter().map(|(&l, &w)| (l, w))
    }

    pub fn validate_on(&self, tree: &RootedTree) -> Result<()> {
        for (&l, &w) in &self.weights {
            if w < -LEN_TOL {
                return Err(Error::ConfigMismatch(format!("negative mass {w} on leaf {l}")));
            }
            if w > LEN_TOL && !tree.is_leaf(l).unwrap_or(false) {
                return Err(Error::ConfigMismatch(format!(
                    "weighted node {l} is not a leaf of the tree"
                )));
            }
        }
        Ok(())
    }
}

/// Extended configuration: every node's value is the sum over descendant
/// leaves, computed bottom-up. The root carries the full mass.
pub fn extend_discrete(tree: &RootedTree, c: &DiscreteConfig) -> Result<BTreeMap<NodeId, u64>> {
    c.validate_on(tree)?;
    let mut ext: BTreeMap<NodeId, u64> = BTreeMap::new();
    for u in tree.post_order() {
        let children = tree.children(u)?;
        let val = if children.is_empty() {
            c.get(u)
        } else {
            children.iter().map(|c| ext[c]).sum()
        };
        ext.insert(u, val);
    }
    Ok(ext)
}

/// Fractional counterpart of [`extend_discrete`].
pub fn extend_fractional(tree: &RootedTree, c: &FractionalConfig) -> Result<BTreeMap<NodeId, f64>> {
    c.validate_on(tree)?;
    let mut ext: BTreeMap<NodeId, f64> = BTreeMap::new();
    for u in tree.post_order() {
        let children = tree.children(u)?;
        let val = if children.is_empty() {
            c.get(u)
        } else {
            children.iter().map(|c| ext[c]).sum()
        };
        ext.insert(u, val);
    }
    Ok(ext)
}

/// Optimal-transport cost between two equal-mass placements:
/// sum over non-root nodes of edge length times the absolute difference of
/// extended values.
pub fn ot_cost(tree: &RootedTree, c1: &FractionalConfig, c2: &FractionalConfig) -> Result<f64> {
    let (k1, k2) = (c1.k(), c2.k());
    if (k1 - k2).abs() > LEN_TOL {
        return Err(Error::MassMismatch { expected: k1, got: k2 });
    }
    let e1 = extend_fractional(tree, c1)?;
    let e2 = extend_fractional(tree, c2)?;
    let mut cost = 0.0;
    for u in tree.node_ids() {
        if u == tree.root() {
            continue;
        }
        cost += tree.edge_len(u)? * (e1[&u] - e2[&u]).abs();
    }
    Ok(cost)
}

/// Exact integer variant of [`ot_cost`].
pub fn ot_cost_discrete(tree: &RootedTree, c1: &DiscreteConfig, c2: &DiscreteConfig) -> Result<f64> {
    if c1.k() != c2.k() {
        return Err(Error::MassMismatch {
            expected: c1.k() as f64,
            got: c2.k() as f64,
        });
    }
    let e1 = extend_discrete(tree, c1)?;
    let e2 = extend_discrete(tree, c2)?;
    let mut cost = 0.0;
    for u in tree.node_ids() {
        if u == tree.root() {
            continue;
        }
        cost += tree.edge_len(u)? * (e1[&u] as f64 - e2[&u] as f64).abs();
    }
    Ok(cost)
}

/// An optimal transport plan from `c1` to `c2` as a list of unit moves
/// `(source leaf, destination leaf)`.
///
/// Computed by one bottom-up pass matching surplus leaves to deficit leaves
/// within each subtree; on a tree metric this is optimal, the plan's total
/// distance equals [`ot_cost_discrete`], and no edge is crossed in both
/// directions.
pub fn ot_plan(
    tree: &RootedTree,
    c1: &DiscreteConfig,
    c2: &DiscreteConfig,
) -> Result<Vec<(NodeId, NodeId)>> {
    if c1.k() != c2.k() {
        return Err(Error::MassMismatch {
            expected: c1.k() as f64,
            got: c2.k() as f64,
        });
    }
    c1.validate_on(tree)?;
    c2.validate_on(tree)?;
    // Per node: unmatched (leaf, signed surplus) entries from its subtree.
    let mut open: BTreeMap<NodeId, Vec<(NodeId, i64)>> = BTreeMap::new();
    let mut plan = Vec::new();
    for u in tree.post_order() {
        let mut pool: Vec<(NodeId, i64)> = Vec::new();
        let children = tree.children(u)?;
        if children.is_empty() {
            let delta = c1.get(u) as i64 - c2.get(u) as i64;
            if delta != 0 {
                pool.push((u, delta));
            }
        } else {
            for c in children {
                pool.extend(open.remove(c).unwrap_or_default());
            }
        }
        // Match surpluses to deficits inside this subtree.
        let mut surplus: Vec<(NodeId, i64)> = pool.iter().filter(|&&(_, d)| d > 0).copied().collect();
        let mut deficit: Vec<(NodeId, i64)> = pool
            .iter()
            .filter(|&&(_, d)| d < 0)
            .map(|&(l, d)| (l, -d))
            .collect();
        let mut rest = Vec::new();
        let (mut si, mut di) = (0, 0);
        while si < surplus.len() && di < deficit.len() {
            let m = surplus[si].1.min(deficit[di].1);
            for _ in 0..m {
                plan.push((surplus[si].0, deficit[di].0));
            }
            surplus[si].1 -= m;
            deficit[di].1 -= m;
            if surplus[si].1 == 0 {
                si += 1;
            }
            if deficit[di].1 == 0 {
                di += 1;
            }
        }
        rest.extend(surplus.into_iter().skip(si).filter(|&(_, d)| d > 0));
        rest.extend(
            deficit
                .into_iter()
                .skip(di)
                .filter(|&(_, d)| d > 0)
                .map(|(l, d)| (l, -d)),
        );
        open.insert(u, rest);
    }
    let leftover = open.remove(&tree.root()).unwrap_or_default();
    debug_assert!(leftover.is_empty(), "equal masses must fully match at the root");
    Ok(plan)
}

/// Optimal-transport cost between two equal-mass placements supported on
/// arbitrary nodes (not only leaves): sum over non-root nodes of edge
/// length times the absolute subtree-mass difference.
pub fn ot_cost_nodes(
    tree: &RootedTree,
    m1: &BTreeMap<NodeId, f64>,
    m2: &BTreeMap<NodeId, f64>,
) -> Result<f64> {
    let (k1, k2) = (m1.values().sum::<f64>(), m2.values().sum::<f64>());
    if (k1 - k2).abs() > LEN_TOL {
        return Err(Error::MassMismatch { expected: k1, got: k2 });
    }
    let mut s1: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut s2: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut cost = 0.0;
    for u in tree.post_order() {
        let own1 = m1.get(&u).copied().unwrap_or(0.0);
        let own2 = m2.get(&u).copied().unwrap_or(0.0);
        let children = tree.children(u)?;
        let b1 = own1 + children.iter().map(|c| s1[c]).sum::<f64>();
        let b2 = own2 + children.iter().map(|c| s2[c]).sum::<f64>();
        if u != tree.root() {
            cost += tree.edge_len(u)? * (b1 - b2).abs();
        }
        s1.insert(u, b1);
        s2.insert(u, b2);
    }
    Ok(cost)
}

/// An optimal transport plan between integer placements supported on
/// arbitrary nodes, as a list of unit moves `(source node, destination
/// node)`. The plan's total distance equals [`ot_cost_nodes`] on the same
/// placements.
pub fn ot_plan_nodes(
    tree: &RootedTree,
    m1: &BTreeMap<NodeId, u64>,
    m2: &BTreeMap<NodeId, u64>,
) -> Result<Vec<(NodeId, NodeId)>> {
    let (k1, k2) = (m1.values().sum::<u64>(), m2.values().sum::<u64>());
    if k1 != k2 {
        return Err(Error::MassMismatch {
            expected: k1 as f64,
            got: k2 as f64,
        });
    }
    // Per node: unmatched (node, signed surplus) entries from its subtree.
    let mut open: BTreeMap<NodeId, Vec<(NodeId, i64)>> = BTreeMap::new();
    let mut plan = Vec::new();
    for u in tree.post_order() {
        let mut pool: Vec<(NodeId, i64)> = Vec::new();
        for c in tree.children(u)? {
            pool.extend(open.remove(c).unwrap_or_default());
        }
        let own = m1.get(&u).copied().unwrap_or(0) as i64
            - m2.get(&u).copied().unwrap_or(0) as i64;
        if own != 0 {
            pool.push((u, own));
        }
        let mut surplus: Vec<(NodeId, i64)> =
            pool.iter().filter(|&&(_, d)| d > 0).copied().collect();
        let mut deficit: Vec<(NodeId, i64)> = pool
            .iter()
            .filter(|&&(_, d)| d < 0)
            .map(|&(l, d)| (l, -d))
            .collect();
        let mut rest = Vec::new();
        let (mut si, mut di) = (0, 0);
        while si < surplus.len() && di < deficit.len() {
            let m = surplus[si].1.min(deficit[di].1);
            for _ in 0..m {
                plan.push((surplus[si].0, deficit[di].0));
            }
            surplus[si].1 -= m;
            deficit[di].1 -= m;
            if surplus[si].1 == 0 {
                si += 1;
            }
            if deficit[di].1 == 0 {
                di += 1;
            }
        }
        rest.extend(surplus.into_iter().skip(si).filter(|&(_, d)| d > 0));
        rest.extend(
            deficit
                .into_iter()
                .skip(di)
                .filter(|&(_, d)| d > 0)
                .map(|(l, d)| (l, -d)),
        );
        open.insert(u, rest);
    }
    let leftover = open.remove(&tree.root()).unwrap_or_default();
    debug_assert!(leftover.is_empty(), "equal masses must fully match at the root");
    Ok(plan)
}


#[cfg(test)]
mod tests {
    use super::test_support::{random_config, random_tree};
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// r(0) -> a(1) [len 1], a -> b(2) [len 2], r -> c(3) [len 4]
    fn sample_tree() -> RootedTree {
        let mut t = RootedTree::new();
        let a = t.add_child(0, 1.0).unwrap();
        let b = t.add_child(a, 2.0).unwrap();
        assert_eq!((a, b), (1, 2));
        let c = t.add_child(0, 4.0).unwrap();
        assert_eq!(c, 3);
        t
    }

    #[test]
    fn lca_reflexive_root_and_ancestor() {
        let t = sample_tree();
        assert_eq!(t.lca(2, 2).unwrap(), 2);
        assert_eq!(t.lca(2, 0).unwrap(), 0);
        assert_eq!(t.lca(1, 2).unwrap(), 1); // ancestor case on the path r->a->b
        assert_eq!(t.lca(2, 3).unwrap(), 0);
    }

    #[test]
    fn distance_basics() {
        let t = sample_tree();
        assert_eq!(t.distance(2, 2).unwrap(), 0.0);
        // two leaves at lengths (1+2) and 4 under the root
        assert_eq!(t.distance(2, 3).unwrap(), 7.0);
        assert_eq!(t.distance(0, 2).unwrap(), 3.0);
        assert_eq!(t.distance(2, 0).unwrap(), 3.0);
    }

    #[test]
    fn star_two_leaf_distance() {
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let l2 = t.add_child(0, 2.0).unwrap();
        assert_eq!(t.distance(l1, l2).unwrap(), 3.0);
    }

    #[test]
    fn distance_matches_floyd_warshall_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = random_tree(&mut rng, 10);
            let ids: Vec<NodeId> = t.node_ids().collect();
            let idx: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
            let n = ids.len();
            let mut dist = vec![vec![f64::INFINITY; n]; n];
            for i in 0..n {
                dist[i][i] = 0.0;
            }
            for &u in &ids {
                if let Some(p) = t.parent(u).unwrap() {
                    let (i, j) = (idx[&u], idx[&p]);
                    let w = t.edge_len(u).unwrap();
                    dist[i][j] = w;
                    dist[j][i] = w;
                }
            }
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let via = dist[i][m] + dist[m][j];
                        if via < dist[i][j] {
                            dist[i][j] = via;
                        }
                    }
                }
            }
            for &u in &ids {
                for &v in &ids {
                    let got = t.distance(u, v).unwrap();
                    let want = dist[idx[&u]][idx[&v]];
                    assert!(
                        (got - want).abs() < 1e-9,
                        "distance({u},{v}) = {got}, all-pairs oracle = {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn extend_config_basics() {
        // single leaf under the root, k robots
        let mut t = RootedTree::new();
        let l = t.add_child(0, 1.0).unwrap();
        let c = DiscreteConfig::single(l, 5);
        let ext = extend_discrete(&t, &c).unwrap();
        assert_eq!(ext[&0], 5);
        assert_eq!(ext[&l], 5);

        // binary root with leaf weights (2, 3)
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let l2 = t.add_child(0, 1.0).unwrap();
        let mut w = BTreeMap::new();
        w.insert(l1, 2);
        w.insert(l2, 3);
        let ext = extend_discrete(&t, &DiscreteConfig::new(w)).unwrap();
        assert_eq!(ext[&0], 5);
    }

    #[test]
    fn extend_config_matches_descendant_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let t = random_tree(&mut rng, 12);
            let leaves = t.leaves();
            let mut w = BTreeMap::new();
            for &l in &leaves {
                w.insert(l, rng.gen_range(0..4u64));
            }
            let c = DiscreteConfig::new(w);
            let ext = extend_discrete(&t, &c).unwrap();
            for u in t.node_ids() {
                let direct: u64 = t
                    .subtree_leaves(u)
                    .unwrap()
                    .iter()
                    .map(|&l| c.get(l))
                    .sum();
                assert_eq!(ext[&u], direct, "extension mismatch at node {u}");
            }
        }
    }

    #[test]
    fn extension_rejects_non_leaf_weights() {
        let t = sample_tree();
        let c = DiscreteConfig::single(1, 2); // node 1 is internal
        assert!(extend_discrete(&t, &c).is_err());
    }

    #[test]
    fn ot_cost_identity_and_unit_move() {
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let l2 = t.add_child(0, 2.0).unwrap();
        let mut w = BTreeMap::new();
        w.insert(l1, 2u64);
        w.insert(l2, 1);
        let c = DiscreteConfig::new(w);
        assert_eq!(ot_cost_discrete(&t, &c, &c).unwrap(), 0.0);

        let mut c2 = c.clone();
        c2.move_unit(l1, l2).unwrap();
        // moving one unit between the leaves costs their distance
        assert_eq!(ot_cost_discrete(&t, &c, &c2).unwrap(), 3.0);
    }

    /// Exhaustive transport oracle: enumerate all assignments of surplus
    /// units to deficit slots (k ≤ 4 keeps this tiny).
    fn brute_force_ot(t: &RootedTree, c1: &DiscreteConfig, c2: &DiscreteConfig) -> f64 {
        let mut srcs = Vec::new();
        let mut dsts = Vec::new();
        for &l in &t.leaves() {
            let d = c1.get(l) as i64 - c2.get(l) as i64;
            for _ in 0..d.max(0) {
                srcs.push(l);
            }
            for _ in 0..(-d).max(0) {
                dsts.push(l);
            }
        }
        assert_eq!(srcs.len(), dsts.len());
        if srcs.is_empty() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..dsts.len()).collect();
        // Heap's algorithm over destination orderings.
        fn visit(
            t: &RootedTree,
            srcs: &[NodeId],
            dsts: &[NodeId],
            perm: &mut Vec<usize>,
            n: usize,
            best: &mut f64,
        ) {
            if n == 1 {
                let cost: f64 = srcs
                    .iter()
                    .zip(perm.iter())
                    .map(|(&s, &p)| t.distance(s, dsts[p]).unwrap())
                    .sum();
                if cost < *best {
                    *best = cost;
                }
                return;
            }
            for i in 0..n {
                visit(t, srcs, dsts, perm, n - 1, best);
                if n % 2 == 0 {
                    perm.swap(i, n - 1);
                } else {
                    perm.swap(0, n - 1);
                }
            }
        }
        let n = perm.len();
        visit(t, &srcs, &dsts, &mut perm, n, &mut best);
        best
    }

    #[test]
    fn ot_cost_matches_exhaustive_plan_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            // 4-leaf random tree: root with some internal structure
            let t = random_tree(&mut rng, 8);
            let leaves = t.leaves();
            let k = rng.gen_range(1..=4u64);
            let c1 = random_config(&mut rng, &leaves, k);
            let c2 = random_config(&mut rng, &leaves, k);
            let got = ot_cost_discrete(&t, &c1, &c2).unwrap();
            let want = brute_force_ot(&t, &c1, &c2);
            assert!(
                (got - want).abs() < 1e-9,
                "ot_cost = {got}, exhaustive enumeration = {want}"
            );
        }
    }

    #[test]
    fn ot_cost_is_a_metric_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let t = random_tree(&mut rng, 9);
            let leaves = t.leaves();
            let k = rng.gen_range(1..=5u64);
            let a = random_config(&mut rng, &leaves, k);
            let b = random_config(&mut rng, &leaves, k);
            let c = random_config(&mut rng, &leaves, k);
            let ab = ot_cost_discrete(&t, &a, &b).unwrap();
            let ba = ot_cost_discrete(&t, &b, &a).unwrap();
            let bc = ot_cost_discrete(&t, &b, &c).unwrap();
            let ac = ot_cost_discrete(&t, &a, &c).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-12, "symmetry");
            assert!(ac <= ab + bc + 1e-9, "triangle inequality");
            assert_eq!(ab == 0.0, a == b, "identity of indiscernibles");
        }
    }

    #[test]
    fn ot_cost_rejects_mass_mismatch() {
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let a = DiscreteConfig::single(l1, 2);
        let b = DiscreteConfig::single(l1, 3);
        assert!(ot_cost_discrete(&t, &a, &b).is_err());
    }

    #[test]
    fn ot_plan_trivial_cases() {
        let mut t = RootedTree::new();
        let l1 = t.add_child(0, 1.0).unwrap();
        let l2 = t.add_child(0, 2.0).unwrap();
        let mut w = BTreeMap::new();
        w.insert(l1, 2u64);
        w.insert(l2, 1);
        let c = DiscreteConfig::new(w);
        assert!(ot_plan(&t, &c, &c).unwrap().is_empty());

        let mut c2 = c.clone();
        c2.move_unit(l1, l2).unwrap();
        assert_eq!(ot_plan(&t, &c, &c2).unwrap(), vec![(l1, l2)]);
    }

    #[test]
    fn ot_plan_cost_matches_ot_cost_and_never_reverses_an_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..40 {
            let t = random_tree(&mut rng, 10);
            let leaves = t.leaves();
            let k = rng.gen_range(1..=6u64);
            let c1 = random_config(&mut rng, &leaves, k);
            let c2 = random_config(&mut rng, &leaves, k);
            let plan = ot_plan(&t, &c1, &c2).unwrap();
            let plan_cost: f64 = plan.iter().map(|&(s, d)| t.distance(s, d).unwrap()).sum();
            let want = ot_cost_discrete(&t, &c1, &c2).unwrap();
            assert!(
                (plan_cost - want).abs() < 1e-9,
                "plan cost {plan_cost} != ot cost {want}"
            );
            // Signed flow over each (child -> parent) edge must be one-signed.
            let mut up_flow: BTreeMap<NodeId, i64> = BTreeMap::new();
            let mut seen_dir: BTreeMap<NodeId, (bool, bool)> = BTreeMap::new();
            for &(s, d) in &plan {
                let a = t.lca(s, d).unwrap();
                for u in t.path_nodes_to_ancestor(s, a).unwrap() {
                    *up_flow.entry(u).or_insert(0) += 1;
                    seen_dir.entry(u).or_insert((false, false)).0 = true;
                }
                for u in t.path_nodes_to_ancestor(d, a).unwrap() {
                    *up_flow.entry(u).or_insert(0) -= 1;
                    seen_dir.entry(u).or_insert((false, false)).1 = true;
                }
            }
            for (u, (up, down)) in seen_dir {
                assert!(
                    !(up && down),
                    "edge above node {u} crossed in both directions"
                );
            }
            let _ = up_flow;
            // Replaying the plan transforms c1 into c2.
            let mut c = c1.clone();
            for &(s, d) in &plan {
                c.move_unit(s, d).unwrap();
            }
            assert_eq!(c.support().collect::<Vec<_>>(), c2.support().collect::<Vec<_>>());
        }
    }

    #[test]
    fn normalize_simple_merges_a_path() {
        // r -> a (1) -> b (2), b a leaf; merging gives r -> b with length 3
        let mut t = RootedTree::new();
        let a = t.add_child(0, 1.0).unwrap();
        let b = t.add_child(a, 2.0).unwrap();
        let merged = t.normalize_simple();
        assert_eq!(merged, 1);
        assert!(!t.contains(a));
        assert_eq!(t.parent(b).unwrap(), Some(0));
        assert_eq!(t.edge_len(b).unwrap(), 3.0);
    }

    #[test]
    fn normalize_simple_is_identity_on_simple_trees() {
        let mut t = sample_tree();
        // sample_tree has a degree-2 node (1); normalize once, then re-check.
        t.normalize_simple();
        let before = t.to_text();
        assert_eq!(t.normalize_simple(), 0);
        assert_eq!(t.to_text(), before);
    }

    #[test]
    fn root_keeps_single_child_after_normalize() {
        let mut t = RootedTree::new();
        let a = t.add_child(0, 1.0).unwrap();
        let _b = t.add_child(a, 1.0).unwrap();
        let _c = t.add_child(a, 1.0).unwrap();
        assert_eq!(t.normalize_simple(), 0);
        assert_eq!(t.children(0).unwrap(), &[a]);
    }

    #[test]
    fn deletion_plus_normalize_preserves_surviving_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let mut t = random_tree(&mut rng, 14);
            let leaves = t.leaves();
            let doomed = *leaves.choose(&mut rng).unwrap();
            if doomed == t.root() {
                continue;
            }
            let survivors: Vec<NodeId> = leaves.iter().copied().filter(|&l| l != doomed).collect();
            let mut before = BTreeMap::new();
            for &u in &survivors {
                for &v in &survivors {
                    before.insert((u, v), t.distance(u, v).unwrap());
                }
                before.insert((t.root(), u), t.distance(t.root(), u).unwrap());
            }
            t.remove_leaf(doomed).unwrap();
            t.normalize_simple();
            for ((u, v), want) in before {
                // Skip pairs whose endpoint was merged away (only non-leaf
                // internals are merged, so survivors and root remain).
                let got = t.distance(u, v).unwrap();
                assert!(
                    (got - want).abs() < 1e-9,
                    "distance({u},{v}) changed from {want} to {got} after deletion"
                );
            }
        }
    }

    #[test]
    fn text_format_roundtrip() {
        let t = sample_tree();
        let text = t.to_text();
        assert!(text.starts_with("tree 4 0\n"));
        let t2 = RootedTree::from_text(&text).unwrap();
        assert_eq!(t2.to_text(), text);
        assert_eq!(t2.node_count(), 4);
        assert_eq!(t2.distance(2, 3).unwrap(), 7.0);
    }

    #[test]
    fn text_format_accepts_out_of_order_lines_and_comments() {
        let text = "# a tree\ntree 3 5\n\n7 6 2.5\n6 5 1.5\n";
        let t = RootedTree::from_text(text).unwrap();
        assert_eq!(t.root(), 5);
        assert_eq!(t.distance(5, 7).unwrap(), 4.0);
    }

    #[test]
    fn text_format_rejects_malformed_input() {
        assert!(RootedTree::from_text("").is_err());
        assert!(RootedTree::from_text("tree 2 0\n").is_err()); // missing node line
        assert!(RootedTree::from_text("tree 2 0\n1 9 1.0\n").is_err()); // orphan
        assert!(RootedTree::from_text("tree 2 0\n1 0 -1.0\n").is_err()); // bad length
        assert!(RootedTree::from_text("graph 2 0\n1 0 1.0\n").is_err()); // bad header
    }

    #[test]
    fn fresh_ids_are_never_reused_after_deletion() {
        let mut t = RootedTree::new();
        let a = t.add_child(0, 1.0).unwrap();
        let b = t.add_child(0, 1.0).unwrap();
        t.remove_leaf(b).unwrap();
        let c = t.add_child(a, 1.0).unwrap();
        assert!(c > b, "id {c} must not reuse deleted id {b}");
    }

    #[test]
    fn depth_and_subtree_leaves() {
        let t = sample_tree();
        assert_eq!(t.depth(), 4.0); // leaf 3 at distance 4
        assert_eq!(t.depth_hops(2).unwrap(), 2);
        assert_eq!(t.subtree_leaves(0).unwrap(), vec![2, 3]);
        assert_eq!(t.subtree_leaves(1).unwrap(), vec![2]);
        assert_eq!(t.leaves(), vec![2, 3]);
    }

    #[test]
    fn node_mass_transport_handles_internal_nodes() {
        // Path 0 - 1 - 2 with unit edges.
        let mut t = RootedTree::new();
        let a = t.add_child(0, 1.0).unwrap();
        let b = t.add_child(a, 1.0).unwrap();
        let m_root = BTreeMap::from([(0, 1.0)]);
        let m_leaf = BTreeMap::from([(b, 1.0)]);
        assert_eq!(ot_cost_nodes(&t, &m_root, &m_leaf).unwrap(), 2.0);
        let plan = ot_plan_nodes(
            &t,
            &BTreeMap::from([(0, 1u64)]),
            &BTreeMap::from([(b, 1u64)]),
        )
        .unwrap();
        assert_eq!(plan, vec![(0, b)]);

        // Star: two units at the root split onto the leaves.
        let mut s = RootedTree::new();
        let x = s.add_child(0, 1.0).unwrap();
        let y = s.add_child(0, 1.0).unwrap();
        let from = BTreeMap::from([(0, 2u64)]);
        let to = BTreeMap::from([(x, 1u64), (y, 1u64)]);
        let plan = ot_plan_nodes(&s, &from, &to).unwrap();
        assert_eq!(plan.len(), 2);
        let total: f64 = plan.iter().map(|&(u, v)| s.distance(u, v).unwrap()).sum();
        let f = |m: &BTreeMap<NodeId, u64>| -> BTreeMap<NodeId, f64> {
            m.iter().map(|(&u, &w)| (u, w as f64)).collect()
        };
        assert_eq!(total, ot_cost_nodes(&s, &f(&from), &f(&to)).unwrap());
    }

    #[test]
    fn node_mass_transport_agrees_with_leaf_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let t = test_support::random_tree(&mut rng, 9);
            let c1 = test_support::random_config(&mut rng, &t.leaves(), 5);
            let c2 = test_support::random_config(&mut rng, &t.leaves(), 5);
            let leaf_cost = ot_cost_discrete(&t, &c1, &c2).unwrap();
            let m1: BTreeMap<NodeId, u64> = c1.support().collect();
            let m2: BTreeMap<NodeId, u64> = c2.support().collect();
            let f = |m: &BTreeMap<NodeId, u64>| -> BTreeMap<NodeId, f64> {
                m.iter().map(|(&u, &w)| (u, w as f64)).collect()
            };
            let node_cost = ot_cost_nodes(&t, &f(&m1), &f(&m2)).unwrap();
            assert!((leaf_cost - node_cost).abs() < 1e-9);
            let plan = ot_plan_nodes(&t, &m1, &m2).unwrap();
            let total: f64 = plan.iter().map(|&(u, v)| t.distance(u, v).unwrap()).sum();
            assert!((total - node_cost).abs() < 1e-9);
            // Net flow out of each node must turn m1 into m2.
            let mut acc: BTreeMap<NodeId, i64> = m1.iter().map(|(&u, &w)| (u, w as i64)).collect();
            for &(s, d) in &plan {
                *acc.entry(s).or_insert(0) -= 1;
                *acc.entry(d).or_insert(0) += 1;
            }
            for (&u, &w) in &m2 {
                assert_eq!(acc.get(&u).copied().unwrap_or(0), w as i64, "node {u}");
            }
            for (&u, &w) in &acc {
                assert_eq!(w, m2.get(&u).copied().unwrap_or(0) as i64, "node {u}");
            }
        }
    }

    #[test]
    fn node_mass_transport_rejects_mismatched_mass() {
        let t = sample_tree();
        let m1 = BTreeMap::from([(0, 2.0)]);
        let m2 = BTreeMap::from([(2, 1.0)]);
        assert!(matches!(
            ot_cost_nodes(&t, &m1, &m2),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            ot_plan_nodes(&t, &BTreeMap::from([(0, 2u64)]), &BTreeMap::from([(2, 1u64)])),
            Err(Error::MassMismatch { .. })
        ));
    }
}
