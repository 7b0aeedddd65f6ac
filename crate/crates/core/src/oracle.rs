//! The fractional benchmark: minimizing the potential over all fractional
//! mass placements of total `k` on the leaves, plus the invariant checks
//! that compare a game run against it.
//!
//! The objective is a strictly convex quadratic, so the minimizer is unique.
//! Its Hessian restricted to leaf masses is `H[ℓ,ℓ′] = 2b·(weighted depth of
//! the lowest common ancestor)`, an ultrametric matrix; an active-set
//! projected-Newton method solves the program exactly in a handful of dense
//! linear solves, with projected gradient descent as a fallback.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{potential_discrete, potential_fractional, PotentialParams};
use crate::tree::{DiscreteConfig, FractionalConfig, NodeId, RootedTree};

/// Maximum KKT residual accepted from the solver.
pub const KKT_TOL: f64 = 1e-8;

/// Relative tolerance on the cost-versus-benchmark inequality.
pub const MASTER_REL_TOL: f64 = 1e-6;

/// Optimality certificate for the fractional program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktCertificate {
    /// Multiplier of the total-mass equality constraint.
    pub lambda: f64,
    /// Per-leaf gradient along the root path: Σ over ancestors of d_u·φ′(y_u).
    pub path_gradient: BTreeMap<NodeId, f64>,
    /// max deviation: |gradient − λ| on the support, max(0, λ − gradient) off it.
    pub residual: f64,
}

/// Hessian of the objective in leaf-mass coordinates.
#[derive(Debug, Clone)]
pub struct UltrametricHessian {
    /// Leaf ids indexing the matrix, ascending.
    pub leaves: Vec<NodeId>,
    /// Row-major symmetric matrix; entry (i,j) is 2b·depth(lca(leaf_i, leaf_j)).
    pub matrix: Vec<Vec<f64>>,
}

/// Gradient of the objective with respect to `y_leaf`: the sum over the
/// leaf's root path of d_u·φ′(y_u).
pub fn path_gradient(
    tree: &RootedTree,
    y: &FractionalConfig,
    leaf: NodeId,
    params: &PotentialParams,
) -> Result<f64> {
    let ext = crate::tree::extend_fractional(tree, y)?;
    let mut g = 0.0;
    for u in tree.path_nodes_to_ancestor(leaf, tree.root())? {
        g += tree.edge_len(u)? * params.phi_prime(ext[&u].max(0.0));
    }
    Ok(g)
}

/// Hessian of the objective: `H[ℓ,ℓ′] = Σ_{u ⪰ lca(ℓ,ℓ′)} d_u·φ″ =
/// 2b·depth(lca(ℓ,ℓ′))` for the quadratic potential.
pub fn hessian(tree: &RootedTree, params: &PotentialParams) -> Result<UltrametricHessian> {
    let leaves = tree.leaves();
    let n = leaves.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let anc = tree.lca(leaves[i], leaves[j])?;
            let h = 2.0 * params.b * tree.depth_len(anc)?;
            matrix[i][j] = h;
            matrix[j][i] = h;
        }
    }
    Ok(UltrametricHessian { leaves, matrix })
}

fn leaf_depths(tree: &RootedTree, leaves: &[NodeId]) -> Result<Vec<f64>> {
    leaves.iter().map(|&l| tree.depth_len(l)).collect()
}

fn gradient(c: &[f64], h: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| c[i] + h[i].iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// KKT residual of (y, λ): gradient must equal λ on the support and be ≥ λ
/// elsewhere.
fn kkt_residual(g: &[f64], y: &[f64], lambda: f64) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..y.len() {
        if y[i] > 1e-12 {
            r = r.max((g[i] - lambda).abs());
        } else {
            r = r.max(lambda - g[i]);
        }
    }
    r.max(0.0)
}

/// Euclidean projection onto the scaled simplex {y ≥ 0, Σy = k}.
fn project_simplex(v: &[f64], k: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut theta = (u.iter().sum::<f64>() - k) / u.len() as f64;
    for (i, &ui) in u.iter().enumerate() {
        prefix += ui;
        let t = (prefix - k) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Solves the equality-constrained Newton system on the free index set:
/// minimize c·y + ½yᵀHy subject to Σy = k, y fixed to 0 off `free`.
fn newton_on_free(
    c: &[f64],
    h: &[Vec<f64>],
    free: &[usize],
    k: f64,
) -> Result<(Vec<f64>, f64)> {
    let nf = free.len();
    let mut m = DMatrix::zeros(nf + 1, nf + 1);
    let mut rhs = DVector::zeros(nf + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b2, &j) in free.iter().enumerate() {
            m[(a, b2)] = h[i][j];
        }
        m[(a, nf)] = 1.0;
        m[(nf, a)] = 1.0;
        rhs[a] = -c[i];
    }
    rhs[nf] = k;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailed("singular Newton system".into()))?;
    let z: Vec<f64> = (0..nf).map(|a| sol[a]).collect();
    // The stationarity rows read Hy + c = −λ·1 with this sign layout.
    let lambda = -sol[nf];
    Ok((z, lambda))
}

fn solve_active_set(
    c: &[f64],
    h: &[Vec<f64>],
    k: f64,
    init: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = c.len();
    let mut y = init.to_vec();
    let mut active: Vec<bool> = y.iter().map(|&v| v <= 0.0).collect();
    // Keep at least one coordinate free.
    if active.iter().all(|&a| a) {
        active[0] = false;
    }
    let budget = 10 * n + 50;
    for _ in 0..budget {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let (z, lambda) = newton_on_free(c, h, &free, k)?;
        if z.iter().all(|&v| v >= -1e-12) {
            for (a, &i) in free.iter().enumerate() {
                y[i] = z[a].max(0.0);
            }
            for i in 0..n {
                if active[i] {
                    y[i] = 0.0;
                }
            }
            // Dual feasibility: bound gradients must not undercut λ.
            let g = gradient(c, h, &y);
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if active[i] && g[i] < lambda - 1e-10 {
                    if worst.map_or(true, |(_, w)| g[i] < w) {
                        worst = Some((i, g[i]));
                    }
                }
            }
            match worst {
                None => return Ok((y, lambda)),
                Some((i, _)) => active[i] = false,
            }
        } else {
            // Partial step until the first coordinate hits zero.
            let mut alpha = 1.0;
            let mut blocker = None;
            for (a, &i) in free.iter().enumerate() {
                if z[a] < -1e-12 && y[i] > 0.0 {
                    let step = y[i] / (y[i] - z[a]);
                    if step < alpha {
                        alpha = step;
                        blocker = Some(i);
                    }
                }
            }
            for (a, &i) in free.iter().enumerate() {
                y[i] += alpha * (z[a] - y[i]);
                y[i] = y[i].max(0.0);
            }
            match blocker {
                Some(i) => {
                    y[i] = 0.0;
                    active[i] = true;
                }
                None => {
                    // No feasible blocker means the starting point already
                    // had zero coordinates marked free; pin the most negative.
                    let (a_min, &_zi) = z
                        .iter()
                        .enumerate()
                        .min_by(|x, y2| x.1.partial_cmp(y2.1).unwrap())
                        .unwrap();
                    let i = free[a_min];
                    y[i] = 0.0;
                    active[i] = true;
                }
            }
        }
    }
    Err(Error::SolverFailed(format!(
        "active-set method did not converge within {budget} iterations"
    )))
}

fn solve_projected_gradient(
    c: &[f64],
    h: &[Vec<f64>],
    k: f64,
    init: &[f64],
) -> (Vec<f64>, f64) {
    let n = c.len();
    let lipschitz: f64 = (0..n)
        .map(|i| h[i].iter().map(|v| v.abs()).sum::<f64>())
        .fold(1.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut y = project_simplex(init, k);
    let mut best = (y.clone(), f64::INFINITY);
    for _ in 0..200_000 {
        let g = gradient(c, h, &y);
        // λ estimate: average gradient over the support.
        let support: Vec<usize> = (0..n).filter(|&i| y[i] > 1e-12).collect();
        let lambda = support.iter().map(|&i| g[i]).sum::<f64>() / support.len().max(1) as f64;
        let res = kkt_residual(&g, &y, lambda);
        if res < best.1 {
            best = (y.clone(), res);
        }
        if res <= KKT_TOL / 10.0 {
            break;
        }
        let moved: Vec<f64> = (0..n).map(|i| y[i] - step * g[i]).collect();
        y = project_simplex(&moved, k);
    }
    let g = gradient(c, h, &best.0);
    let support: Vec<usize> = (0..n).filter(|&i| best.0[i] > 1e-12).collect();
    let lambda = support.iter().map(|&i| g[i]).sum::<f64>() / support.len().max(1) as f64;
    (best.0, lambda)
}

/// Minimizes the potential over fractional placements of total mass `k` on
/// the leaves and certifies optimality. The minimizer is unique by strict
/// convexity.
pub fn solve_fractional(
    tree: &RootedTree,
    k: f64,
    params: &PotentialParams,
) -> Result<(FractionalConfig, KktCertificate)> {
    let leaves = tree.leaves();
    let uniform = vec![k / leaves.len() as f64; leaves.len()];
    solve_fractional_from(tree, k, params, &uniform)
}

/// [`solve_fractional`] starting from a caller-chosen feasible point
/// (used to confirm uniqueness from different initializations).
pub fn solve_fractional_from(
    tree: &RootedTree,
    k: f64,
    params: &PotentialParams,
    init: &[f64],
) -> Result<(FractionalConfig, KktCertificate)> {
    if !(k > 0.0) {
        return Err(Error::InvalidParams(format!("total mass must be positive, got {k}")));
    }
    let leaves = tree.leaves();
    if leaves.is_empty() {
        return Err(Error::SolverFailed("tree has no leaves".into()));
    }
    if init.len() != leaves.len() {
        return Err(Error::InvalidParams(format!(
            "initial point has {} coordinates for {} leaves",
            init.len(),
            leaves.len()
        )));
    }
    if leaves.len() == 1 {
        let mut w = BTreeMap::new();
        w.insert(leaves[0], k);
        let y = FractionalConfig::new(w);
        let g = path_gradient(tree, &y, leaves[0], params)?;
        let mut pg = BTreeMap::new();
        pg.insert(leaves[0], g);
        return Ok((
            y,
            KktCertificate {
                lambda: g,
                path_gradient: pg,
                residual: 0.0,
            },
        ));
    }

    let depths = leaf_depths(tree, &leaves)?;
    let c: Vec<f64> = depths.iter().map(|&d| params.a * d).collect();
    let hess = hessian(tree, params)?;
    let h = &hess.matrix;
    let feasible_init = project_simplex(init, k);

    let (yvec, lambda) = match solve_active_set(&c, h, k, &feasible_init) {
        Ok(res) => res,
        Err(_) => solve_projected_gradient(&c, h, k, &feasible_init),
    };
    let g = gradient(&c, h, &yvec);
    let residual = kkt_residual(&g, &yvec, lambda);
    if residual > KKT_TOL {
        return Err(Error::SolverFailed(format!(
            "KKT residual {residual} above tolerance {KKT_TOL}"
        )));
    }
    let weights: BTreeMap<NodeId, f64> = leaves
        .iter()
        .zip(yvec.iter())
        .map(|(&l, &w)| (l, w))
        .collect();
    let path_gradient = leaves
        .iter()
        .zip(g.iter())
        .map(|(&l, &gl)| (l, gl))
        .collect();
    Ok((
        FractionalConfig::new(weights),
        KktCertificate {
            lambda,
            path_gradient,
            residual,
        },
    ))
}

/// Outcome of the accumulated-cost check `cost + Ψ(x) ≤ γ·Ψ(y*)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MasterReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the run-long guarantee that accumulated cost plus current
/// potential stays within γ times the potential of the fractional optimum.
pub fn check_master_inequality(
    tree: &RootedTree,
    x: &DiscreteConfig,
    cost: f64,
    params: &PotentialParams,
) -> Result<MasterReport> {
    let lhs = cost + potential_discrete(tree, x, params)?;
    let (y, _) = solve_fractional(tree, x.k() as f64, params)?;
    let rhs = params.gamma * potential_fractional(tree, &y, params)?;
    Ok(MasterReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + MASTER_REL_TOL),
    })
}

/// Outcome of the componentwise comparison between the discrete placement
/// and the fractional optimum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct XyBoundsReport {
    pub holds: bool,
    /// min over leaves of (y_ℓ + 2 − ε) − x_ℓ; must stay positive.
    pub upper_margin: f64,
    /// min over leaves of y_ℓ − ε; must stay nonnegative.
    pub lower_margin: f64,
}

/// Checks `x_ℓ < y_ℓ + 2 − ε` and `y_ℓ ≥ ε` for every leaf, with tolerance
/// 1e-6 (ε = 1/2 at defaults, so x_ℓ < y_ℓ + 3/2 and y_ℓ ≥ 1/2).
pub fn check_xy_bounds(
    tree: &RootedTree,
    x: &DiscreteConfig,
    params: &PotentialParams,
) -> Result<XyBoundsReport> {
    let (y, _) = solve_fractional(tree, x.k() as f64, params)?;
    let mut upper_margin = f64::INFINITY;
    let mut lower_margin = f64::INFINITY;
    for l in tree.leaves() {
        upper_margin = upper_margin.min(y.get(l) + 2.0 - params.epsilon - x.get(l) as f64);
        lower_margin = lower_margin.min(y.get(l) - params.epsilon);
    }
    Ok(XyBoundsReport {
        holds: upper_margin > -1e-6 && lower_margin > -1e-6,
        upper_margin,
        lower_margin,
    })
}

/// Outcome of a monotonicity probe on the fractional optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// False when the probe is skipped: the base point touches the boundary
    /// or the instance leaves the optimum no freedom to shift.
    pub applicable: bool,
    pub holds: bool,
    pub detail: String,
}

/// Recomputes the optimum after growing the edge above `leaf` by `step` and
/// verifies: the probed leaf's mass strictly decreases, every other leaf's
/// mass does not decrease (tolerance 1e-7), and the decrease rate respects
/// the closed-form bound (max φ′)/(d_leaf·min φ″) = (a+2bk)/(2b·d_leaf).
pub fn elongation_monotonicity_probe(
    tree: &RootedTree,
    leaf: NodeId,
    k: f64,
    step: f64,
    params: &PotentialParams,
) -> Result<ProbeReport> {
    let (y0, _) = solve_fractional(tree, k, params)?;
    let leaves = tree.leaves();
    if leaves.len() < 2 {
        return Ok(ProbeReport {
            applicable: false,
            holds: true,
            detail: "a lone leaf holds all mass at any length; probe skipped".into(),
        });
    }
    if leaves.iter().any(|&l| y0.get(l) <= 1e-7) {
        return Ok(ProbeReport {
            applicable: false,
            holds: true,
            detail: "base optimum touches the boundary; probe skipped".into(),
        });
    }
    let mut grown = tree.clone();
    grown.elongate_edge(leaf, step)?;
    let (y1, _) = solve_fractional(&grown, k, params)?;
    let mut holds = true;
    let mut detail = String::new();
    let before = y0.get(leaf);
    let after = y1.get(leaf);
    if !(after < before) {
        holds = false;
        detail.push_str(&format!("probed leaf mass did not decrease ({before} -> {after}); "));
    }
    for &l in &leaves {
        if l != leaf && y1.get(l) < y0.get(l) - 1e-7 {
            holds = false;
            detail.push_str(&format!(
                "leaf {l} mass decreased ({} -> {}); ",
                y0.get(l),
                y1.get(l)
            ));
        }
    }
    let slope = (after - before) / step;
    let bound = -(1.0 / tree.edge_len(leaf)?) * (params.a + 2.0 * params.b * k)
        / (2.0 * params.b)
        - 1e-3;
    if slope < bound {
        holds = false;
        detail.push_str(&format!("decrease rate {slope} breaches bound {bound}; "));
    }
    Ok(ProbeReport {
        applicable: true,
        holds,
        detail,
    })
}

/// Verifies that deleting `leaf` weakly increases the optimal mass of every
/// surviving leaf (tolerance 1e-7). Applies only when the deletion does not
/// create a new leaf (the parent keeps other children), which is always the
/// case on the simple trees the game maintains.
pub fn deletion_monotonicity_probe(
    tree: &RootedTree,
    leaf: NodeId,
    k: f64,
    params: &PotentialParams,
) -> Result<ProbeReport> {
    let parent = tree
        .parent(leaf)?
        .ok_or_else(|| Error::IllegalMove("cannot delete the root".into()))?;
    if tree.children(parent)?.len() < 2 {
        return Ok(ProbeReport {
            applicable: false,
            holds: true,
            detail: "deletion would turn the parent into a new leaf; probe skipped".into(),
        });
    }
    let (y0, _) = solve_fractional(tree, k, params)?;
    let mut pruned = tree.clone();
    pruned.remove_leaf(leaf)?;
    pruned.normalize_simple();
    if pruned.leaves().is_empty() {
        return Ok(ProbeReport {
            applicable: false,
            holds: true,
            detail: "no surviving leaf".into(),
        });
    }
    let (y1, _) = solve_fractional(&pruned, k, params)?;
    let mut holds = true;
    let mut detail = String::new();
    for l in pruned.leaves() {
        if y1.get(l) < y0.get(l) - 1e-7 {
            holds = false;
            detail.push_str(&format!(
                "surviving leaf {l} mass decreased ({} -> {}); ",
                y0.get(l),
                y1.get(l)
            ));
        }
    }
    Ok(ProbeReport {
        applicable: true,
        holds,
        detail,
    })
}

/// Outcome of inverting an ultrametric matrix and checking the sign pattern
/// of the inverse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseProbeReport {
    pub holds: bool,
    pub min_diag: f64,
    pub max_offdiag: f64,
    pub min_row_sum: f64,
}

/// Inverts the Hessian and asserts the inverse of a positive-definite
/// ultrametric matrix has nonnegative diagonal, nonpositive off-diagonal,
/// and nonnegative row sums (tolerance 1e-9).
pub fn ultrametric_inverse_probe(h: &UltrametricHessian) -> Result<InverseProbeReport> {
    let n = h.leaves.len();
    let m = DMatrix::from_fn(n, n, |i, j| h.matrix[i][j]);
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::SolverFailed("singular ultrametric matrix".into()))?;
    let mut min_diag = f64::INFINITY;
    let mut max_offdiag = f64::NEG_INFINITY;
    let mut min_row_sum = f64::INFINITY;
    for i in 0..n {
        min_diag = min_diag.min(inv[(i, i)]);
        let mut row = 0.0;
        for j in 0..n {
            row += inv[(i, j)];
            if i != j {
                max_offdiag = max_offdiag.max(inv[(i, j)]);
            }
        }
        min_row_sum = min_row_sum.min(row);
    }
    if n == 1 {
        max_offdiag = 0.0;
    }
    Ok(InverseProbeReport {
        holds: min_diag >= -1e-9 && max_offdiag <= 1e-9 && min_row_sum >= -1e-9,
        min_diag,
        max_offdiag,
        min_row_sum,
    })
}
