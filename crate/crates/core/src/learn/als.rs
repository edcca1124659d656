//! Alternating least squares over one tree tensor network.

use super::{mix_seed, Dataset, FitOptions};
use crate::error::{Error, Result};
use crate::network::{khatri_rao_rows, ModelSpec, TreeTensorNetwork};
use crate::tensor::DenseTensor;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, Default)]
pub struct FitDiagnostics {
    pub sweeps: usize,
    /// Empirical risk after each sweep.
    pub risk_history: Vec<f64>,
    /// Subproblems that fell back to the minimum-norm SVD solution.
    pub min_norm_fallbacks: usize,
    /// Final risk of every restart (cold starts only).
    pub restart_risks: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub net: TreeTensorNetwork,
    pub risk: f64,
    pub diagnostics: FitDiagnostics,
}

/// Minimize the empirical risk over the spec's parameter space by ALS,
/// keeping the best over `opts.restarts` initializations: the first is the
/// smooth all-ones network (the constant function), the rest draw entries
/// i.i.d. uniform on [-1, 1]. Deterministic given `opts.seed`.
///
/// The smooth start matters for one-hot (tensorized) features at high
/// resolution: a random rank-one product of many digit factors is a wild
/// sign pattern that block updates cannot unscramble, while refining the
/// constant function splits conditional means digit by digit.
pub fn fit_als(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    spec.check()?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let ws = Workspace::new(spec, data)?;
    let mut best: Option<FitResult> = None;
    let mut restart_risks = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let init = if restart == 0 {
            smooth_init(spec)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, restart as u64));
            TreeTensorNetwork::random(spec, &mut rng)?
        };
        let mut result = sweep_until_converged(init, &ws, opts, None)?;
        restart_risks.push(result.risk);
        let better = match &best {
            None => true,
            Some(b) => result.risk < b.risk,
        };
        if better {
            result.diagnostics.restart_risks = Vec::new();
            best = Some(result);
        }
    }
    let mut best = best.expect("at least one restart");
    best.diagnostics.restart_risks = restart_risks;
    Ok(best)
}

/// All-ones network, each node normalized to unit Frobenius norm; evaluates
/// to a constant function on one-hot features.
fn smooth_init(spec: &ModelSpec) -> Result<TreeTensorNetwork> {
    let leaf_dims = spec.leaf_dims();
    let mut params = Vec::with_capacity(spec.tree.node_count());
    for node in 0..spec.tree.node_count() {
        let shape = spec.node_shape(node);
        let mut t = DenseTensor::from_fn(shape, |_| 1.0);
        if let Some(patterns) = &spec.sparsity {
            if let Some(p) = &patterns[node] {
                p.project(&mut t);
            }
        }
        let f = t.frobenius();
        if f > 0.0 {
            t = t.scaled(1.0 / f);
        }
        params.push(t);
    }
    TreeTensorNetwork::new(
        spec.tree.clone(),
        spec.ranks.clone(),
        leaf_dims,
        params,
        spec.sparsity.clone(),
    )
}

/// Warm-started ALS from an existing network of the same spec. When
/// `first_node` is given, that node is solved before the first sweep, which
/// makes the refit risk at most the risk of the warm start with that node's
/// freshly padded entries zeroed.
pub fn refine_als(
    net: TreeTensorNetwork,
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
    first_node: Option<usize>,
) -> Result<FitResult> {
    let ws = Workspace::new(spec, data)?;
    sweep_until_converged(net, &ws, opts, first_node)
}

/// Precomputed per-fit quantities shared by every node solve.
pub(super) struct Workspace<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    /// Per-variable feature matrices (n x N_var).
    feats: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    y_sq: f64,
}

impl<'a> Workspace<'a> {
    pub(super) fn new(spec: &'a ModelSpec, data: &'a Dataset) -> Result<Self> {
        let feats = spec.feature.eval_all_batch(&data.inputs)?;
        let y = DVector::from_column_slice(&data.outputs);
        let y_sq = y.dot(&y);
        Ok(Workspace {
            spec,
            data,
            feats,
            y,
            y_sq,
        })
    }

    fn phi(&self, leaf: usize) -> &DMatrix<f64> {
        &self.feats[self.spec.tree.leaf_var(leaf) - 1]
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    /// Bottom-up per-node value matrices (n x r) for the current parameters.
    fn bottom_up(&self, net: &TreeTensorNetwork) -> Vec<DMatrix<f64>> {
        let tree = net.tree();
        let mut g: Vec<Option<DMatrix<f64>>> = vec![None; tree.node_count()];
        for &node in tree.bfs_order().iter().rev() {
            let v = net.param(node);
            let out = if tree.is_leaf(node) {
                let vmat = v.matricize(&[0]).expect("leaf matricize");
                self.phi(node) * vmat.transpose()
            } else {
                let factors: Vec<&DMatrix<f64>> = tree
                    .children(node)
                    .iter()
                    .map(|&c| g[c].as_ref().unwrap())
                    .collect();
                let h = khatri_rao_rows(&factors);
                let vmat = v.matricize(&[0]).expect("interior matricize");
                h * vmat.transpose()
            };
            g[node] = Some(out);
        }
        g.into_iter().map(|m| m.unwrap()).collect()
    }

    /// Environment matrix (n x r_node): the contraction of everything outside
    /// the subtree of `node`, walked top-down along the root path.
    fn environment(
        &self,
        net: &TreeTensorNetwork,
        g: &[DMatrix<f64>],
        node: usize,
    ) -> DMatrix<f64> {
        let tree = net.tree();
        let mut env = DMatrix::from_element(self.n(), 1, 1.0);
        let path = tree.path_from_root(node);
        for w in path.windows(2) {
            let (cur, next) = (w[0], w[1]);
            let children = tree.children(cur);
            let slot = children.iter().position(|&c| c == next).unwrap() + 1;
            let mut factors: Vec<&DMatrix<f64>> = vec![&env];
            for (s, &c) in children.iter().enumerate() {
                if s + 1 != slot {
                    factors.push(&g[c]);
                }
            }
            let h = khatri_rao_rows(&factors);
            let m = net.param(cur).matricize(&[slot]).expect("env matricize");
            env = h * m.transpose();
        }
        env
    }

    /// Design matrix of the linear subproblem at `node`: row i holds the
    /// gradient of f(x_i) with respect to the node's (row-major) entries.
    fn design(&self, net: &TreeTensorNetwork, g: &[DMatrix<f64>], node: usize) -> DMatrix<f64> {
        let tree = net.tree();
        let env = self.environment(net, g, node);
        let mut factors: Vec<&DMatrix<f64>> = vec![&env];
        if tree.is_leaf(node) {
            factors.push(self.phi(node));
        } else {
            for &c in tree.children(node) {
                factors.push(&g[c]);
            }
        }
        khatri_rao_rows(&factors)
    }

    /// Re-solve the tensor at `node`. Returns the updated network and its
    /// empirical risk; the block update is kept only when it does not
    /// increase the risk, so sweeps are monotone.
    pub(super) fn solve_node(
        &self,
        net: TreeTensorNetwork,
        node: usize,
        opts: &FitOptions,
        fallbacks: &mut usize,
    ) -> Result<(TreeTensorNetwork, f64)> {
        let sparse_pattern = net
            .sparsity()
            .and_then(|p| p[node].clone());
        // Orthogonalization re-parametrizes the other nodes and would destroy
        // their sparsity patterns, so sparse networks solve in place.
        let net = if net.sparsity().is_some() {
            net
        } else {
            net.orthogonalize_at(node)?
        };
        let g = self.bottom_up(&net);
        let a = self.design(&net, &g, node);
        let n = self.n() as f64;

        // Active columns: all of them, or the sparsity pattern's.
        let active: Vec<usize> = match &sparse_pattern {
            Some(p) => p.flat_indices().to_vec(),
            None => (0..a.ncols()).collect(),
        };
        let p = active.len();
        let a_act = if sparse_pattern.is_some() {
            let mut m = DMatrix::zeros(a.nrows(), p);
            for (k, &c) in active.iter().enumerate() {
                m.set_column(k, &a.column(c));
            }
            m
        } else {
            a
        };

        let h = a_act.transpose() * &a_act;
        let b = a_act.transpose() * &self.y;
        let trace_scale = h.diagonal().sum() / p as f64;
        let ridge = opts.ridge * trace_scale.max(f64::MIN_POSITIVE);
        let mut h_reg = h.clone();
        for i in 0..p {
            h_reg[(i, i)] += ridge;
        }
        let w_new = match Cholesky::new(h_reg) {
            Some(chol) => chol.solve(&b),
            None => {
                *fallbacks += 1;
                min_norm_solve(&h, &b)
            }
        };

        // Current block value in the same coordinates.
        let old_values = net.param(node).values();
        let w_old = DVector::from_iterator(p, active.iter().map(|&c| old_values[c]));

        let risk_of = |w: &DVector<f64>| -> f64 {
            let hw = &h * w;
            (self.y_sq - 2.0 * w.dot(&b) + w.dot(&hw)).max(0.0) / n
        };
        let (w_best, risk) = {
            let rn = risk_of(&w_new);
            let ro = risk_of(&w_old);
            if rn <= ro {
                (w_new, rn)
            } else {
                (w_old, ro)
            }
        };

        let shape = net.param(node).shape().to_vec();
        let mut values = vec![0.0; shape.iter().product()];
        for (k, &c) in active.iter().enumerate() {
            values[c] = w_best[k];
        }
        let tensor = DenseTensor::new(shape, values)?;
        Ok((net.with_param(node, tensor)?, risk))
    }
}

/// Minimum-norm solution of `H w = b` through the pseudo-inverse.
fn min_norm_solve(h: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = h.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.iter().cloned().fold(0.0, f64::max).max(1e-300);
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(h.ncols()))
}

fn sweep_until_converged(
    mut net: TreeTensorNetwork,
    ws: &Workspace,
    opts: &FitOptions,
    first_node: Option<usize>,
) -> Result<FitResult> {
    let mut diagnostics = FitDiagnostics::default();
    let mut fallbacks = 0usize;
    let order = net.tree().bfs_order();
    let mut risk = super::empirical_risk(&net, &ws.spec.feature, ws.data)?;

    if let Some(node) = first_node {
        let (n2, r2) = ws.solve_node(net, node, opts, &mut fallbacks)?;
        net = n2;
        risk = r2;
    }

    for sweep in 0..opts.max_sweeps {
        let prev = risk;
        for &node in &order {
            let (n2, r2) = ws.solve_node(net, node, opts, &mut fallbacks)?;
            net = n2;
            risk = r2;
        }
        diagnostics.sweeps = sweep + 1;
        diagnostics.risk_history.push(risk);
        if prev - risk <= opts.rel_tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    diagnostics.min_norm_fallbacks = fallbacks;
    Ok(FitResult {
        net,
        risk,
        diagnostics,
    })
}

/// Grow the rank at `node` by one, padding the new slices of the node tensor
/// and of its parent's matching mode with small seeded entries so the new
/// channel can activate during the next sweeps.
pub fn increment_rank(
    net: &TreeTensorNetwork,
    node: usize,
    seed: u64,
) -> Result<TreeTensorNetwork> {
    let tree = net.tree().clone();
    if node == tree.root() {
        return Err(Error::Unsupported("root rank is fixed to 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = net.ranks().to_vec();
    ranks[node] += 1;

    let parent = tree.parent(node).unwrap();
    let slot = tree
        .children(parent)
        .iter()
        .position(|&c| c == node)
        .unwrap()
        + 1;

    let mut params: Vec<DenseTensor> = Vec::with_capacity(tree.node_count());
    for i in 0..tree.node_count() {
        let old = net.param(i);
        if i == node {
            params.push(pad_mode(old, 0, &mut rng));
        } else if i == parent {
            params.push(pad_mode(old, slot, &mut rng));
        } else {
            params.push(old.clone());
        }
    }
    TreeTensorNetwork::new(tree, ranks, net.leaf_dims().to_vec(), params, None)
}

/// Extend one mode by a slice of small random entries (1e-2 of the tensor's
/// RMS entry, or 1e-2 absolute for a zero tensor).
fn pad_mode(t: &DenseTensor, mode: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    use rand::Rng;
    let rms = {
        let f = t.frobenius();
        if f > 0.0 {
            f / (t.len() as f64).sqrt()
        } else {
            1.0
        }
    };
    let eps = 1e-2 * rms;
    let mut shape = t.shape().to_vec();
    let old = shape[mode];
    shape[mode] += 1;
    let out = DenseTensor::from_fn(shape, |idx| {
        if idx[mode] < old {
            t.get(idx)
        } else {
            eps * rng.gen_range(-1.0..1.0)
        }
    });
    out
}
