//! Tree tensor networks: evaluation, complexity, normalization,
//! orthogonalization, entropy-bound utilities, and serialization.
//!
//! A network assigns one parameter tensor per tree node. An interior node
//! `alpha` with children `beta_1, ..., beta_k` carries a tensor of shape
//! `[r_alpha, r_beta_1, ..., r_beta_k]`; a leaf carries `[r_alpha, N_alpha]`.
//! The root rank is fixed to 1, so the network evaluates to a scalar-valued
//! function through the bottom-up recursion: leaves map features through
//! their matrices, interior nodes apply their multilinear maps to the
//! children's outputs, and the root contraction produces `f(x)`.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::{DenseTensor, PNorm, SparsityPattern};
use crate::tree::DimensionTree;
use nalgebra::DMatrix;
use rand::Rng;

/// Model class descriptor: tree, ranks, feature space, optional sparsity
/// patterns, and the parameter-ball radius `R >= 1`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub tree: DimensionTree,
    /// Rank per node id; the root entry must be 1.
    pub ranks: Vec<usize>,
    pub feature: FeatureMap,
    pub sparsity: Option<Vec<Option<SparsityPattern>>>,
    pub radius: f64,
}

impl ModelSpec {
    pub fn new(tree: DimensionTree, ranks: Vec<usize>, feature: FeatureMap) -> Result<Self> {
        let spec = ModelSpec {
            tree,
            ranks,
            feature,
            sparsity: None,
            radius: 1.0,
        };
        spec.check()?;
        Ok(spec)
    }

    /// All-ranks-one spec on the given tree.
    pub fn rank_one(tree: DimensionTree, feature: FeatureMap) -> Result<Self> {
        let ranks = vec![1; tree.node_count()];
        ModelSpec::new(tree, ranks, feature)
    }

    pub fn check(&self) -> Result<()> {
        if self.ranks.len() != self.tree.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} ranks for {} nodes",
                self.ranks.len(),
                self.tree.node_count()
            )));
        }
        if self.ranks[self.tree.root()] != 1 {
            return Err(Error::ShapeMismatch("root rank must be 1".into()));
        }
        if self.ranks.iter().any(|&r| r == 0) {
            return Err(Error::ShapeMismatch("ranks must be positive".into()));
        }
        if self.feature.var_count() != self.tree.dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature map has {} variables, tree has {}",
                self.feature.var_count(),
                self.tree.dim()
            )));
        }
        if self.radius < 1.0 {
            return Err(Error::Domain("radius must be >= 1".into()));
        }
        Ok(())
    }

    /// Shape of the parameter tensor at `node`.
    pub fn node_shape(&self, node: usize) -> Vec<usize> {
        node_shape(&self.tree, &self.ranks, &self.leaf_dims(), node)
    }

    /// Per-node feature dimensions, indexed by node id (0 for interior).
    pub fn leaf_dims(&self) -> Vec<usize> {
        leaf_dims_from_features(&self.tree, &self.feature)
    }

    /// Representation complexity of the spec: number of parameters for full
    /// networks, number of admissible entries for sparse ones.
    pub fn complexity(&self) -> usize {
        match &self.sparsity {
            None => full_complexity(&self.tree, &self.ranks, &self.leaf_dims()),
            Some(patterns) => sparse_complexity(&self.tree, &self.ranks, &self.leaf_dims(), patterns),
        }
    }
}

fn leaf_dims_from_features(tree: &DimensionTree, feature: &FeatureMap) -> Vec<usize> {
    let mut dims = vec![0usize; tree.node_count()];
    for leaf in tree.leaves() {
        dims[leaf] = feature.var_dim(tree.leaf_var(leaf) - 1);
    }
    dims
}

fn node_shape(tree: &DimensionTree, ranks: &[usize], leaf_dims: &[usize], node: usize) -> Vec<usize> {
    if tree.is_leaf(node) {
        vec![ranks[node], leaf_dims[node]]
    } else {
        let mut shape = Vec::with_capacity(1 + tree.children(node).len());
        shape.push(ranks[node]);
        for &c in tree.children(node) {
            shape.push(ranks[c]);
        }
        shape
    }
}

/// Number of parameters `sum_interior r_a prod r_b + sum_leaf r_a N_a`.
pub fn full_complexity(tree: &DimensionTree, ranks: &[usize], leaf_dims: &[usize]) -> usize {
    let mut total = 0usize;
    for node in 0..tree.node_count() {
        total += node_shape(tree, ranks, leaf_dims, node).iter().product::<usize>();
    }
    total
}

/// Number of admissible entries `sum |Lambda^a|`; nodes without a pattern
/// count all their entries.
pub fn sparse_complexity(
    tree: &DimensionTree,
    ranks: &[usize],
    leaf_dims: &[usize],
    patterns: &[Option<SparsityPattern>],
) -> usize {
    let mut total = 0usize;
    for node in 0..tree.node_count() {
        let dense: usize = node_shape(tree, ranks, leaf_dims, node).iter().product();
        total += match &patterns[node] {
            Some(p) => p.cardinality().min(dense),
            None => dense,
        };
    }
    total
}

/// Metric-entropy bound `C * log(3 R |T| / eps)` of the radius-`R` model
/// class, using the continuity constant bound `L <= 1`.
pub fn entropy_bound(complexity: usize, eps: f64, radius: f64, tree_size: usize) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Domain("eps must be positive".into()));
    }
    if radius < 1.0 || complexity == 0 || tree_size == 0 {
        return Err(Error::Domain("need R >= 1, C >= 1, |T| >= 1".into()));
    }
    Ok(complexity as f64 * (3.0 * radius * tree_size as f64 / eps).ln())
}

/// A parametrized tree tensor network. Immutable; operations return new
/// networks, so a fitted network can be evaluated from many threads.
#[derive(Clone, Debug)]
pub struct TreeTensorNetwork {
    tree: DimensionTree,
    ranks: Vec<usize>,
    leaf_dims: Vec<usize>,
    params: Vec<DenseTensor>,
    sparsity: Option<Vec<Option<SparsityPattern>>>,
}

/// Result of [`TreeTensorNetwork::normalize`].
#[derive(Clone, Debug)]
pub struct Normalized {
    /// `scale * unit_net` equals the original network as a function.
    pub scale: f64,
    pub unit_net: TreeTensorNetwork,
    /// Set when some node tensor was zero; `scale` is 0 and the unit network
    /// is the zero function.
    pub degenerate: bool,
}

impl TreeTensorNetwork {
    pub fn new(
        tree: DimensionTree,
        ranks: Vec<usize>,
        leaf_dims: Vec<usize>,
        params: Vec<DenseTensor>,
        sparsity: Option<Vec<Option<SparsityPattern>>>,
    ) -> Result<Self> {
        if ranks.len() != tree.node_count()
            || params.len() != tree.node_count()
            || leaf_dims.len() != tree.node_count()
        {
            return Err(Error::ShapeMismatch(
                "ranks, leaf_dims and params must cover every node".into(),
            ));
        }
        if ranks[tree.root()] != 1 {
            return Err(Error::ShapeMismatch("root rank must be 1".into()));
        }
        for node in 0..tree.node_count() {
            let expected = node_shape(&tree, &ranks, &leaf_dims, node);
            if params[node].shape() != expected.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "node {:?}: tensor shape {:?}, expected {:?}",
                    tree.vars(node),
                    params[node].shape(),
                    expected
                )));
            }
        }
        if let Some(patterns) = &sparsity {
            if patterns.len() != tree.node_count() {
                return Err(Error::ShapeMismatch("one pattern slot per node".into()));
            }
            for node in 0..tree.node_count() {
                if let Some(p) = &patterns[node] {
                    if p.shape() != params[node].shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "sparsity pattern shape mismatch at node {:?}",
                            tree.vars(node)
                        )));
                    }
                    for (flat, &v) in params[node].values().iter().enumerate() {
                        if v != 0.0 && !p.contains_flat(flat) {
                            return Err(Error::ShapeMismatch(format!(
                                "non-zero entry outside sparsity pattern at node {:?}",
                                tree.vars(node)
                            )));
                        }
                    }
                }
            }
        }
        Ok(TreeTensorNetwork {
            tree,
            ranks,
            leaf_dims,
            params,
            sparsity,
        })
    }

    /// Network with i.i.d. uniform `[-1, 1]` entries, each node rescaled to
    /// unit Frobenius norm.
    pub fn random(spec: &ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        let leaf_dims = spec.leaf_dims();
        let mut params = Vec::with_capacity(spec.tree.node_count());
        for node in 0..spec.tree.node_count() {
            let shape = node_shape(&spec.tree, &spec.ranks, &leaf_dims, node);
            let mut t = DenseTensor::random_uniform(shape, rng);
            if let Some(patterns) = &spec.sparsity {
                if let Some(p) = &patterns[node] {
                    p.project(&mut t);
                }
            }
            let f = t.frobenius();
            let t = if f > 0.0 { t.scaled(1.0 / f) } else { t };
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

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn leaf_dims(&self) -> &[usize] {
        &self.leaf_dims
    }

    pub fn params(&self) -> &[DenseTensor] {
        &self.params
    }

    pub fn param(&self, node: usize) -> &DenseTensor {
        &self.params[node]
    }

    pub fn sparsity(&self) -> Option<&[Option<SparsityPattern>]> {
        self.sparsity.as_deref()
    }

    /// Replace the tensor at `node`, projecting onto the node's sparsity
    /// pattern when one is present.
    pub fn with_param(&self, node: usize, mut tensor: DenseTensor) -> Result<Self> {
        let expected = node_shape(&self.tree, &self.ranks, &self.leaf_dims, node);
        if tensor.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "node {:?}: tensor shape {:?}, expected {:?}",
                self.tree.vars(node),
                tensor.shape(),
                expected
            )));
        }
        if let Some(patterns) = &self.sparsity {
            if let Some(p) = &patterns[node] {
                p.project(&mut tensor);
            }
        }
        let mut params = self.params.clone();
        params[node] = tensor;
        Ok(TreeTensorNetwork {
            tree: self.tree.clone(),
            ranks: self.ranks.clone(),
            leaf_dims: self.leaf_dims.clone(),
            params,
            sparsity: self.sparsity.clone(),
        })
    }

    /// Representation complexity of this network (sparse when patterns are
    /// attached, full otherwise).
    pub fn complexity(&self) -> usize {
        match &self.sparsity {
            None => full_complexity(&self.tree, &self.ranks, &self.leaf_dims),
            Some(p) => sparse_complexity(&self.tree, &self.ranks, &self.leaf_dims, p),
        }
    }

    /// Evaluate `f(x)` bottom-up; cost is linear in the total parameter count.
    pub fn eval(&self, fm: &FeatureMap, x: &[f64]) -> Result<f64> {
        let feats = fm.eval_all(x)?;
        self.eval_with_features(&feats)
    }

    /// Evaluate from precomputed per-variable feature vectors.
    pub fn eval_with_features(&self, feats: &[Vec<f64>]) -> Result<f64> {
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.tree.node_count()];
        // Children precede parents nowhere in BFS order, so walk it reversed.
        for &node in self.tree.bfs_order().iter().rev() {
            let v = &self.params[node];
            let out = if self.tree.is_leaf(node) {
                let var = self.tree.leaf_var(node) - 1;
                let phi = &feats[var];
                if phi.len() != self.leaf_dims[node] {
                    return Err(Error::ShapeMismatch(format!(
                        "feature dim {} vs leaf dim {} at variable {}",
                        phi.len(),
                        self.leaf_dims[node],
                        var + 1
                    )));
                }
                v.contract_mode(1, phi)?
            } else {
                let children = self.tree.children(node);
                let mut acc = v.clone();
                for (slot, &c) in children.iter().enumerate().rev() {
                    let gc = g[c].as_ref().expect("child evaluated");
                    acc = acc.contract_mode(slot + 1, gc)?;
                }
                acc
            };
            g[node] = Some(out.values().to_vec());
        }
        let root = g[self.tree.root()].take().expect("root evaluated");
        Ok(root[0])
    }

    /// Evaluate many points, reusing per-leaf feature matrices across points
    /// and batching node contractions as matrix products.
    pub fn eval_batch(&self, fm: &FeatureMap, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let feats = fm.eval_all_batch(xs)?;
        self.eval_batch_with_features(&feats)
    }

    /// Batched evaluation from precomputed per-variable feature matrices
    /// (rows are points); the matrices can be shared across networks over the
    /// same feature map.
    pub fn eval_batch_with_features(&self, feats: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        if feats.len() != self.tree.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature matrices for {} variables",
                feats.len(),
                self.tree.dim()
            )));
        }
        let n = feats[0].nrows();
        // g[node]: n x r_node matrix of bottom-up values.
        let mut g: Vec<Option<DMatrix<f64>>> = vec![None; self.tree.node_count()];
        for &node in self.tree.bfs_order().iter().rev() {
            let v = &self.params[node];
            let out = if self.tree.is_leaf(node) {
                let var = self.tree.leaf_var(node) - 1;
                let phi = &feats[var];
                if phi.ncols() != self.leaf_dims[node] || phi.nrows() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "feature matrix {}x{} at variable {}, leaf dim {}",
                        phi.nrows(),
                        phi.ncols(),
                        var + 1,
                        self.leaf_dims[node]
                    )));
                }
                let vmat = v.matricize(&[0])?; // r x N
                phi * vmat.transpose()
            } else {
                let children = self.tree.children(node);
                let factors: Vec<&DMatrix<f64>> = children
                    .iter()
                    .map(|&c| g[c].as_ref().expect("child evaluated"))
                    .collect();
                let h = khatri_rao_rows(&factors); // n x prod(r_c)
                let vmat = v.matricize(&[0])?; // r x prod(r_c), columns row-major
                h * vmat.transpose()
            };
            g[node] = Some(out);
        }
        let root = g[self.tree.root()].take().expect("root evaluated");
        Ok((0..n).map(|i| root[(i, 0)]).collect())
    }

    /// Rescale every node to `||v||_{P} <= 1` using guaranteed norm upper
    /// bounds (Frobenius dominates the multilinear 2-norm), returning the
    /// accumulated scale so that `scale * unit_net = net` as functions.
    pub fn normalize(&self) -> Normalized {
        let mut scale = 1.0f64;
        let mut params = Vec::with_capacity(self.params.len());
        let mut degenerate = false;
        for t in &self.params {
            let bound = t.norm_upper_bound(PNorm::Two).unwrap_or_else(|_| t.frobenius());
            if bound == 0.0 {
                degenerate = true;
                params.push(t.clone());
                continue;
            }
            scale *= bound;
            params.push(t.scaled(1.0 / bound));
        }
        if degenerate {
            scale = 0.0;
        }
        Normalized {
            scale,
            unit_net: TreeTensorNetwork {
                tree: self.tree.clone(),
                ranks: self.ranks.clone(),
                leaf_dims: self.leaf_dims.clone(),
                params,
                sparsity: self.sparsity.clone(),
            },
            degenerate,
        }
    }

    /// Return an equivalent network in which every tensor except the one at
    /// `node` is orthonormal in its matricization toward `node`. The
    /// least-squares subproblem at `node` then acts on well-conditioned
    /// features.
    ///
    /// Rank caps keep every matricization at least as tall as it is wide, so
    /// a thin Householder QR always yields orthonormal columns; rank-deficient
    /// tensors come back padded with orthonormal complements by the same QR.
    pub fn orthogonalize_at(&self, node: usize) -> Result<Self> {
        if self.sparsity.is_some() {
            return Err(Error::Unsupported(
                "orthogonalization does not preserve sparsity patterns".into(),
            ));
        }
        let mut params = self.params.clone();
        let tree = &self.tree;

        // Pass 1: leaves-to-root, make every non-root node parent-orthonormal,
        // absorbing the triangular factor into its parent.
        let order = tree.bfs_order();
        for &beta in order.iter().rev() {
            if beta == tree.root() {
                continue;
            }
            let parent = tree.parent(beta).expect("non-root has parent");
            let t = &params[beta];
            let other_modes: Vec<usize> = (1..t.order()).collect();
            let m = t.matricize(&other_modes)?; // rows: non-parent modes, cols: r_beta
            let (q, r) = padded_qr(&m);
            params[beta] =
                DenseTensor::from_matricization(t.shape().to_vec(), &other_modes, &q)?;
            // Contract the parent's beta-slot with R over the old index:
            // new_parent[..., k', ...] = sum_k parent[..., k, ...] R[k', k].
            let slot = tree
                .children(parent)
                .iter()
                .position(|&c| c == beta)
                .expect("child slot")
                + 1;
            params[parent] = contract_slot_with_matrix(&params[parent], slot, &r)?;
        }

        // Pass 2: move the core from the root down to `node`.
        let path = tree.path_from_root(node);
        for w in path.windows(2) {
            let (cur, next) = (w[0], w[1]);
            let slot = tree
                .children(cur)
                .iter()
                .position(|&c| c == next)
                .expect("path child")
                + 1;
            let t = &params[cur];
            let other_modes: Vec<usize> =
                (0..t.order()).filter(|&m| m != slot).collect();
            let m = t.matricize(&other_modes)?; // cols indexed by the next-slot
            let (q, r) = padded_qr(&m);
            params[cur] = DenseTensor::from_matricization(t.shape().to_vec(), &other_modes, &q)?;
            // Absorb R into the next node's parent mode (mode 0).
            params[next] = contract_slot_with_matrix(&params[next], 0, &r)?;
        }

        TreeTensorNetwork::new(
            tree.clone(),
            self.ranks.clone(),
            self.leaf_dims.clone(),
            params,
            None,
        )
    }

    /// Scale the tensor at one node; by multilinearity this scales the whole
    /// function.
    pub fn scale_node(&self, node: usize, c: f64) -> Self {
        let mut params = self.params.clone();
        params[node] = params[node].scaled(c);
        TreeTensorNetwork {
            tree: self.tree.clone(),
            ranks: self.ranks.clone(),
            leaf_dims: self.leaf_dims.clone(),
            params,
            sparsity: self.sparsity.clone(),
        }
    }
}

/// QR factorization `m = q * r` with `q` the same shape as `m` and `r`
/// square. When `m` is wider than tall (a structurally rank-deficient
/// matricization), `q` gets zero columns and `r` zero rows beyond the row
/// count, so the product is exact and the non-zero columns stay orthonormal.
fn padded_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = (m.nrows(), m.ncols());
    let qr = m.clone().qr();
    let q = qr.q(); // rows x min(rows, cols)
    let r = qr.r(); // min(rows, cols) x cols
    if rows >= cols {
        (q, r)
    } else {
        let mut q_pad = DMatrix::zeros(rows, cols);
        q_pad.view_mut((0, 0), (rows, rows)).copy_from(&q);
        let mut r_pad = DMatrix::zeros(cols, cols);
        r_pad.view_mut((0, 0), (rows, cols)).copy_from(&r);
        (q_pad, r_pad)
    }
}

/// Row-wise Khatri-Rao product: `H[i, (j_1,...,j_k)] = prod_c F_c[i, j_c]`
/// with the column multi-index in row-major order over the factors.
pub(crate) fn khatri_rao_rows(factors: &[&DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!factors.is_empty());
    let n = factors[0].nrows();
    let mut h = DMatrix::from_element(n, 1, 1.0);
    for f in factors {
        debug_assert_eq!(f.nrows(), n);
        let w = h.ncols();
        let fw = f.ncols();
        let mut next = DMatrix::zeros(n, w * fw);
        for j in 0..w {
            for jc in 0..fw {
                let col = j * fw + jc;
                for i in 0..n {
                    next[(i, col)] = h[(i, j)] * f[(i, jc)];
                }
            }
        }
        h = next;
    }
    h
}

/// `out[..., k', ...] = sum_k t[..., k, ...] m[k', k]` on the given mode.
fn contract_slot_with_matrix(t: &DenseTensor, mode: usize, m: &DMatrix<f64>) -> Result<DenseTensor> {
    let old = t.shape()[mode];
    if m.ncols() != old {
        return Err(Error::ShapeMismatch(format!(
            "matrix {}x{} against mode of size {}",
            m.nrows(),
            m.ncols(),
            old
        )));
    }
    let mut new_shape = t.shape().to_vec();
    new_shape[mode] = m.nrows();
    let inner: usize = t.shape()[mode + 1..].iter().product();
    let outer: usize = t.shape()[..mode].iter().product();
    let mut out = DenseTensor::zeros(new_shape);
    let src = t.values();
    let dst = out.values_mut();
    for o in 0..outer {
        for kp in 0..m.nrows() {
            let dst_row = (o * m.nrows() + kp) * inner;
            for k in 0..old {
                let w = m[(kp, k)];
                if w == 0.0 {
                    continue;
                }
                let src_row = (o * old + k) * inner;
                for i in 0..inner {
                    dst[dst_row + i] += src[src_row + i] * w;
                }
            }
        }
    }
    Ok(out)
}

/// Can the rank at `node` grow by one without crossing its representability
/// bound? The rank is capped by the dimension of the node's own matricization
/// side (product of child ranks, or the leaf feature dimension), by the
/// complementary feature dimension (product of the feature dimensions of the
/// variables outside the node), and by `extra_cap` (typically the sample
/// size).
pub fn rank_increment_allowed(
    tree: &DimensionTree,
    ranks: &[usize],
    leaf_dims: &[usize],
    node: usize,
    extra_cap: usize,
) -> bool {
    if node == tree.root() {
        return false;
    }
    let own_side: usize = if tree.is_leaf(node) {
        leaf_dims[node]
    } else {
        tree.children(node)
            .iter()
            .map(|&c| ranks[c])
            .fold(1usize, usize::saturating_mul)
    };
    let mut complement: usize = 1;
    for leaf in tree.leaves() {
        if !tree.vars(node).contains(&tree.leaf_var(leaf)) {
            complement = complement.saturating_mul(leaf_dims[leaf]);
        }
    }
    ranks[node] + 1 <= own_side.min(complement).min(extra_cap)
}

// ---------------------------------------------------------------------------
// Serialization: a small container with a JSON header (tree nested-list,
// ranks, leaf dims, node shapes) followed by little-endian f64 payloads.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"TTN1";

impl TreeTensorNetwork {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let header = serde_json::json!({
            "tree": self.tree.to_nested(),
            "ranks": self.ranks,
            "leaf_dims": self.leaf_dims,
            "shapes": self.params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>(),
        });
        let header = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for p in &self.params {
            for v in p.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let buf = std::fs::read(path)?;
        if buf.len() < 8 || &buf[..4] != MAGIC {
            return Err(Error::Parse("not a network container".into()));
        }
        let hlen = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        if buf.len() < 8 + hlen {
            return Err(Error::Parse("truncated header".into()));
        }
        let header: serde_json::Value =
            serde_json::from_slice(&buf[8..8 + hlen]).map_err(|e| Error::Parse(e.to_string()))?;
        let tree = DimensionTree::from_nested(
            header["tree"]
                .as_str()
                .ok_or_else(|| Error::Parse("missing tree".into()))?,
        )?;
        let ranks: Vec<usize> = serde_json::from_value(header["ranks"].clone())
            .map_err(|e| Error::Parse(e.to_string()))?;
        let leaf_dims: Vec<usize> = serde_json::from_value(header["leaf_dims"].clone())
            .map_err(|e| Error::Parse(e.to_string()))?;
        let shapes: Vec<Vec<usize>> = serde_json::from_value(header["shapes"].clone())
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut off = 8 + hlen;
        let mut params = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let len: usize = shape.iter().product();
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                if off + 8 > buf.len() {
                    return Err(Error::Parse("truncated payload".into()));
                }
                values.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
                off += 8;
            }
            params.push(DenseTensor::new(shape, values)?);
        }
        TreeTensorNetwork::new(tree, ranks, leaf_dims, params, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::VariableBasis;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn legendre_map(d: usize, n: usize) -> FeatureMap {
        FeatureMap::plain((0..d).map(|_| VariableBasis::legendre01(n)).collect())
    }

    /// Random spec with cap-respecting ranks built by valid increments.
    fn random_spec(tree: DimensionTree, fm: FeatureMap, increments: usize, seed: u64) -> ModelSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = ModelSpec::rank_one(tree, fm).unwrap();
        let leaf_dims = spec.leaf_dims();
        let count = spec.tree.node_count();
        for _ in 0..increments {
            let node = rng.gen_range(0..count);
            if rank_increment_allowed(&spec.tree, &spec.ranks, &leaf_dims, node, usize::MAX)
                && spec.ranks[node] < 3
            {
                spec.ranks[node] += 1;
            }
        }
        spec
    }

    fn random_net(spec: &ModelSpec, seed: u64) -> TreeTensorNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TreeTensorNetwork::random(spec, &mut rng).unwrap()
    }

    /// Independent oracle: assemble the full coefficient tensor of the
    /// expansion f(x) = sum_i a_i phi_i(x) by brute force, then evaluate it.
    fn coefficient_tensor(net: &TreeTensorNetwork, node: usize) -> DenseTensor {
        let tree = net.tree();
        if tree.is_leaf(node) {
            return net.param(node).clone();
        }
        let children: Vec<usize> = tree.children(node).to_vec();
        let child_coeffs: Vec<DenseTensor> =
            children.iter().map(|&c| coefficient_tensor(net, c)).collect();
        // Output modes: [r_node, features of vars(node) in ascending order].
        let vars = tree.vars(node).to_vec();
        let mut shape = vec![net.ranks()[node]];
        let mut var_dims = std::collections::BTreeMap::new();
        for (&c, cc) in children.iter().zip(&child_coeffs) {
            for (&v, &s) in tree.vars(c).iter().zip(&cc.shape()[1..]) {
                var_dims.insert(v, s);
            }
        }
        for v in &vars {
            shape.push(var_dims[v]);
        }
        let v_t = net.param(node);
        let mut out = DenseTensor::zeros(shape.clone());
        // Walk every output index; sum over all child-rank tuples.
        let out_len = out.len();
        let out_shape = shape;
        let rank_shapes: Vec<usize> = children.iter().map(|&c| net.ranks()[c]).collect();
        let tuple_count: usize = rank_shapes.iter().product();
        for flat in 0..out_len {
            // decode output index
            let mut rem = flat;
            let mut idx = vec![0usize; out_shape.len()];
            for m in (0..out_shape.len()).rev() {
                idx[m] = rem % out_shape[m];
                rem /= out_shape[m];
            }
            let k = idx[0];
            let mut total = 0.0;
            for t in 0..tuple_count {
                let mut rem_t = t;
                let mut ks = vec![0usize; children.len()];
                for c in (0..children.len()).rev() {
                    ks[c] = rem_t % rank_shapes[c];
                    rem_t /= rank_shapes[c];
                }
                let mut vidx = vec![k];
                vidx.extend_from_slice(&ks);
                let mut prod = v_t.get(&vidx);
                if prod == 0.0 {
                    continue;
                }
                for (ci, (&c, cc)) in children.iter().zip(&child_coeffs).enumerate() {
                    let mut cidx = vec![ks[ci]];
                    for v in tree.vars(c) {
                        let pos = vars.iter().position(|w| w == v).unwrap();
                        cidx.push(idx[1 + pos]);
                    }
                    prod *= cc.get(&cidx);
                }
                total += prod;
            }
            out.values_mut()[flat] = total;
        }
        out
    }

    fn eval_by_expansion(net: &TreeTensorNetwork, fm: &FeatureMap, x: &[f64]) -> f64 {
        let coeff = coefficient_tensor(net, net.tree().root());
        let feats = fm.eval_all(x).unwrap();
        // contract features one by one (variable nu at mode 1 after root mode)
        let mut acc = coeff;
        for nu in (0..net.tree().dim()).rev() {
            acc = acc.contract_mode(nu + 1, &feats[nu]).unwrap();
        }
        acc.values()[0]
    }

    #[test]
    fn rank_one_separable_product() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::balanced(d, 2).unwrap();
        let spec = ModelSpec::rank_one(tree, fm.clone()).unwrap();
        let leaf_dims = spec.leaf_dims();
        let mut params = Vec::new();
        for node in 0..spec.tree.node_count() {
            let shape = spec.node_shape(node);
            if spec.tree.is_leaf(node) {
                let mut t = DenseTensor::zeros(shape);
                t.values_mut()[0] = 1.0; // first basis row
                params.push(t);
            } else {
                params.push(DenseTensor::from_fn(shape, |_| 1.0));
            }
        }
        let net = TreeTensorNetwork::new(spec.tree.clone(), spec.ranks.clone(), leaf_dims, params, None)
            .unwrap();
        let x = [0.3, 0.7, 0.11];
        let f = net.eval(&fm, &x).unwrap();
        let expect: f64 = (0..d).map(|nu| fm.eval_var(nu, &x).unwrap()[0]).product();
        assert!((f - expect).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_expansion_oracle() {
        for seed in 0..10u64 {
            let d = 3;
            let fm = legendre_map(d, 4);
            let tree = DimensionTree::random_binary(d, seed).unwrap();
            let spec = random_spec(tree, fm.clone(), 8, seed + 100);
            let net = random_net(&spec, seed + 200);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 300);
            for _ in 0..5 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
                let direct = net.eval(&fm, &x).unwrap();
                let oracle = eval_by_expansion(&net, &fm, &x);
                assert!(
                    (direct - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
                    "seed {seed}: {direct} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn zero_node_means_zero_function() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::linear(d).unwrap();
        let spec = random_spec(tree, fm.clone(), 5, 42);
        let net = random_net(&spec, 43);
        let shape = net.param(2).shape().to_vec();
        let net = net.with_param(2, DenseTensor::zeros(shape)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            assert_eq!(net.eval(&fm, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let d = 2;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::linear(d).unwrap();
        let spec = random_spec(tree, fm.clone(), 4, 7);
        let net = random_net(&spec, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let batch = net.eval_batch(&fm, &xs).unwrap();
        for (x, &b) in xs.iter().zip(&batch) {
            let p = net.eval(&fm, x).unwrap();
            assert!((b - p).abs() <= 1e-12 * p.abs().max(1.0));
        }
        let one = net.eval_batch(&fm, &xs[..1].to_vec()).unwrap();
        assert_eq!(one.len(), 1);
        assert!(net.eval_batch(&fm, &[]).unwrap().is_empty());
    }

    #[test]
    fn complexity_hand_example() {
        // d=2 tree {{1},{2},{1,2}}, r = (root 1, leaf1 2, leaf2 3), N = (4, 5)
        let tree = DimensionTree::linear(2).unwrap();
        let l1 = tree.find_node(&[1]).unwrap();
        let l2 = tree.find_node(&[2]).unwrap();
        let mut ranks = vec![0; 3];
        ranks[tree.root()] = 1;
        ranks[l1] = 2;
        ranks[l2] = 3;
        let mut leaf_dims = vec![0; 3];
        leaf_dims[l1] = 4;
        leaf_dims[l2] = 5;
        assert_eq!(full_complexity(&tree, &ranks, &leaf_dims), 29);
    }

    #[test]
    fn complexity_all_ones() {
        let tree = DimensionTree::balanced(4, 2).unwrap();
        let ranks = vec![1; tree.node_count()];
        let mut leaf_dims = vec![0; tree.node_count()];
        for l in tree.leaves() {
            leaf_dims[l] = 1;
        }
        assert_eq!(
            full_complexity(&tree, &ranks, &leaf_dims),
            tree.node_count()
        );
    }

    #[test]
    fn sparse_complexity_full_pattern_equals_full() {
        let tree = DimensionTree::linear(3).unwrap();
        let fm = legendre_map(3, 3);
        let spec = random_spec(tree, fm, 6, 50);
        let leaf_dims = spec.leaf_dims();
        let patterns: Vec<Option<SparsityPattern>> = (0..spec.tree.node_count())
            .map(|node| {
                Some(SparsityPattern::full(node_shape(
                    &spec.tree, &spec.ranks, &leaf_dims, node,
                )))
            })
            .collect();
        let full = full_complexity(&spec.tree, &spec.ranks, &leaf_dims);
        let sparse = sparse_complexity(&spec.tree, &spec.ranks, &leaf_dims, &patterns);
        assert_eq!(full, sparse);
    }

    #[test]
    fn normalize_preserves_function() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::balanced(d, 2).unwrap();
        let spec = random_spec(tree, fm.clone(), 6, 60);
        let net = random_net(&spec, 61);
        let normed = net.normalize();
        assert!(!normed.degenerate);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f = net.eval(&fm, &x).unwrap();
            let g = normed.scale * normed.unit_net.eval(&fm, &x).unwrap();
            assert!((f - g).abs() <= 1e-10 * f.abs().max(1.0), "{f} vs {g}");
        }
        for p in normed.unit_net.params() {
            assert!(p.norm_upper_bound(PNorm::Two).unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn normalize_scale_tracks_node_scaling() {
        let d = 2;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::linear(d).unwrap();
        let spec = random_spec(tree, fm.clone(), 3, 70);
        let net = random_net(&spec, 71);
        let scaled = net.scale_node(1, 10.0);
        let a = net.normalize();
        let b = scaled.normalize();
        assert!((b.scale / a.scale - 10.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_zero_network_degenerate() {
        let d = 2;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::linear(d).unwrap();
        let spec = ModelSpec::rank_one(tree, fm).unwrap();
        let net = random_net(&spec, 80);
        let shape = net.param(0).shape().to_vec();
        let net = net.with_param(0, DenseTensor::zeros(shape)).unwrap();
        let normed = net.normalize();
        assert!(normed.degenerate);
        assert_eq!(normed.scale, 0.0);
    }

    #[test]
    fn orthogonalize_preserves_function_and_is_orthonormal() {
        for seed in 0..5u64 {
            let d = 3;
            let fm = legendre_map(d, 4);
            let tree = DimensionTree::random_binary(d, seed).unwrap();
            let spec = random_spec(tree, fm.clone(), 8, seed + 500);
            let net = random_net(&spec, seed + 600);
            for node in 0..net.tree().node_count() {
                let ortho = net.orthogonalize_at(node).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 700);
                for _ in 0..20 {
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let f = net.eval(&fm, &x).unwrap();
                    let g = ortho.eval(&fm, &x).unwrap();
                    assert!((f - g).abs() <= 1e-10 * f.abs().max(1.0), "node {node}");
                }
                // orthonormality of every other tensor toward `node`
                let path = net.tree().path_from_root(node);
                for other in 0..net.tree().node_count() {
                    if other == node {
                        continue;
                    }
                    let t = ortho.param(other);
                    let toward = if path.contains(&other) {
                        let pos = path.iter().position(|&p| p == other).unwrap();
                        let next = path[pos + 1];
                        net.tree()
                            .children(other)
                            .iter()
                            .position(|&c| c == next)
                            .unwrap()
                            + 1
                    } else {
                        0
                    };
                    let rows: Vec<usize> =
                        (0..t.order()).filter(|&m| m != toward).collect();
                    let m = t.matricize(&rows).unwrap();
                    // Columns are orthonormal up to structurally dead (zero)
                    // channels: the Gram must be diagonal with entries 0 or 1.
                    let gram = m.transpose() * &m;
                    for i in 0..gram.nrows() {
                        for j in 0..gram.ncols() {
                            let g = gram[(i, j)];
                            let ok = if i == j {
                                (g - 1.0).abs() < 1e-9 || g.abs() < 1e-9
                            } else {
                                g.abs() < 1e-9
                            };
                            assert!(ok, "node {node} other {other} gram[{i},{j}]={g}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn orthogonalize_idempotent_as_function() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::linear(d).unwrap();
        let spec = random_spec(tree, fm.clone(), 6, 90);
        let net = random_net(&spec, 91);
        let once = net.orthogonalize_at(2).unwrap();
        let twice = once.orthogonalize_at(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        for _ in 0..30 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let a = once.eval(&fm, &x).unwrap();
            let b = twice.eval(&fm, &x).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn entropy_bound_values() {
        assert_eq!(entropy_bound(1, 3.0, 1.0, 1).unwrap(), 0.0);
        let a = entropy_bound(10, 0.1, 1.0, 5).unwrap();
        let b = entropy_bound(10, 1.0, 1.0, 5).unwrap();
        assert!(a > b);
        let c = entropy_bound(29, 0.5, 1.0, 3).unwrap();
        assert!((c - 29.0 * 18.0f64.ln()).abs() < 1e-12);
        assert!(entropy_bound(29, 0.0, 1.0, 3).is_err());
    }

    #[test]
    fn evaluation_is_multilinear_in_node_tensors() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::balanced(d, 2).unwrap();
        let spec = random_spec(tree, fm.clone(), 6, 95);
        let net = random_net(&spec, 96);
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        for node in 0..net.tree().node_count() {
            // cone property: scaling one node scales f
            let c = 2.5;
            let f = net.eval(&fm, &x).unwrap();
            let g = net.scale_node(node, c).eval(&fm, &x).unwrap();
            assert!((g - c * f).abs() <= 1e-10 * f.abs().max(1.0));
            // additivity in the node tensor
            let shape = net.param(node).shape().to_vec();
            let delta = DenseTensor::random_uniform(shape, &mut rng);
            let mut bumped = net.param(node).clone();
            for (v, w) in bumped.values_mut().iter_mut().zip(delta.values()) {
                *v += w;
            }
            let f_sum = net.with_param(node, bumped).unwrap().eval(&fm, &x).unwrap();
            let f_delta = net
                .with_param(node, delta)
                .unwrap()
                .eval(&fm, &x)
                .unwrap();
            assert!((f_sum - (f + f_delta)).abs() <= 1e-10 * f_sum.abs().max(1.0));
        }
    }

    #[test]
    fn normalized_tensorized_network_is_bounded() {
        // With one-hot features (pointwise l2 norm 1) and every node bounded
        // in the operator norm, |f(x)| <= 1.
        let l = 5;
        let fm = FeatureMap::tensorized(2, l, 1, 0).unwrap();
        let tree = DimensionTree::linear(l + 1).unwrap();
        let spec = random_spec(tree, fm.clone(), 8, 98);
        let net = random_net(&spec, 99).normalize().unit_net;
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..1000 {
            let x = vec![rng.gen_range(0.0..1.0)];
            let f = net.eval(&fm, &x).unwrap();
            assert!(f.abs() <= 1.0 + 1e-8, "{f}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = 3;
        let fm = legendre_map(d, 3);
        let tree = DimensionTree::random_binary(d, 17).unwrap();
        let spec = random_spec(tree, fm.clone(), 6, 101);
        let net = random_net(&spec, 102);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ttn");
        net.save(&path).unwrap();
        let back = TreeTensorNetwork::load(&path).unwrap();
        assert_eq!(net.ranks(), back.ranks());
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            assert_eq!(net.eval(&fm, &x).unwrap(), back.eval(&fm, &x).unwrap());
        }
    }
}
