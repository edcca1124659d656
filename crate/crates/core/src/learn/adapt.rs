//! Rank-adaptive and tree-adaptive exploration.

use super::als::{fit_als, increment_rank, refine_als, Workspace};
use super::{mix_seed, Dataset, FitOptions, ModelRecord};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::network::{rank_increment_allowed, ModelSpec};
use crate::tree::DimensionTree;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-node estimates of the risk that truncating to the current rank costs,
/// proxied by the empirical-risk decrease achieved by a tentative rank
/// increment followed by a few cheap ALS updates on the incremented node and
/// its parent. Nodes whose rank cannot grow (the root, capped nodes) carry no
/// estimate. Deterministic given the record and data.
pub fn estimate_truncation_errors(
    record: &ModelRecord,
    data: &Dataset,
) -> Result<Vec<Option<f64>>> {
    let net = &record.fitted;
    let tree = net.tree();
    let ws = Workspace::new(&record.spec, data)?;
    let opts = FitOptions {
        ridge: 1e-10,
        ..FitOptions::default()
    };
    let mut out = vec![None; tree.node_count()];
    for node in 0..tree.node_count() {
        if !rank_increment_allowed(tree, net.ranks(), net.leaf_dims(), node, data.n()) {
            continue;
        }
        let probe_seed = mix_seed(record.seed, mix_seed(0xE57, node as u64));
        // A single new channel is often gated: it only pays off once the
        // parent and sibling ranks can transport it. The probe therefore
        // tentatively increments the whole local cluster (node, parent,
        // admissible siblings) and attributes the decrease to `node`; the
        // tie rules then assemble a revealed cluster cheapest-node-first.
        let parent = tree.parent(node).unwrap();
        let mut probe = increment_rank(net, node, probe_seed)?;
        let mut cluster: Vec<usize> = vec![parent];
        cluster.extend(tree.children(parent).iter().filter(|&&s| s != node));
        for (k, &co) in cluster.iter().enumerate() {
            if rank_increment_allowed(
                tree,
                probe.ranks(),
                probe.leaf_dims(),
                co,
                data.n(),
            ) {
                probe = increment_rank(&probe, co, mix_seed(probe_seed, k as u64 + 1))?;
            }
        }
        // Two half-sweeps over the affected neighborhood: the node's
        // children first (their factors must differentiate against the new
        // channels), then the node, its siblings, and the parent.
        let mut scope: Vec<usize> = tree.children(node).to_vec();
        scope.push(node);
        scope.extend(tree.children(parent).iter().filter(|&&s| s != node));
        scope.push(parent);
        let mut fallbacks = 0usize;
        let mut risk = record.empirical_risk;
        for _ in 0..2 {
            for &target in &scope {
                let (p2, r2) = ws.solve_node(probe, target, &opts, &mut fallbacks)?;
                probe = p2;
                risk = r2;
            }
        }
        out[node] = Some((record.empirical_risk - risk).max(0.0));
    }
    Ok(out)
}

/// Greedy rank-adaptation: start from the all-ranks-one fit and repeatedly
/// increment the rank of the node with the largest estimated truncation
/// error, re-fitting warm-started after each increment. Ties go to the
/// smaller complexity increase, then to the lexicographically smallest node.
/// Complexities are strictly increasing along the returned path.
pub fn rank_adapt_path(
    tree: &DimensionTree,
    fm: &FeatureMap,
    data: &Dataset,
    steps: usize,
    opts: &FitOptions,
) -> Result<Vec<ModelRecord>> {
    rank_adapt_path_with_ties(tree, fm, data, steps, opts, None)
}

/// [`rank_adapt_path`] with an optional seeded tie-break permutation.
///
/// With `tie_seed = None` ties resolve lexicographically (the canonical
/// path). A seed replaces the lexicographic order by a per-path hash so that
/// additional exploration paths grow their rank cascades at different
/// complexities and fill the gaps between one another's records.
pub fn rank_adapt_path_with_ties(
    tree: &DimensionTree,
    fm: &FeatureMap,
    data: &Dataset,
    steps: usize,
    opts: &FitOptions,
    tie_seed: Option<u64>,
) -> Result<Vec<ModelRecord>> {
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let spec = ModelSpec::rank_one(tree.clone(), fm.clone())?;
    let t0 = std::time::Instant::now();
    let fit = fit_als(&spec, data, opts)?;
    let mut records = vec![ModelRecord {
        id: 0,
        complexity: spec.complexity(),
        spec,
        fitted: fit.net,
        empirical_risk: fit.risk,
        resolution: None,
        seed: opts.seed,
        sweeps: fit.diagnostics.sweeps,
        min_norm_fallbacks: fit.diagnostics.min_norm_fallbacks,
        wall_ms: t0.elapsed().as_millis() as u64,
    }];

    for step in 1..steps {
        let cur = records.last().unwrap();
        let estimates = estimate_truncation_errors(cur, data)?;
        let Some(node) = pick_increment_node(cur, &estimates, tie_seed) else {
            break; // every node is capped
        };
        let t0 = std::time::Instant::now();
        let seed = mix_seed(opts.seed, step as u64);
        let warm = increment_rank(&cur.fitted, node, mix_seed(seed, 0xA11))?;
        let mut spec = cur.spec.clone();
        spec.ranks = warm.ranks().to_vec();
        let refit = refine_als(warm, &spec, data, opts, Some(node))?;
        let complexity = spec.complexity();
        debug_assert!(complexity > cur.complexity);
        records.push(ModelRecord {
            id: step as u64,
            complexity,
            spec,
            fitted: refit.net,
            empirical_risk: refit.risk,
            resolution: None,
            seed,
            sweeps: refit.diagnostics.sweeps,
            min_norm_fallbacks: refit.diagnostics.min_norm_fallbacks,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok(records)
}

/// Argmax of the truncation estimates with the path's tie rules.
///
/// Estimates are quantized before comparison: values below solver-noise
/// level become exactly zero, and the rest are bucketed to quarter decades.
/// A cluster probe attributes the same gain to every member of a gated
/// cluster, and neutral "preparatory" increments all read zero, so without
/// quantization the argmax would be decided by padding noise; with it, the
/// smaller-complexity-increase-then-lexicographic tie rules assemble each
/// revealed cluster cheapest member first.
fn pick_increment_node(
    record: &ModelRecord,
    estimates: &[Option<f64>],
    tie_seed: Option<u64>,
) -> Option<usize> {
    let tree = record.fitted.tree();
    let ranks = record.fitted.ranks();
    let leaf_dims = record.fitted.leaf_dims();
    let noise_floor = 1e-9 * (1.0 + record.empirical_risk);
    let bucket = |e: f64| -> i64 {
        if e <= noise_floor {
            i64::MIN
        } else {
            (e.ln() * (4.0 / std::f64::consts::LN_10)).round() as i64
        }
    };
    let delta_complexity = |node: usize| -> usize {
        let mut bumped = ranks.to_vec();
        bumped[node] += 1;
        crate::network::full_complexity(tree, &bumped, leaf_dims)
            - crate::network::full_complexity(tree, ranks, leaf_dims)
    };
    // Final tie order: lexicographic node subsets, or a seeded permutation.
    let tie_key = |node: usize| -> (u64, Vec<usize>) {
        match tie_seed {
            None => (0, tree.vars(node).to_vec()),
            Some(seed) => (mix_seed(seed, node as u64), Vec::new()),
        }
    };
    let mut best: Option<(usize, i64, usize)> = None;
    for (node, est) in estimates.iter().enumerate() {
        let Some(e) = est else { continue };
        let b = bucket(*e);
        let dc = delta_complexity(node);
        let better = match &best {
            None => true,
            Some((bn, bb, bdc)) => {
                (b > *bb)
                    || (b == *bb && dc < *bdc)
                    || (b == *bb && dc == *bdc && tie_key(node) < tie_key(*bn))
            }
        };
        if better {
            best = Some((node, b, dc));
        }
    }
    best.map(|(n, _, _)| n)
}

/// Options for [`tree_adapt`].
#[derive(Clone, Debug)]
pub struct TreeAdaptOptions {
    /// Number of proposed local moves.
    pub moves: usize,
    pub seed: u64,
    /// Rank-path length of the fixed-budget fits that score a proposal.
    pub budget_steps: usize,
    pub fit: FitOptions,
}

impl Default for TreeAdaptOptions {
    fn default() -> Self {
        TreeAdaptOptions {
            moves: 20,
            seed: 0,
            budget_steps: 5,
            fit: FitOptions {
                max_sweeps: 8,
                restarts: 2,
                ..FitOptions::default()
            },
        }
    }
}

/// Stochastic tree search: propose random leaf-pair swaps and subtree
/// re-grafts, keep a move when a fixed-budget rank-adapted fit reaches a
/// lower empirical risk at matched complexity, and return the distinct trees
/// visited (the initial tree first, at most `moves + 1` entries).
pub fn tree_adapt(
    data: &Dataset,
    fm: &FeatureMap,
    init_tree: &DimensionTree,
    opts: &TreeAdaptOptions,
) -> Result<Vec<DimensionTree>> {
    init_tree
        .validate()
        .map_err(|v| Error::Config(format!("invalid initial tree: {v}")))?;
    let mut visited = vec![init_tree.clone()];
    let mut cur = init_tree.clone();
    let mut cur_path = score_path(&cur, fm, data, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    for _ in 0..opts.moves {
        let Some(proposal) = propose_move(&cur, &mut rng) else {
            continue;
        };
        if proposal == cur {
            continue;
        }
        let prop_path = score_path(&proposal, fm, data, opts)?;
        let c_match = cur_path
            .iter()
            .map(|r| r.0)
            .max()
            .unwrap()
            .min(prop_path.iter().map(|r| r.0).max().unwrap());
        let best_at = |path: &[(usize, f64)]| -> f64 {
            path.iter()
                .filter(|r| r.0 <= c_match)
                .map(|r| r.1)
                .fold(f64::INFINITY, f64::min)
        };
        if best_at(&prop_path) < best_at(&cur_path) {
            cur = proposal.clone();
            cur_path = prop_path;
            if !visited.contains(&proposal) {
                visited.push(proposal);
            }
        }
    }
    Ok(visited)
}

/// (complexity, empirical risk) pairs of a budgeted rank path on `tree`.
fn score_path(
    tree: &DimensionTree,
    fm: &FeatureMap,
    data: &Dataset,
    opts: &TreeAdaptOptions,
) -> Result<Vec<(usize, f64)>> {
    let fit = FitOptions {
        seed: mix_seed(opts.fit.seed, tree.hash()),
        ..opts.fit.clone()
    };
    let path = rank_adapt_path(tree, fm, data, opts.budget_steps, &fit)?;
    Ok(path
        .iter()
        .map(|r| (r.complexity, r.empirical_risk))
        .collect())
}

// --- local tree moves -------------------------------------------------------

#[derive(Clone, Debug)]
enum Shape {
    Leaf(usize),
    Node(Vec<Shape>),
}

fn to_shape(tree: &DimensionTree, node: usize) -> Shape {
    if tree.is_leaf(node) {
        Shape::Leaf(tree.leaf_var(node))
    } else {
        Shape::Node(
            tree.children(node)
                .iter()
                .map(|&c| to_shape(tree, c))
                .collect(),
        )
    }
}

fn shape_to_tree(shape: &Shape) -> Result<DimensionTree> {
    fn render(s: &Shape, out: &mut String) {
        match s {
            Shape::Leaf(v) => out.push_str(&v.to_string()),
            Shape::Node(cs) => {
                out.push('[');
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    render(c, out);
                }
                out.push(']');
            }
        }
    }
    let mut text = String::new();
    render(shape, &mut text);
    DimensionTree::from_nested(&text)
}

fn count_nodes(s: &Shape) -> usize {
    match s {
        Shape::Leaf(_) => 1,
        Shape::Node(cs) => 1 + cs.iter().map(count_nodes).sum::<usize>(),
    }
}

fn swap_leaf_vars(s: &mut Shape, a: usize, b: usize) {
    match s {
        Shape::Leaf(v) => {
            if *v == a {
                *v = b;
            } else if *v == b {
                *v = a;
            }
        }
        Shape::Node(cs) => {
            for c in cs {
                swap_leaf_vars(c, a, b);
            }
        }
    }
}

/// Remove the subtree rooted at DFS index `target` (not 0). The boolean
/// output marks whether removal happened in this branch.
fn remove_subtree(s: Shape, target: usize, counter: &mut usize) -> (Option<Shape>, Option<Shape>) {
    let my_index = *counter;
    *counter += 1;
    if my_index == target {
        return (None, Some(s));
    }
    match s {
        Shape::Leaf(_) => (Some(s), None),
        Shape::Node(cs) => {
            let mut kept = Vec::new();
            let mut removed = None;
            for c in cs {
                let (k, r) = remove_subtree(c, target, counter);
                if let Some(k) = k {
                    kept.push(k);
                }
                if r.is_some() {
                    removed = r;
                }
            }
            let remaining = match kept.len() {
                0 => None,
                1 => Some(kept.into_iter().next().unwrap()),
                _ => Some(Shape::Node(kept)),
            };
            (remaining, removed)
        }
    }
}

/// Attach `sub` beside the node at DFS index `target`, creating a fresh
/// interior node above it.
fn attach_subtree(s: Shape, target: usize, sub: Shape, counter: &mut usize) -> Shape {
    let my_index = *counter;
    *counter += 1;
    if my_index == target {
        return Shape::Node(vec![s, sub]);
    }
    match s {
        Shape::Leaf(_) => s,
        Shape::Node(cs) => Shape::Node(
            cs.into_iter()
                .map(|c| attach_subtree(c, target, sub.clone(), counter))
                .collect(),
        ),
    }
}

fn propose_move(tree: &DimensionTree, rng: &mut ChaCha8Rng) -> Option<DimensionTree> {
    if tree.dim() < 2 {
        return None;
    }
    let shape = to_shape(tree, tree.root());
    let candidate = if rng.gen::<bool>() || tree.node_count() <= 3 {
        // Leaf-pair swap.
        let a = rng.gen_range(1..=tree.dim());
        let b = rng.gen_range(1..=tree.dim());
        if a == b {
            return None;
        }
        let mut s = shape;
        swap_leaf_vars(&mut s, a, b);
        s
    } else {
        // Subtree re-graft.
        let total = count_nodes(&shape);
        let target = rng.gen_range(1..total);
        let mut counter = 0usize;
        let (remaining, removed) = remove_subtree(shape, target, &mut counter);
        let (remaining, removed) = (remaining?, removed?);
        let spots = count_nodes(&remaining);
        let spot = rng.gen_range(0..spots);
        let mut counter = 0usize;
        attach_subtree(remaining, spot, removed, &mut counter)
    };
    shape_to_tree(&candidate).ok()
}
