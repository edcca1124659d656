//! Dimension partition trees over `{1, ..., d}`.
//!
//! A dimension partition tree is a rooted tree whose root carries the full
//! variable set, whose leaves are singletons, and where the children of every
//! interior node partition it. The tree fixes the architecture of a tree
//! tensor network: one parameter tensor per node, one rank per node.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 1-based variable index.
pub type Var = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
struct TreeNode {
    /// Sorted variable subset carried by this node.
    vars: Vec<Var>,
    /// Child node ids, ordered by smallest contained variable.
    children: Vec<usize>,
    parent: Option<usize>,
}

/// Rooted partition tree over `{1, ..., d}`.
///
/// Nodes are stored in a canonical breadth-first order (root first, children
/// ordered by smallest element), so two trees with the same node subsets and
/// child relation compare equal and serialize identically. Immutable after
/// construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimensionTree {
    d: usize,
    nodes: Vec<TreeNode>,
}

/// First violated invariant found by [`DimensionTree::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Short name of the broken rule.
    pub rule: String,
    /// Variable subset of the offending node.
    pub node: Vec<Var>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at node {:?}", self.rule, self.node)
    }
}

/// Intermediate recursive form used by constructors and the nested-list codec.
#[derive(Clone, Debug)]
enum Nested {
    Leaf(Var),
    Node(Vec<Nested>),
}

impl Nested {
    fn min_var(&self) -> Var {
        match self {
            Nested::Leaf(v) => *v,
            Nested::Node(cs) => cs.iter().map(Nested::min_var).min().unwrap_or(usize::MAX),
        }
    }

    fn sort_canonical(&mut self) {
        if let Nested::Node(cs) = self {
            for c in cs.iter_mut() {
                c.sort_canonical();
            }
            cs.sort_by_key(Nested::min_var);
        }
    }
}

impl DimensionTree {
    /// Linear (tensor-train) tree: interior nodes `{1}, {1,2}, ..., {1,...,d}`,
    /// each interior node `{1,...,k+1}` having children `{1,...,k}` and `{k+1}`.
    pub fn linear(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension);
        }
        let mut nested = Nested::Leaf(1);
        for v in 2..=d {
            nested = Nested::Node(vec![nested, Nested::Leaf(v)]);
        }
        Self::from_nested_inner(nested, d)
    }

    /// Minimal-depth tree splitting contiguous index blocks as evenly as
    /// possible into at most `arity` children; when sizes differ, left blocks
    /// get the extra element.
    pub fn balanced(d: usize, arity: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension);
        }
        if arity < 2 {
            return Err(Error::InvalidArity);
        }
        fn build(lo: Var, hi: Var, arity: usize) -> Nested {
            let len = hi - lo + 1;
            if len == 1 {
                return Nested::Leaf(lo);
            }
            let k = arity.min(len);
            let base = len / k;
            let rem = len % k;
            let mut children = Vec::with_capacity(k);
            let mut start = lo;
            for i in 0..k {
                let size = base + usize::from(i < rem);
                children.push(build(start, start + size - 1, arity));
                start += size;
            }
            Nested::Node(children)
        }
        Self::from_nested_inner(build(1, d, arity), d)
    }

    /// Uniformly random recursive bipartition of `{1, ..., d}`; a pure
    /// function of `(d, seed)`.
    pub fn random_binary(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fn split(vars: &[Var], rng: &mut ChaCha8Rng) -> Nested {
            if vars.len() == 1 {
                return Nested::Leaf(vars[0]);
            }
            // Rejection sampling: independent fair coins, redraw if one side
            // is empty. Uniform over proper bipartitions.
            loop {
                let mut left = Vec::new();
                let mut right = Vec::new();
                for &v in vars {
                    if rng.gen::<bool>() {
                        left.push(v);
                    } else {
                        right.push(v);
                    }
                }
                if !left.is_empty() && !right.is_empty() {
                    return Nested::Node(vec![split(&left, rng), split(&right, rng)]);
                }
            }
        }
        let vars: Vec<Var> = (1..=d).collect();
        Self::from_nested_inner(split(&vars, &mut rng), d)
    }

    /// Parse a tree from nested-list text, e.g. `[[1,2],3]` for the linear
    /// tree on three variables. A bare integer denotes a single-leaf tree.
    pub fn from_nested(text: &str) -> Result<Self> {
        let bytes = text.as_bytes();
        let mut pos = 0usize;
        let nested = parse_nested(bytes, &mut pos)?;
        skip_ws(bytes, &mut pos);
        if pos != bytes.len() {
            return Err(Error::Parse(format!("trailing input at byte {pos}")));
        }
        let mut vars = Vec::new();
        collect_vars(&nested, &mut vars);
        vars.sort_unstable();
        let d = vars.len();
        if d == 0 {
            return Err(Error::InvalidDimension);
        }
        let expected: Vec<Var> = (1..=d).collect();
        if vars != expected {
            return Err(Error::Parse(format!(
                "leaves must cover 1..={d} exactly once, got {vars:?}"
            )));
        }
        Self::from_nested_inner(nested, d)
    }

    /// Serialize to the nested-list text accepted by [`Self::from_nested`].
    pub fn to_nested(&self) -> String {
        fn write(tree: &DimensionTree, node: usize, out: &mut String) {
            if tree.is_leaf(node) {
                out.push_str(&tree.nodes[node].vars[0].to_string());
            } else {
                out.push('[');
                for (i, &c) in tree.nodes[node].children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(tree, c, out);
                }
                out.push(']');
            }
        }
        let mut out = String::new();
        write(self, 0, &mut out);
        out
    }

    /// Stable 64-bit id of the canonical form (FNV-1a over [`Self::to_nested`]).
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_nested().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    fn from_nested_inner(mut nested: Nested, d: usize) -> Result<Self> {
        nested.sort_canonical();
        let mut nodes: Vec<TreeNode> = Vec::new();
        // Breadth-first layout keeps node ids canonical.
        let mut queue = std::collections::VecDeque::new();
        queue.push_back((nested, None::<usize>));
        while let Some((item, parent)) = queue.pop_front() {
            let id = nodes.len();
            let mut vars = Vec::new();
            collect_vars(&item, &mut vars);
            vars.sort_unstable();
            nodes.push(TreeNode {
                vars,
                children: Vec::new(),
                parent,
            });
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
            if let Nested::Node(cs) = item {
                for c in cs {
                    queue.push_back((c, Some(id)));
                }
            }
        }
        // BFS enqueues each node's children contiguously but interleaved with
        // other parents' children; re-link child ids in enqueue order.
        let tree = DimensionTree { d, nodes };
        if let Err(v) = tree.validate() {
            return Err(Error::Parse(v.to_string()));
        }
        Ok(tree)
    }

    /// Check every structural invariant; on failure reports the first broken
    /// rule and the offending node.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let root = &self.nodes[0];
        let full: Vec<Var> = (1..=self.d).collect();
        if root.vars != full {
            return Err(Violation {
                rule: "root must equal {1,...,d}".into(),
                node: root.vars.clone(),
            });
        }
        if self.nodes.len() > 2 * self.d - 1 {
            return Err(Violation {
                rule: "node count exceeds 2d-1".into(),
                node: root.vars.clone(),
            });
        }
        for node in &self.nodes {
            if node.children.is_empty() {
                if node.vars.len() != 1 {
                    return Err(Violation {
                        rule: "leaf must be a singleton".into(),
                        node: node.vars.clone(),
                    });
                }
                continue;
            }
            if node.children.len() < 2 {
                return Err(Violation {
                    rule: "interior node must have at least 2 children".into(),
                    node: node.vars.clone(),
                });
            }
            let mut union: Vec<Var> = Vec::new();
            for &c in &node.children {
                union.extend_from_slice(&self.nodes[c].vars);
            }
            let mut sorted = union.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != union.len() || sorted != node.vars {
                return Err(Violation {
                    rule: "children do not partition parent".into(),
                    node: node.vars.clone(),
                });
            }
        }
        Ok(())
    }

    /// Number of variables `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of nodes `|T|`.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Root node id (always 0).
    pub fn root(&self) -> usize {
        0
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.nodes[node].children.is_empty()
    }

    pub fn vars(&self, node: usize) -> &[Var] {
        &self.nodes[node].vars
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.nodes[node].children
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    /// Variable carried by a leaf node.
    pub fn leaf_var(&self, node: usize) -> Var {
        debug_assert!(self.is_leaf(node));
        self.nodes[node].vars[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i))
    }

    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.is_leaf(i))
    }

    /// Node ids from the root down to `node`, inclusive.
    pub fn path_from_root(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Node ids in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<usize> {
        // Canonical storage is already breadth-first.
        (0..self.nodes.len()).collect()
    }

    /// Find the node carrying exactly `vars` (sorted), if present.
    pub fn find_node(&self, vars: &[Var]) -> Option<usize> {
        self.nodes.iter().position(|n| n.vars == vars)
    }
}

fn collect_vars(n: &Nested, out: &mut Vec<Var>) {
    match n {
        Nested::Leaf(v) => out.push(*v),
        Nested::Node(cs) => {
            for c in cs {
                collect_vars(c, out);
            }
        }
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn parse_nested(bytes: &[u8], pos: &mut usize) -> Result<Nested> {
    skip_ws(bytes, pos);
    if *pos >= bytes.len() {
        return Err(Error::Parse("unexpected end of input".into()));
    }
    if bytes[*pos] == b'[' {
        *pos += 1;
        let mut children = Vec::new();
        loop {
            skip_ws(bytes, pos);
            if *pos < bytes.len() && bytes[*pos] == b']' {
                *pos += 1;
                break;
            }
            children.push(parse_nested(bytes, pos)?);
            skip_ws(bytes, pos);
            if *pos < bytes.len() && bytes[*pos] == b',' {
                *pos += 1;
            }
        }
        if children.is_empty() {
            return Err(Error::Parse("empty node".into()));
        }
        if children.len() == 1 {
            // Collapse redundant unary nesting rather than rejecting it.
            return Ok(children.into_iter().next().unwrap());
        }
        Ok(Nested::Node(children))
    } else if bytes[*pos].is_ascii_digit() {
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..*pos]).unwrap();
        let v: Var = text
            .parse()
            .map_err(|_| Error::Parse(format!("bad integer {text}")))?;
        if v == 0 {
            return Err(Error::Parse("variables are 1-based".into()));
        }
        Ok(Nested::Leaf(v))
    } else {
        Err(Error::Parse(format!(
            "unexpected byte {:?} at {}",
            bytes[*pos] as char,
            pos
        )))
    }
}
