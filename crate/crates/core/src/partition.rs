//! Mondrian partitions of the unit cube.
//!
//! A cell `C` waits an exponential time with rate `|C|` (the sum of its side lengths),
//! then splits along a side chosen with probability proportional to its length, at a
//! uniform position. Sampling runs to a `horizon`; every split keeps its birth time, so
//! the partition at any earlier stopping time is obtained by ignoring later splits.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::rng::substream;
use crate::types::{check_point, Cell};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        cell: Cell,
    },
    Split {
        cell: Cell,
        dim: usize,
        threshold: f64,
        birth_time: f64,
        left: usize,
        right: usize,
    },
}

impl Node {
    pub fn cell(&self) -> &Cell {
        match self {
            Node::Leaf { cell } | Node::Split { cell, .. } => cell,
        }
    }

    pub fn birth_time(&self) -> Option<f64> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split { birth_time, .. } => Some(*birth_time),
        }
    }

    /// Children if this node is a split born no later than `lambda`.
    fn children_at(&self, lambda: f64) -> Option<(usize, usize)> {
        match self {
            Node::Split {
                birth_time,
                left,
                right,
                ..
            } if *birth_time <= lambda => Some((*left, *right)),
            _ => None,
        }
    }
}

/// A realization of the Mondrian process on `[0,1]^d`, sampled up to `horizon`.
///
/// Nodes are stored in pre-order with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireTree", into = "WireTree")]
pub struct PartitionTree {
    dim: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
    nodes: Vec<Node>,
}

/// A leaf of the partition pruned at some stopping time.
#[derive(Debug, Clone, Copy)]
pub struct LeafRef<'a> {
    pub id: usize,
    pub node: usize,
    pub cell: &'a Cell,
}

/// Samples a Mondrian partition of `[0,1]^dim` up to `horizon` from stream `stream` of `seed`.
///
/// Fails with a resource error once the leaf count would exceed `leaf_cap`.
pub fn sample_partition(
    dim: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
    leaf_cap: usize,
) -> Result<PartitionTree> {
    if dim == 0 {
        return Err(MondrianError::input("dimension must be at least 1"));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(MondrianError::input(format!(
            "horizon {horizon} must be finite and non-negative"
        )));
    }
    let mut rng = substream(seed, stream);
    let mut nodes: Vec<Node> = Vec::new();
    let mut leaves = 1usize;
    // (cell, start time, parent slot to patch)
    let mut stack: Vec<(Cell, f64, Option<(usize, bool)>)> = vec![(Cell::unit(dim), 0.0, None)];

    while let Some((cell, start, parent)) = stack.pop() {
        let idx = nodes.len();
        if let Some((p, is_left)) = parent {
            if let Node::Split { left, right, .. } = &mut nodes[p] {
                if is_left {
                    *left = idx;
                } else {
                    *right = idx;
                }
            }
        }
        let rate = cell.linear_size();
        let wait: f64 = rng.sample::<f64, _>(Exp1) / rate;
        let birth = start + wait;
        if !(rate > 0.0 && birth <= horizon) {
            nodes.push(Node::Leaf { cell });
            continue;
        }
        leaves += 1;
        if leaves > leaf_cap {
            return Err(MondrianError::Resource(format!(
                "partition exceeds the leaf cap of {leaf_cap} at horizon {horizon}"
            )));
        }
        let split_dim = choose_dimension(&cell, &mut rng);
        let (lo, hi) = (cell.lo[split_dim], cell.hi[split_dim]);
        let threshold = loop {
            let s = lo + rng.random::<f64>() * (hi - lo);
            if lo < s && s < hi {
                break s;
            }
        };
        let (left_cell, right_cell) = cell.split(split_dim, threshold);
        nodes.push(Node::Split {
            cell,
            dim: split_dim,
            threshold,
            birth_time: birth,
            left: usize::MAX,
            right: usize::MAX,
        });
        stack.push((right_cell, birth, Some((idx, false))));
        stack.push((left_cell, birth, Some((idx, true))));
    }

    Ok(PartitionTree {
        dim,
        horizon,
        seed,
        stream,
        nodes,
    })
}

fn choose_dimension<R: Rng>(cell: &Cell, rng: &mut R) -> usize {
    let total = cell.linear_size();
    loop {
        let mut u = rng.random::<f64>() * total;
        for j in 0..cell.dim() {
            let side = cell.side(j);
            if u < side {
                return j;
            }
            u -= side;
        }
        // rounding left u just past the last side; draw again
    }
}

impl PartitionTree {
    /// A tree that never splits.
    pub fn trivial(dim: usize, horizon: f64) -> Self {
        PartitionTree {
            dim,
            horizon,
            seed: 0,
            stream: 0,
            nodes: vec![Node::Leaf {
                cell: Cell::unit(dim),
            }],
        }
    }

    /// Builds a tree from explicit splits, mainly for tests and fixtures.
    /// Each entry is `(path, dim, threshold, birth_time)` where `path` is a string of
    /// `L`/`R` moves from the root to the leaf being split; entries apply in order.
    pub fn from_splits(dim: usize, horizon: f64, splits: &[(&str, usize, f64, f64)]) -> Result<Self> {
        let mut tree = PartitionTree::trivial(dim, horizon);
        for &(path, split_dim, threshold, birth) in splits {
            let mut idx = 0;
            for step in path.chars() {
                idx = match (&tree.nodes[idx], step) {
                    (Node::Split { left, .. }, 'L') => *left,
                    (Node::Split { right, .. }, 'R') => *right,
                    _ => return Err(MondrianError::input(format!("bad split path {path:?}"))),
                };
            }
            let cell = tree.nodes[idx].cell().clone();
            if matches!(tree.nodes[idx], Node::Split { .. }) || split_dim >= dim {
                return Err(MondrianError::input(format!("cannot split at {path:?}")));
            }
            let (l, r) = cell.split(split_dim, threshold);
            let (li, ri) = (tree.nodes.len(), tree.nodes.len() + 1);
            tree.nodes.push(Node::Leaf { cell: l });
            tree.nodes.push(Node::Leaf { cell: r });
            tree.nodes[idx] = Node::Split {
                cell,
                dim: split_dim,
                threshold,
                birth_time: birth,
                left: li,
                right: ri,
            };
        }
        let tree = tree.renumbered();
        tree.validate()?;
        Ok(tree)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda <= self.horizon) {
            return Err(MondrianError::input(format!(
                "stopping time {lambda} lies outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Leaves of the partition at stopping time `lambda`, in pre-order.
    pub fn leaves_at(&self, lambda: f64) -> Result<Vec<LeafRef<'_>>> {
        Ok(self.view(lambda)?.leaves().collect())
    }

    pub fn leaf_count_at(&self, lambda: f64) -> Result<usize> {
        Ok(self.view(lambda)?.leaf_count())
    }

    /// Sorted distinct birth times of all splits.
    pub fn split_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.nodes.iter().filter_map(Node::birth_time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Id of the leaf of `leaves_at(lambda)` containing `x`.
    pub fn locate(&self, lambda: f64, x: &[f64]) -> Result<usize> {
        self.view(lambda)?.locate(x)
    }

    /// Node index of the deepest node born no later than `lambda` that contains `x`.
    pub(crate) fn locate_node(&self, lambda: f64, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    dim,
                    threshold,
                    birth_time,
                    left,
                    right,
                    ..
                } if *birth_time <= lambda => {
                    idx = if x[*dim] < *threshold { *left } else { *right };
                }
                _ => return idx,
            }
        }
    }

    pub fn view(&self, lambda: f64) -> Result<PrunedView<'_>> {
        self.check_lambda(lambda)?;
        let mut leaf_of_node = vec![usize::MAX; self.nodes.len()];
        let mut leaves = Vec::new();
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            match self.nodes[idx].children_at(lambda) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => {
                    leaf_of_node[idx] = leaves.len();
                    leaves.push(idx);
                }
            }
        }
        Ok(PrunedView {
            tree: self,
            lambda,
            leaf_of_node,
            leaves,
        })
    }

    /// The partition at stopping time `lambda` as a standalone tree with `horizon = lambda`.
    /// Leaf ids of the result match those of `leaves_at(lambda)`.
    pub fn pruned(&self, lambda: f64) -> Result<PartitionTree> {
        self.check_lambda(lambda)?;
        let mut nodes = Vec::new();
        // (source node, parent slot)
        let mut stack: Vec<(usize, Option<(usize, bool)>)> = vec![(0, None)];
        while let Some((src, parent)) = stack.pop() {
            let idx = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = idx;
                    } else {
                        *right = idx;
                    }
                }
            }
            match &self.nodes[src] {
                Node::Split {
                    cell,
                    dim,
                    threshold,
                    birth_time,
                    left,
                    right,
                } if *birth_time <= lambda => {
                    nodes.push(Node::Split {
                        cell: cell.clone(),
                        dim: *dim,
                        threshold: *threshold,
                        birth_time: *birth_time,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    stack.push((*right, Some((idx, false))));
                    stack.push((*left, Some((idx, true))));
                }
                other => nodes.push(Node::Leaf {
                    cell: other.cell().clone(),
                }),
            }
        }
        Ok(PartitionTree {
            dim: self.dim,
            horizon: lambda,
            seed: self.seed,
            stream: self.stream,
            nodes,
        })
    }

    fn renumbered(&self) -> PartitionTree {
        let mut copy = self.clone();
        copy.horizon = f64::INFINITY;
        let mut out = copy.pruned(f64::MAX).expect("full pruning is always in range");
        out.horizon = self.horizon;
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MondrianError::input(m));
        if self.dim == 0 || !(self.horizon >= 0.0) || self.nodes.is_empty() {
            return bad("partition header is invalid".into());
        }
        if self.nodes[0].cell() != &Cell::unit(self.dim) {
            return bad("root cell must be the unit cube".into());
        }
        let mut stack = vec![(0usize, 0.0f64)];
        let mut seen = 0usize;
        while let Some((idx, parent_birth)) = stack.pop() {
            seen += 1;
            if let Node::Split {
                cell,
                dim,
                threshold,
                birth_time,
                left,
                right,
            } = &self.nodes[idx]
            {
                if *dim >= self.dim || !(cell.lo[*dim] < *threshold && *threshold < cell.hi[*dim]) {
                    return bad(format!("split at node {idx} has an invalid threshold"));
                }
                if !(*birth_time > parent_birth && *birth_time <= self.horizon) {
                    return bad(format!("split at node {idx} has an invalid birth time"));
                }
                let (lc, rc) = cell.split(*dim, *threshold);
                if self.nodes.get(*left).map(Node::cell) != Some(&lc)
                    || self.nodes.get(*right).map(Node::cell) != Some(&rc)
                {
                    return bad(format!("children of node {idx} do not tile it"));
                }
                stack.push((*left, *birth_time));
                stack.push((*right, *birth_time));
            }
        }
        if seen != self.nodes.len() {
            return bad("unreachable nodes in partition".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json_unbounded(text)
    }
}

/// Parses JSON without serde_json's nesting limit; trees may be deep.
pub(crate) fn from_json_unbounded<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    de.disable_recursion_limit();
    let value = T::deserialize(&mut de)?;
    de.end()?;
    Ok(value)
}

/// The partition at a fixed stopping time, with leaf ids precomputed.
#[derive(Debug, Clone)]
pub struct PrunedView<'a> {
    tree: &'a PartitionTree,
    lambda: f64,
    leaf_of_node: Vec<usize>,
    leaves: Vec<usize>,
}

impl<'a> PrunedView<'a> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> impl ExactSizeIterator<Item = LeafRef<'a>> + '_ {
        self.leaves.iter().enumerate().map(|(id, &node)| LeafRef {
            id,
            node,
            cell: self.tree.nodes[node].cell(),
        })
    }

    pub fn cell(&self, leaf_id: usize) -> &'a Cell {
        self.tree.nodes[self.leaves[leaf_id]].cell()
    }

    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        check_point(x, self.tree.dim)?;
        Ok(self.locate_unchecked(x))
    }

    pub(crate) fn locate_unchecked(&self, x: &[f64]) -> usize {
        self.leaf_of_node[self.tree.locate_node(self.lambda, x)]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WireNode {
    Split {
        dim: usize,
        threshold: f64,
        birth_time: f64,
        children: Box<[WireNode; 2]>,
    },
    Leaf {
        cell: Cell,
    },
}

#[derive(Serialize, Deserialize)]
struct WireTree {
    format: String,
    seed: u64,
    stream: u64,
    dimension: usize,
    horizon: f64,
    root: WireNode,
}

const TREE_FORMAT: &str = "mondrian-partition/1";

impl From<PartitionTree> for WireTree {
    fn from(tree: PartitionTree) -> Self {
        fn build(nodes: &[Node], idx: usize) -> WireNode {
            match &nodes[idx] {
                Node::Leaf { cell } => WireNode::Leaf { cell: cell.clone() },
                Node::Split {
                    dim,
                    threshold,
                    birth_time,
                    left,
                    right,
                    ..
                } => WireNode::Split {
                    dim: *dim,
                    threshold: *threshold,
                    birth_time: *birth_time,
                    children: Box::new([build(nodes, *left), build(nodes, *right)]),
                },
            }
        }
        WireTree {
            format: TREE_FORMAT.into(),
            seed: tree.seed,
            stream: tree.stream,
            dimension: tree.dim,
            horizon: tree.horizon,
            root: build(&tree.nodes, 0),
        }
    }
}

impl TryFrom<WireTree> for PartitionTree {
    type Error = MondrianError;

    fn try_from(wire: WireTree) -> Result<Self> {
        if wire.format != TREE_FORMAT {
            return Err(MondrianError::input(format!(
                "unknown partition format {:?}",
                wire.format
            )));
        }
        if wire.dimension == 0 {
            return Err(MondrianError::input("partition dimension must be positive"));
        }
        let mut nodes = Vec::new();
        let mut stack: Vec<(WireNode, Cell, Option<(usize, bool)>)> =
            vec![(wire.root, Cell::unit(wire.dimension), None)];
        while let Some((node, cell, parent)) = stack.pop() {
            let idx = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = idx;
                    } else {
                        *right = idx;
                    }
                }
            }
            match node {
                WireNode::Leaf { cell: stored } => {
                    if stored != cell {
                        return Err(MondrianError::input(format!(
                            "stored leaf cell {stored:?} disagrees with its splits"
                        )));
                    }
                    nodes.push(Node::Leaf { cell });
                }
                WireNode::Split {
                    dim,
                    threshold,
                    birth_time,
                    children,
                } => {
                    if dim >= wire.dimension {
                        return Err(MondrianError::input(format!("split dimension {dim} out of range")));
                    }
                    let (lc, rc) = cell.split(dim, threshold);
                    nodes.push(Node::Split {
                        cell,
                        dim,
                        threshold,
                        birth_time,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    let [l, r] = *children;
                    stack.push((r, rc, Some((idx, false))));
                    stack.push((l, lc, Some((idx, true))));
                }
            }
        }
        let tree = PartitionTree {
            dim: wire.dimension,
            horizon: wire.horizon,
            seed: wire.seed,
            stream: wire.stream,
            nodes,
        };
        tree.validate()?;
        Ok(tree)
    }
}
