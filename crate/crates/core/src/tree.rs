//! Labeled ordered rooted trees.
//!
//! Nodes live in a dense arena addressed by [`NodeId`]. The root is always
//! node 0 after construction through [`Tree::build`] or a [`TreeBuilder`]
//! whose first node is the root; other constructors normalize indices so that
//! ids follow top-down (pre-order) numbering.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

/// Maximum out-degree accepted unless a caller asks for something else.
pub const DEFAULT_MAX_OUT_DEGREE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("no root: every node has a parent")]
    NoRoot,
    #[error("multiple roots: nodes {0} and {1} have no parent")]
    MultipleRoots(usize, usize),
    #[error("cycle detected through node {0}")]
    CycleDetected(usize),
    #[error("dangling index {index} referenced from node {from}")]
    DanglingIndex { from: usize, index: usize },
    #[error("parent and children links disagree at node {0}")]
    InconsistentLinks(usize),
    #[error("node {node} has out-degree {degree}, above the limit {limit}")]
    OutDegreeExceeded { node: usize, degree: usize, limit: usize },
    #[error("cannot prune the root")]
    CannotPruneRoot,
    #[error("{0} input arrays have different lengths")]
    LengthMismatch(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
struct Node<L> {
    label: L,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

/// An ordered rooted tree with a label on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    nodes: Vec<Node<L>>,
    root: NodeId,
}

/// Labels erased, order kept: the pre-order sequence of out-degrees, which
/// determines an ordered tree uniquely.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Skeleton {
    degrees: Vec<usize>,
}

impl Skeleton {
    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }
}

impl<L> Tree<L> {
    /// A one-node tree.
    pub fn leaf(label: L) -> Self {
        Tree {
            nodes: vec![Node {
                label,
                parent: None,
                children: Vec::new(),
            }],
            root: NodeId(0),
        }
    }

    /// Validates and assembles a tree from parallel arrays.
    ///
    /// `child_orders[u]` lists the children of `u` in order; every child must
    /// name `u` as its parent in `parent_links`.
    pub fn build(
        labels: Vec<L>,
        parent_links: Vec<Option<usize>>,
        child_orders: Vec<Vec<usize>>,
    ) -> Result<Self, TreeError> {
        Self::build_with_limit(labels, parent_links, child_orders, DEFAULT_MAX_OUT_DEGREE)
    }

    pub fn build_with_limit(
        labels: Vec<L>,
        parent_links: Vec<Option<usize>>,
        child_orders: Vec<Vec<usize>>,
        max_out_degree: usize,
    ) -> Result<Self, TreeError> {
        let n = labels.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if parent_links.len() != n || child_orders.len() != n {
            return Err(TreeError::LengthMismatch("labels/parents/children"));
        }
        let mut root = None;
        for (u, p) in parent_links.iter().enumerate() {
            match p {
                None => {
                    if let Some(r) = root {
                        return Err(TreeError::MultipleRoots(r, u));
                    }
                    root = Some(u);
                }
                Some(p) if *p >= n => return Err(TreeError::DanglingIndex { from: u, index: *p }),
                Some(_) => {}
            }
        }
        // With no parentless node, every chain of parent links loops; report
        // the cycle rather than a missing root.
        let root = match root {
            Some(r) => r,
            None => return Err(TreeError::CycleDetected(find_cycle(&parent_links).unwrap_or(0))),
        };
        if let Some(u) = find_cycle(&parent_links) {
            return Err(TreeError::CycleDetected(u));
        }
        for (u, kids) in child_orders.iter().enumerate() {
            if kids.len() > max_out_degree {
                return Err(TreeError::OutDegreeExceeded {
                    node: u,
                    degree: kids.len(),
                    limit: max_out_degree,
                });
            }
            for &c in kids {
                if c >= n {
                    return Err(TreeError::DanglingIndex { from: u, index: c });
                }
                if parent_links[c] != Some(u) {
                    return Err(TreeError::InconsistentLinks(c));
                }
            }
        }
        let mut listed = vec![0usize; n];
        for kids in &child_orders {
            for &c in kids {
                listed[c] += 1;
            }
        }
        for u in 0..n {
            let expected = usize::from(parent_links[u].is_some());
            if listed[u] != expected {
                return Err(TreeError::InconsistentLinks(u));
            }
        }
        let nodes = labels
            .into_iter()
            .zip(parent_links)
            .zip(child_orders)
            .map(|((label, parent), children)| Node {
                label,
                parent: parent.map(NodeId),
                children: children.into_iter().map(NodeId).collect(),
            })
            .collect();
        Ok(Tree {
            nodes,
            root: NodeId(root),
        })
    }

    /// Parent/children arrays in the shape accepted by [`Tree::build`].
    pub fn decompose(&self) -> (Vec<&L>, Vec<Option<usize>>, Vec<Vec<usize>>) {
        let labels = self.nodes.iter().map(|n| &n.label).collect();
        let parents = self.nodes.iter().map(|n| n.parent.map(NodeId::index)).collect();
        let children = self
            .nodes
            .iter()
            .map(|n| n.children.iter().map(|c| c.0).collect())
            .collect();
        (labels, parents, children)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn label(&self, u: NodeId) -> &L {
        &self.nodes[u.0].label
    }

    pub fn parent(&self, u: NodeId) -> Option<NodeId> {
        self.nodes[u.0].parent
    }

    pub fn children(&self, u: NodeId) -> &[NodeId] {
        &self.nodes[u.0].children
    }

    pub fn is_leaf(&self, u: NodeId) -> bool {
        self.nodes[u.0].children.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Largest out-degree in this tree.
    pub fn max_out_degree(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.len()];
        let mut best = 0;
        for u in self.topdown_order() {
            if let Some(p) = self.parent(u) {
                depth[u.0] = depth[p.0] + 1;
                best = best.max(depth[u.0]);
            }
        }
        best
    }

    /// Pre-order: each node after its parent, siblings in child order.
    pub fn topdown_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            order.push(u);
            stack.extend(self.children(u).iter().rev().copied());
        }
        order
    }

    /// Leaves from left to right.
    pub fn leaves_in_order(&self) -> Vec<NodeId> {
        self.topdown_order()
            .into_iter()
            .filter(|&u| self.is_leaf(u))
            .collect()
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton {
            degrees: self
                .topdown_order()
                .into_iter()
                .map(|u| self.children(u).len())
                .collect(),
        }
    }

    /// Ordered isomorphism: the two skeletons coincide.
    pub fn is_isomorphic<M>(&self, other: &Tree<M>) -> bool {
        self.len() == other.len() && self.skeleton() == other.skeleton()
    }

    pub fn map_labels<M>(&self, mut f: impl FnMut(NodeId, &L) -> M) -> Tree<M> {
        Tree {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| Node {
                    label: f(NodeId(i), &n.label),
                    parent: n.parent,
                    children: n.children.clone(),
                })
                .collect(),
            root: self.root,
        }
    }
}

impl<L: Clone> Tree<L> {
    /// Removes the subtrees rooted at `roots_to_remove`.
    ///
    /// Nested entries are normalized away (a node below another removed node
    /// is already gone). The result is re-indexed in pre-order; the second
    /// element maps each new index to its index in `self`.
    pub fn prune_subtrees(
        &self,
        roots_to_remove: &HashSet<NodeId>,
    ) -> Result<(Tree<L>, Vec<NodeId>), TreeError> {
        if roots_to_remove.contains(&self.root) {
            return Err(TreeError::CannotPruneRoot);
        }
        let mut builder = TreeBuilder::new();
        let mut provenance = Vec::new();
        let mut new_id = vec![None; self.len()];
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            if roots_to_remove.contains(&u) {
                continue;
            }
            let parent = self.parent(u).map(|p| new_id[p.0].expect("parent kept before child"));
            let id = builder.add(self.label(u).clone(), parent);
            new_id[u.0] = Some(id);
            provenance.push(u);
            stack.extend(self.children(u).iter().rev().copied());
        }
        Ok((builder.finish()?, provenance))
    }
}

impl<L: fmt::Display> Tree<L> {
    /// Indented outline, one node per line.
    pub fn outline(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root, 0usize)];
        while let Some((u, depth)) = stack.pop() {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&self.label(u).to_string());
            out.push('\n');
            stack.extend(self.children(u).iter().rev().map(|&c| (c, depth + 1)));
        }
        out
    }
}

/// Incremental construction where every node is attached to an existing
/// parent, so the result is acyclic by construction.
#[derive(Debug)]
pub struct TreeBuilder<L> {
    nodes: Vec<Node<L>>,
    max_out_degree: usize,
}

impl<L> Default for TreeBuilder<L> {
    fn default() -> Self {
        Self::new()
    }
}

impl<L> TreeBuilder<L> {
    pub fn new() -> Self {
        TreeBuilder {
            nodes: Vec::new(),
            max_out_degree: DEFAULT_MAX_OUT_DEGREE,
        }
    }

    pub fn with_max_out_degree(mut self, limit: usize) -> Self {
        self.max_out_degree = limit;
        self
    }

    /// Appends a node. The first node added must be the root (`parent` None).
    pub fn add(&mut self, label: L, parent: Option<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        self.nodes.push(Node {
            label,
            parent,
            children: Vec::new(),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn finish(self) -> Result<Tree<L>, TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut root = None;
        for (u, node) in self.nodes.iter().enumerate() {
            if node.parent.is_none() {
                if let Some(r) = root {
                    return Err(TreeError::MultipleRoots(r, u));
                }
                root = Some(u);
            }
            if node.children.len() > self.max_out_degree {
                return Err(TreeError::OutDegreeExceeded {
                    node: u,
                    degree: node.children.len(),
                    limit: self.max_out_degree,
                });
            }
        }
        Ok(Tree {
            nodes: self.nodes,
            root: NodeId(root.ok_or(TreeError::NoRoot)?),
        })
    }
}

/// Returns a node on a parent-link cycle, if any.
fn find_cycle(parents: &[Option<usize>]) -> Option<usize> {
    // 0 = unvisited, 1 = on current walk, 2 = known to reach the root
    let mut state = vec![0u8; parents.len()];
    for start in 0..parents.len() {
        let mut walk = Vec::new();
        let mut u = start;
        loop {
            match state[u] {
                2 => break,
                1 => return Some(u),
                _ => {}
            }
            state[u] = 1;
            walk.push(u);
            match parents[u] {
                Some(p) if p < parents.len() => u = p,
                _ => break,
            }
        }
        for w in walk {
            state[w] = 2;
        }
    }
    None
}
