//! Labeled rooted ordered trees, structural predicates and traversal
//! schedules.
//!
//! Trees are stored as ordered trees (children carry positions) so that a
//! single structure serves both the order-invariant Child-Sum cell and the
//! position-sensitive N-ary cell. After validation the node ids are dense,
//! 1-based, and the root is always id 1; trees are immutable from then on.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Dense 1-based node identifier; the root is always `NodeId(1)` after
/// validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(1);

    fn idx(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node label: a dense feature vector, a categorical symbol, or the NULL
/// marker used on pruned nodes of output trees.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLabel {
    Dense(Vec<f64>),
    Categorical(usize),
    Null,
}

impl NodeLabel {
    pub fn is_null(&self) -> bool {
        matches!(self, NodeLabel::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeError {
    EmptyTree,
    MultipleRoots,
    CycleDetected,
    OutdegreeExceeded { node: usize, degree: usize },
    InconsistentEdges,
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::EmptyTree => write!(f, "tree has no nodes"),
            TreeError::MultipleRoots => write!(f, "more than one root node"),
            TreeError::CycleDetected => write!(f, "cycle detected (or no root)"),
            TreeError::OutdegreeExceeded { node, degree } => {
                write!(f, "node {node} has out-degree {degree} above the maximum")
            }
            TreeError::InconsistentEdges => write!(f, "parent/children mappings disagree"),
        }
    }
}

impl core::error::Error for TreeError {}

/// Direction of unfolding over the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Leaves first; every node appears after all of its children.
    BottomUp,
    /// Root first; every node appears after its parent.
    TopDown,
}

/// Ordered labeled rooted tree. Structure is immutable after validation;
/// only labels can be replaced wholesale via [`Tree::map_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    labels: Vec<L>,
}

/// A tree with labels erased.
pub type Skeleton = Tree<()>;

/// Incrementally collected raw nodes and edges, validated into a [`Tree`].
pub struct TreeBuilder<L> {
    labels: Vec<L>,
    children: Vec<Vec<usize>>,
    has_parent: Vec<bool>,
}

impl<L> Default for TreeBuilder<L> {
    fn default() -> Self {
        Self::new()
    }
}

impl<L> TreeBuilder<L> {
    pub fn new() -> Self {
        TreeBuilder { labels: Vec::new(), children: Vec::new(), has_parent: Vec::new() }
    }

    /// Adds a node and returns its raw index (0-based, pre-validation).
    pub fn add_node(&mut self, label: L) -> usize {
        self.labels.push(label);
        self.children.push(Vec::new());
        self.has_parent.push(false);
        self.labels.len() - 1
    }

    /// Appends `child` to `parent`'s ordered child list.
    pub fn add_edge(&mut self, parent: usize, child: usize) -> Result<(), TreeError> {
        if parent >= self.labels.len() || child >= self.labels.len() {
            return Err(TreeError::InconsistentEdges);
        }
        if self.has_parent[child] {
            // a node with two parents can never satisfy the tree invariants
            return Err(TreeError::InconsistentEdges);
        }
        self.has_parent[child] = true;
        self.children[parent].push(child);
        Ok(())
    }

    /// Checks all tree invariants and renumbers nodes so that ids are dense,
    /// 1-based and assigned in preorder (root gets id 1).
    pub fn validate(self, max_outdegree: usize) -> Result<Tree<L>, TreeError> {
        let n = self.labels.len();
        if n == 0 {
            return Err(TreeError::EmptyTree);
        }
        let roots: Vec<usize> = (0..n).filter(|&u| !self.has_parent[u]).collect();
        let root = match roots.len() {
            0 => return Err(TreeError::CycleDetected),
            1 => roots[0],
            _ => return Err(TreeError::MultipleRoots),
        };
        for (u, ch) in self.children.iter().enumerate() {
            if ch.len() > max_outdegree {
                return Err(TreeError::OutdegreeExceeded { node: u, degree: ch.len() });
            }
        }
        // preorder renumbering; unreachable nodes imply a cycle among them
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        let mut seen = vec![false; n];
        while let Some(u) = stack.pop() {
            if seen[u] {
                return Err(TreeError::CycleDetected);
            }
            seen[u] = true;
            order.push(u);
            for &c in self.children[u].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != n {
            return Err(TreeError::CycleDetected);
        }
        let mut new_id = vec![0usize; n];
        for (rank, &u) in order.iter().enumerate() {
            new_id[u] = rank + 1;
        }
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for &u in &order {
            let nu = new_id[u];
            for &c in &self.children[u] {
                parent[new_id[c] - 1] = Some(NodeId(nu));
                children[nu - 1].push(NodeId(new_id[c]));
            }
        }
        let mut labels_opt: Vec<Option<L>> = self.labels.into_iter().map(Some).collect();
        let mut labels = Vec::with_capacity(n);
        for &u in &order {
            labels.push(labels_opt[u].take().expect("each raw node visited once"));
        }
        Ok(Tree { parent, children, labels })
    }
}

impl<L> Tree<L> {
    /// Builds and validates a tree directly from a label list and a parent
    /// map (`parent_of[i]` is the raw index of node i's parent).
    pub fn from_parents(
        labels: Vec<L>,
        parent_of: &[Option<usize>],
        max_outdegree: usize,
    ) -> Result<Self, TreeError> {
        if labels.len() != parent_of.len() {
            return Err(TreeError::InconsistentEdges);
        }
        let mut b = TreeBuilder::new();
        for l in labels {
            b.add_node(l);
        }
        for (child, &p) in parent_of.iter().enumerate() {
            if let Some(p) = p {
                b.add_edge(p, child)?;
            }
        }
        b.validate(max_outdegree)
    }

    /// Single-node tree.
    pub fn leaf(label: L) -> Self {
        Tree { parent: vec![None], children: vec![Vec::new()], labels: vec![label] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a validated tree always has a root
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.len()).map(NodeId)
    }

    pub fn parent(&self, u: NodeId) -> Option<NodeId> {
        self.parent[u.idx()]
    }

    pub fn children(&self, u: NodeId) -> &[NodeId] {
        &self.children[u.idx()]
    }

    pub fn label(&self, u: NodeId) -> &L {
        &self.labels[u.idx()]
    }

    pub fn is_leaf(&self, u: NodeId) -> bool {
        self.children[u.idx()].is_empty()
    }

    pub fn max_outdegree(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Depth of a node; the root has depth 0.
    pub fn depth(&self, u: NodeId) -> usize {
        let mut d = 0;
        let mut cur = u;
        while let Some(p) = self.parent(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    /// Number of nodes in the subtree rooted at `u` (including `u`).
    pub fn subtree_size(&self, u: NodeId) -> usize {
        1 + self.children(u).iter().map(|&c| self.subtree_size(c)).sum::<usize>()
    }

    /// True iff `v` lies in the subtree rooted at `u`.
    pub fn is_descendant_or_self(&self, u: NodeId, v: NodeId) -> bool {
        let mut cur = Some(v);
        while let Some(w) = cur {
            if w == u {
                return true;
            }
            cur = self.parent(w);
        }
        false
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.schedule(Direction::TopDown)
            .into_iter()
            .filter(|&u| self.is_leaf(u))
            .collect()
    }

    /// Node visit order for unfolding a cell over the tree. Deterministic:
    /// children are visited in stored order. Bottom-up is a postorder,
    /// top-down a preorder.
    pub fn schedule(&self, direction: Direction) -> Vec<NodeId> {
        let mut pre = Vec::with_capacity(self.len());
        let mut stack = vec![self.root()];
        while let Some(u) = stack.pop() {
            pre.push(u);
            for &c in self.children(u).iter().rev() {
                stack.push(c);
            }
        }
        match direction {
            Direction::TopDown => pre,
            Direction::BottomUp => {
                // reverse preorder with children reversed = postorder
                let mut post = Vec::with_capacity(self.len());
                let mut stack = vec![self.root()];
                while let Some(u) = stack.pop() {
                    post.push(u);
                    for &c in self.children(u) {
                        stack.push(c);
                    }
                }
                post.reverse();
                post
            }
        }
    }

    /// Swaps two entries of `u`'s child list in place. Node identities are
    /// unchanged, so this is the controlled way to probe child-order
    /// sensitivity. Panics if an index is out of range.
    pub fn swap_children(&mut self, u: NodeId, i: usize, j: usize) {
        self.children[u.idx()].swap(i, j);
    }

    /// The same structure with labels erased.
    pub fn skeleton(&self) -> Skeleton {
        Tree {
            parent: self.parent.clone(),
            children: self.children.clone(),
            labels: vec![(); self.len()],
        }
    }

    /// The same structure with labels transformed node by node.
    pub fn map_labels<M, F: FnMut(NodeId, &L) -> M>(&self, mut f: F) -> Tree<M> {
        Tree {
            parent: self.parent.clone(),
            children: self.children.clone(),
            labels: self.node_ids().map(|u| f(u, self.label(u))).collect(),
        }
    }

    /// The same structure relabeled from a dense per-node vector
    /// (`labels[id-1]` becomes the label of node `id`).
    pub fn with_labels<M>(&self, labels: Vec<M>) -> Tree<M> {
        assert_eq!(labels.len(), self.len());
        Tree { parent: self.parent.clone(), children: self.children.clone(), labels }
    }

    fn canonical_code(&self, u: NodeId, out: &mut String) {
        let mut codes: Vec<String> = self
            .children(u)
            .iter()
            .map(|&c| {
                let mut s = String::new();
                self.canonical_code(c, &mut s);
                s
            })
            .collect();
        codes.sort();
        out.push('(');
        for c in codes {
            out.push_str(&c);
        }
        out.push(')');
    }
}

/// Tree isomorphism check. In ordered mode two trees are isomorphic iff
/// their skeletons agree position by position; in unordered mode a bijection
/// between node sets preserving edges suffices, decided via canonical
/// encodings of the rooted trees.
pub fn is_isomorphic<A, B>(a: &Tree<A>, b: &Tree<B>, ordered: bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    if ordered {
        ordered_eq(a, a.root(), b, b.root())
    } else {
        let mut ca = String::new();
        let mut cb = String::new();
        a.canonical_code(a.root(), &mut ca);
        b.canonical_code(b.root(), &mut cb);
        ca == cb
    }
}

fn ordered_eq<A, B>(a: &Tree<A>, u: NodeId, b: &Tree<B>, v: NodeId) -> bool {
    let (ca, cb) = (a.children(u), b.children(v));
    ca.len() == cb.len() && ca.iter().zip(cb).all(|(&x, &y)| ordered_eq(a, x, b, y))
}

/// Dense per-node map, keyed by [`NodeId`].
pub type NodeMap<T> = BTreeMap<NodeId, T>;
