//! The three TreeLSTM cell variants and the encoder that unfolds a cell
//! over a tree to produce per-node `(h, c)` states.
//!
//! Top-down processes root to leaves (a node's state depends on its
//! parent's); Child-Sum and N-ary process leaves to root. Boundary states
//! (the root's absent parent, leaves' absent children, unfilled N-ary
//! positions) are zero vectors, which makes the empty-sum and missing-term
//! cases of the state equations exact.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor, TensorError, ValueId};
use crate::tree::{Direction, NodeId, NodeLabel, Tree};

#[derive(Debug, Clone, PartialEq)]
pub enum CellError {
    Tensor(TensorError),
    ArityExceeded { node: usize, degree: usize, max: usize },
    DirectionMismatch { cell: Direction, requested: Direction },
    UnsupportedLabel,
}

impl From<TensorError> for CellError {
    fn from(e: TensorError) -> Self {
        CellError::Tensor(e)
    }
}

impl fmt::Display for CellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellError::Tensor(e) => write!(f, "{e}"),
            CellError::ArityExceeded { node, degree, max } => {
                write!(f, "node {node} has {degree} children, cell supports {max}")
            }
            CellError::DirectionMismatch { cell, requested } => {
                write!(f, "cell processes {cell:?} but {requested:?} was requested")
            }
            CellError::UnsupportedLabel => write!(f, "label kind not covered by the input encoder"),
        }
    }
}

impl core::error::Error for CellError {}

/// Per-node hidden and memory-cell state, as graph values.
#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub h: ValueId,
    pub c: ValueId,
}

/// One gate's parameter triple: input weight `W (H,d)`, recurrent weight
/// `U (H,H)` and bias `b (H,1)`.
#[derive(Debug, Clone, Copy)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("finite init")
}

fn new_gate(
    store: &mut ParamStore,
    prefix: &str,
    gate: &str,
    hidden: usize,
    input_dim: usize,
    rng: &mut impl Rng,
) -> Gate {
    let bound = 1.0 / libm::sqrt(hidden as f64);
    Gate {
        w: store.add(format!("{prefix}.W_{gate}"), ParamKind::Weight, init_matrix(rng, hidden, input_dim, bound)),
        u: store.add(format!("{prefix}.U_{gate}"), ParamKind::Weight, init_matrix(rng, hidden, hidden, bound)),
        b: store.add(format!("{prefix}.b_{gate}"), ParamKind::Bias, Tensor::zeros(hidden, 1)),
    }
}

/// Top-down cell: a node's state is computed from its input and its
/// parent's `(h, c)`. Structurally a standard sequence LSTM unfolded along
/// every root-to-leaf path.
#[derive(Debug, Clone)]
pub struct TdCell {
    hidden: usize,
    input_dim: usize,
    r: Gate,
    i: Gate,
    o: Gate,
    f: Gate,
}

impl TdCell {
    pub fn new(store: &mut ParamStore, hidden: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        TdCell {
            hidden,
            input_dim,
            r: new_gate(store, "td", "r", hidden, input_dim, rng),
            i: new_gate(store, "td", "i", hidden, input_dim, rng),
            o: new_gate(store, "td", "o", hidden, input_dim, rng),
            f: new_gate(store, "td", "f", hidden, input_dim, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn pre_activation(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        gate: &Gate,
        x: ValueId,
        h_pa: ValueId,
    ) -> Result<ValueId, TensorError> {
        let w = g.param(store, gate.w);
        let u = g.param(store, gate.u);
        let b = g.param(store, gate.b);
        let wx = g.matvec(w, x)?;
        let uh = g.matvec(u, h_pa)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    }

    /// One cell application; `parent` is the zero state for the root.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: ValueId,
        parent: NodeState,
    ) -> Result<NodeState, CellError> {
        let pre_r = self.pre_activation(g, store, &self.r, x, parent.h)?;
        let pre_i = self.pre_activation(g, store, &self.i, x, parent.h)?;
        let pre_o = self.pre_activation(g, store, &self.o, x, parent.h)?;
        let pre_f = self.pre_activation(g, store, &self.f, x, parent.h)?;
        let r = g.tanh(pre_r);
        let i = g.sigmoid(pre_i);
        let o = g.sigmoid(pre_o);
        let f = g.sigmoid(pre_f);
        let ir = g.mul(i, r)?;
        let fc = g.mul(f, parent.c)?;
        let c = g.add(ir, fc)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(NodeState { h, c })
    }
}

/// Child-Sum cell: gates read the sum of the children's hidden states and
/// one forget gate per child (shared parameters) reads that child's own
/// hidden state. Child contributions are always summed in ascending
/// child-id order, which makes permutation invariance exact.
#[derive(Debug, Clone)]
pub struct ChildSumCell {
    hidden: usize,
    input_dim: usize,
    r: Gate,
    i: Gate,
    o: Gate,
    f: Gate,
}

impl ChildSumCell {
    pub fn new(store: &mut ParamStore, hidden: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        ChildSumCell {
            hidden,
            input_dim,
            r: new_gate(store, "cs", "r", hidden, input_dim, rng),
            i: new_gate(store, "cs", "i", hidden, input_dim, rng),
            o: new_gate(store, "cs", "o", hidden, input_dim, rng),
            f: new_gate(store, "cs", "f", hidden, input_dim, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// One cell application over `children = [(child id, state)]`; leaves
    /// pass an empty list. The list may arrive in any order.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: ValueId,
        children: &[(NodeId, NodeState)],
    ) -> Result<NodeState, CellError> {
        let mut ordered: Vec<(NodeId, NodeState)> = children.to_vec();
        ordered.sort_by_key(|(id, _)| *id);

        let hs: Vec<ValueId> = ordered.iter().map(|(_, s)| s.h).collect();
        let h_tilde = g.sum_list(&hs, self.hidden, 1)?;

        let gate_pre = |g: &mut Graph, gate: &Gate, ctx: ValueId| -> Result<ValueId, TensorError> {
            let w = g.param(store, gate.w);
            let u = g.param(store, gate.u);
            let b = g.param(store, gate.b);
            let wx = g.matvec(w, x)?;
            let uh = g.matvec(u, ctx)?;
            let s = g.add(wx, uh)?;
            g.add(s, b)
        };
        let pre_r = gate_pre(g, &self.r, h_tilde)?;
        let pre_i = gate_pre(g, &self.i, h_tilde)?;
        let pre_o = gate_pre(g, &self.o, h_tilde)?;
        let r = g.tanh(pre_r);
        let i = g.sigmoid(pre_i);
        let o = g.sigmoid(pre_o);

        // one forget gate per child, shared parameters, applied to that
        // child's own hidden state
        let mut forget_terms = Vec::with_capacity(ordered.len());
        for (_, child) in &ordered {
            let pre_f = gate_pre(g, &self.f, child.h)?;
            let f = g.sigmoid(pre_f);
            forget_terms.push(g.mul(f, child.c)?);
        }
        let fsum = g.sum_list(&forget_terms, self.hidden, 1)?;
        let ir = g.mul(i, r)?;
        let c = g.add(ir, fsum)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(NodeState { h, c })
    }
}

/// N-ary cell: position-specific recurrent matrices `U_l` per gate and a
/// full `N x N` bank of forget-gate matrices `U_{kl}`, so the k-th child's
/// forget gate reads every sibling's hidden state. Absent positions
/// contribute zero.
#[derive(Debug, Clone)]
pub struct NaryCell {
    hidden: usize,
    input_dim: usize,
    arity: usize,
    w_r: ParamId,
    w_i: ParamId,
    w_o: ParamId,
    w_f: ParamId,
    u_r: Vec<ParamId>,
    u_i: Vec<ParamId>,
    u_o: Vec<ParamId>,
    /// u_f[k * arity + l] is the matrix applied to child l inside child k's
    /// forget gate.
    u_f: Vec<ParamId>,
    b_r: ParamId,
    b_i: ParamId,
    b_o: ParamId,
    b_f: ParamId,
}

impl NaryCell {
    pub fn new(
        store: &mut ParamStore,
        hidden: usize,
        input_dim: usize,
        arity: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let mut w = |name: &str| {
            store.add(format!("nary.W_{name}"), ParamKind::Weight, init_matrix(rng, hidden, input_dim, bound))
        };
        let (w_r, w_i, w_o, w_f) = (w("r"), w("i"), w("o"), w("f"));
        fn u_bank<R: Rng>(
            gate: &str,
            count: usize,
            hidden: usize,
            bound: f64,
            store: &mut ParamStore,
            rng: &mut R,
        ) -> Vec<ParamId> {
            (0..count)
                .map(|l| {
                    store.add(
                        format!("nary.U_{gate}{l}"),
                        ParamKind::Weight,
                        init_matrix(rng, hidden, hidden, bound),
                    )
                })
                .collect()
        }
        let u_r = u_bank("r", arity, hidden, bound, store, rng);
        let u_i = u_bank("i", arity, hidden, bound, store, rng);
        let u_o = u_bank("o", arity, hidden, bound, store, rng);
        let mut u_f = Vec::with_capacity(arity * arity);
        for k in 0..arity {
            for l in 0..arity {
                u_f.push(store.add(
                    format!("nary.U_f{k}_{l}"),
                    ParamKind::Weight,
                    init_matrix(rng, hidden, hidden, bound),
                ));
            }
        }
        let mut b = |name: &str| {
            store.add(format!("nary.b_{name}"), ParamKind::Bias, Tensor::zeros(hidden, 1))
        };
        let (b_r, b_i, b_o, b_f) = (b("r"), b("i"), b("o"), b("f"));
        NaryCell {
            hidden,
            input_dim,
            arity,
            w_r,
            w_i,
            w_o,
            w_f,
            u_r,
            u_i,
            u_o,
            u_f,
            b_r,
            b_i,
            b_o,
            b_f,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn gated_sum(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        w: ParamId,
        us: &[ParamId],
        b: ParamId,
        x: ValueId,
        children: &[Option<NodeState>],
    ) -> Result<ValueId, TensorError> {
        let wp = g.param(store, w);
        let wx = g.matvec(wp, x)?;
        let mut terms = vec![wx];
        for (l, child) in children.iter().enumerate() {
            if let Some(s) = child {
                let u = g.param(store, us[l]);
                terms.push(g.matvec(u, s.h)?);
            }
        }
        let bp = g.param(store, b);
        terms.push(bp);
        g.sum_list(&terms, self.hidden, 1)
    }

    /// One cell application over a positional child list of length `arity`
    /// (shorter lists are treated as left-aligned; `None` marks an absent
    /// position).
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: ValueId,
        children: &[Option<NodeState>],
    ) -> Result<NodeState, CellError> {
        if children.len() > self.arity {
            return Err(CellError::ArityExceeded {
                node: 0,
                degree: children.len(),
                max: self.arity,
            });
        }
        let mut slots: Vec<Option<NodeState>> = children.to_vec();
        slots.resize(self.arity, None);

        let pre_r = self.gated_sum(g, store, self.w_r, &self.u_r, self.b_r, x, &slots)?;
        let pre_i = self.gated_sum(g, store, self.w_i, &self.u_i, self.b_i, x, &slots)?;
        let pre_o = self.gated_sum(g, store, self.w_o, &self.u_o, self.b_o, x, &slots)?;
        let r = g.tanh(pre_r);
        let i = g.sigmoid(pre_i);
        let o = g.sigmoid(pre_o);

        // forget gate for position k sums U_{kl} h_l over all present l
        let mut forget_terms = Vec::new();
        for (k, slot) in slots.iter().enumerate() {
            let child = match slot {
                Some(s) => s,
                None => continue,
            };
            let row = &self.u_f[k * self.arity..(k + 1) * self.arity];
            let wp = g.param(store, self.w_f);
            let wx = g.matvec(wp, x)?;
            let mut terms = vec![wx];
            for (l, other) in slots.iter().enumerate() {
                if let Some(s) = other {
                    let u = g.param(store, row[l]);
                    terms.push(g.matvec(u, s.h)?);
                }
            }
            let bp = g.param(store, self.b_f);
            terms.push(bp);
            let pre_f = g.sum_list(&terms, self.hidden, 1)?;
            let f = g.sigmoid(pre_f);
            forget_terms.push(g.mul(f, child.c)?);
        }
        let fsum = g.sum_list(&forget_terms, self.hidden, 1)?;
        let ir = g.mul(i, r)?;
        let c = g.add(ir, fsum)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(NodeState { h, c })
    }
}

/// Any of the three cell variants.
#[derive(Debug, Clone)]
pub enum Cell {
    TopDown(TdCell),
    ChildSum(ChildSumCell),
    Nary(NaryCell),
}

impl Cell {
    pub fn direction(&self) -> Direction {
        match self {
            Cell::TopDown(_) => Direction::TopDown,
            Cell::ChildSum(_) | Cell::Nary(_) => Direction::BottomUp,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::TopDown(c) => c.hidden(),
            Cell::ChildSum(c) => c.hidden(),
            Cell::Nary(c) => c.hidden(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Cell::TopDown(c) => c.input_dim(),
            Cell::ChildSum(c) => c.input_dim(),
            Cell::Nary(c) => c.input_dim(),
        }
    }
}

/// Maps node labels to the cell's input vectors. Mixed corpora (dense
/// leaves, categorical internals) are unified by per-kind affine
/// projections into the common input dimension.
#[derive(Debug, Clone)]
pub enum InputEncoder {
    /// Dense labels of the cell's input dimension, used as-is.
    Dense { dim: usize },
    /// Categorical labels one-hot encoded; input dimension = alphabet size.
    OneHot { alphabet: usize },
    /// Dense labels projected by `dense_proj (dim, dense_dim)` and
    /// categorical one-hots projected by `cat_proj (dim, alphabet)`.
    Projected {
        dim: usize,
        dense_dim: usize,
        alphabet: usize,
        dense_proj: ParamId,
        cat_proj: ParamId,
    },
}

impl InputEncoder {
    pub fn projected(
        store: &mut ParamStore,
        dim: usize,
        dense_dim: usize,
        alphabet: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(dim as f64);
        InputEncoder::Projected {
            dim,
            dense_dim,
            alphabet,
            dense_proj: store.add(
                "input.dense_proj",
                ParamKind::Weight,
                init_matrix(rng, dim, dense_dim, bound),
            ),
            cat_proj: store.add(
                "input.cat_proj",
                ParamKind::Weight,
                init_matrix(rng, dim, alphabet, bound),
            ),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputEncoder::Dense { dim } => *dim,
            InputEncoder::OneHot { alphabet } => *alphabet,
            InputEncoder::Projected { dim, .. } => *dim,
        }
    }

    pub fn encode_label(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        label: &NodeLabel,
    ) -> Result<ValueId, CellError> {
        match (self, label) {
            (InputEncoder::Dense { dim }, NodeLabel::Dense(v)) => {
                if v.len() != *dim {
                    return Err(TensorError::ShapeMismatch { expected: (*dim, 1), got: (v.len(), 1) }.into());
                }
                Ok(g.input(Tensor::vector(v.clone())?))
            }
            (InputEncoder::OneHot { alphabet }, NodeLabel::Categorical(s)) => {
                if *s >= *alphabet {
                    return Err(TensorError::IndexOutOfRange { index: *s, len: *alphabet }.into());
                }
                let mut v = vec![0.0; *alphabet];
                v[*s] = 1.0;
                Ok(g.input(Tensor::vector(v)?))
            }
            (InputEncoder::Projected { dense_dim, dense_proj, .. }, NodeLabel::Dense(v)) => {
                if v.len() != *dense_dim {
                    return Err(TensorError::ShapeMismatch { expected: (*dense_dim, 1), got: (v.len(), 1) }.into());
                }
                let raw = g.input(Tensor::vector(v.clone())?);
                let p = g.param(store, *dense_proj);
                Ok(g.matvec(p, raw)?)
            }
            (InputEncoder::Projected { alphabet, cat_proj, .. }, NodeLabel::Categorical(s)) => {
                if *s >= *alphabet {
                    return Err(TensorError::IndexOutOfRange { index: *s, len: *alphabet }.into());
                }
                let mut v = vec![0.0; *alphabet];
                v[*s] = 1.0;
                let raw = g.input(Tensor::vector(v)?);
                let p = g.param(store, *cat_proj);
                Ok(g.matvec(p, raw)?)
            }
            _ => Err(CellError::UnsupportedLabel),
        }
    }
}

/// Per-node states for a whole tree, indexed by node id.
#[derive(Debug, Clone)]
pub struct Encoding {
    states: Vec<NodeState>,
}

impl Encoding {
    pub fn state(&self, u: NodeId) -> NodeState {
        self.states[u.0 - 1]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeState)> + '_ {
        self.states.iter().enumerate().map(|(i, &s)| (NodeId(i + 1), s))
    }
}

/// Unfolds `cell` over `tree` in schedule order and returns every node's
/// state. `direction` must match the cell's processing direction.
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    tree: &Tree<NodeLabel>,
    cell: &Cell,
    encoder: &InputEncoder,
    direction: Direction,
) -> Result<Encoding, CellError> {
    if cell.direction() != direction {
        return Err(CellError::DirectionMismatch { cell: cell.direction(), requested: direction });
    }
    if let Cell::Nary(nary) = cell {
        if tree.max_outdegree() > nary.arity() {
            let node = tree
                .node_ids()
                .find(|&u| tree.children(u).len() > nary.arity())
                .map(|u| u.0)
                .unwrap_or(0);
            return Err(CellError::ArityExceeded {
                node,
                degree: tree.max_outdegree(),
                max: nary.arity(),
            });
        }
    }
    let hidden = cell.hidden();
    let zero = NodeState { h: g.zeros(hidden, 1), c: g.zeros(hidden, 1) };
    let mut states: Vec<Option<NodeState>> = vec![None; tree.len()];
    for u in tree.schedule(direction) {
        let x = encoder.encode_label(g, store, tree.label(u))?;
        let state = match cell {
            Cell::TopDown(td) => {
                let parent = match tree.parent(u) {
                    Some(p) => states[p.0 - 1].expect("parent scheduled first"),
                    None => zero,
                };
                td.step(g, store, x, parent)?
            }
            Cell::ChildSum(cs) => {
                let children: Vec<(NodeId, NodeState)> = tree
                    .children(u)
                    .iter()
                    .map(|&c| (c, states[c.0 - 1].expect("children scheduled first")))
                    .collect();
                cs.step(g, store, x, &children)?
            }
            Cell::Nary(nary) => {
                let children: Vec<Option<NodeState>> = tree
                    .children(u)
                    .iter()
                    .map(|&c| states[c.0 - 1])
                    .collect();
                nary.step(g, store, x, &children)?
            }
        };
        states[u.0 - 1] = Some(state);
    }
    Ok(Encoding { states: states.into_iter().map(|s| s.expect("schedule covers all nodes")).collect() })
}
