//! Output heads for the three transduction types and the composed
//! encode-then-output pipeline.
//!
//! Supersource reads one vector per tree (the root's hidden state for
//! bottom-up encodings, the mean of all hidden states for top-down) and
//! classifies it through a log-softmax layer. Relabel emits a log-softmax
//! class distribution per masked node. Prune emits a keep probability per
//! node through a sigmoid; a probability below 0.5 drops the node, which is
//! then marked NULL in the output tree.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::cells::{encode, Cell, CellError, Encoding, InputEncoder};
use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor, TensorError, ValueId};
use crate::tree::{Direction, NodeId, NodeLabel, Tree};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskError {
    Cell(CellError),
    Tensor(TensorError),
    EmptyMask,
    LabelOutOfRange { label: usize, alphabet: usize },
    MissingTarget,
}

impl From<CellError> for TaskError {
    fn from(e: CellError) -> Self {
        TaskError::Cell(e)
    }
}

impl From<TensorError> for TaskError {
    fn from(e: TensorError) -> Self {
        TaskError::Tensor(e)
    }
}

impl fmt::Display for TaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskError::Cell(e) => write!(f, "{e}"),
            TaskError::Tensor(e) => write!(f, "{e}"),
            TaskError::EmptyMask => write!(f, "relabel mask selects no node"),
            TaskError::LabelOutOfRange { label, alphabet } => {
                write!(f, "label {label} outside alphabet of size {alphabet}")
            }
            TaskError::MissingTarget => write!(f, "sample target does not match the task kind"),
        }
    }
}

impl core::error::Error for TaskError {}

/// Which nodes a relabel head predicts for.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    /// Non-leaf nodes (the usual setup: words observed, categories inferred).
    InternalNodes,
    AllNodes,
    Explicit(BTreeSet<NodeId>),
}

impl MaskPolicy {
    pub fn mask<L>(&self, tree: &Tree<L>) -> BTreeSet<NodeId> {
        match self {
            MaskPolicy::InternalNodes => {
                let set: BTreeSet<NodeId> = tree.node_ids().filter(|&u| !tree.is_leaf(u)).collect();
                if set.is_empty() {
                    // degenerate single-node tree: fall back to the root
                    [tree.root()].into_iter().collect()
                } else {
                    set
                }
            }
            MaskPolicy::AllNodes => tree.node_ids().collect(),
            MaskPolicy::Explicit(s) => s.clone(),
        }
    }
}

/// Keep threshold for pruning: a keep probability strictly below this value
/// drops the node; exactly the threshold keeps it.
pub const PRUNE_THRESHOLD: f64 = 0.5;

/// Transduction kind plus its head bindings.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Whole-tree classification over `classes` labels.
    Supersource { classes: usize },
    /// Per-node classification over `classes` labels on the masked nodes.
    Relabel { classes: usize, mask: MaskPolicy },
    /// Per-node keep/drop decisions. With `subtree_consistent` every
    /// descendant of a dropped node is dropped as well (off by default:
    /// raw per-node decisions are what the evaluation operates on).
    Prune { subtree_consistent: bool },
}

impl TaskSpec {
    pub fn head_output_dim(&self) -> usize {
        match self {
            TaskSpec::Supersource { classes } | TaskSpec::Relabel { classes, .. } => *classes,
            TaskSpec::Prune { .. } => 1,
        }
    }
}

/// Affine projection from a hidden state (or pooled state) to output scores.
#[derive(Debug, Clone)]
pub struct Head {
    pub proj: ParamId,
    pub bias: ParamId,
    pub out_dim: usize,
}

impl Head {
    pub fn new(store: &mut ParamStore, task: &TaskSpec, hidden: usize, rng: &mut impl Rng) -> Self {
        let out_dim = task.head_output_dim();
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let data: Vec<f64> = (0..out_dim * hidden).map(|_| rng.random_range(-bound..bound)).collect();
        Head {
            proj: store.add(
                "head.proj",
                ParamKind::Weight,
                Tensor::new(out_dim, hidden, data).expect("finite init"),
            ),
            bias: store.add("head.bias", ParamKind::Bias, Tensor::zeros(out_dim, 1)),
            out_dim,
        }
    }

    fn scores(&self, g: &mut Graph, store: &ParamStore, state: ValueId) -> Result<ValueId, TensorError> {
        let p = g.param(store, self.proj);
        let b = g.param(store, self.bias);
        g.affine(p, state, b)
    }
}

/// Graph-level outputs of a head, kept around so losses can be attached to
/// the same graph.
#[derive(Debug, Clone)]
pub enum TaskOutputs {
    /// Log-probability vector for the whole tree.
    Supersource { log_probs: ValueId },
    /// Log-probability vector per masked node, in ascending node-id order.
    Relabel { per_node: Vec<(NodeId, ValueId)> },
    /// Keep logit (1x1) per node, in ascending node-id order.
    Prune { logits: Vec<(NodeId, ValueId)> },
}

/// Readout + scores for a supersource task: root state for bottom-up,
/// mean of all hidden states for top-down.
pub fn supersource_outputs(
    g: &mut Graph,
    store: &ParamStore,
    encoding: &Encoding,
    direction: Direction,
    head: &Head,
    hidden: usize,
) -> Result<TaskOutputs, TaskError> {
    let readout = match direction {
        Direction::BottomUp => encoding.state(NodeId::ROOT).h,
        Direction::TopDown => {
            let hs: Vec<ValueId> = encoding.iter().map(|(_, s)| s.h).collect();
            let total = g.sum_list(&hs, hidden, 1)?;
            g.scale(total, 1.0 / encoding.len() as f64)
        }
    };
    let scores = head.scores(g, store, readout)?;
    let log_probs = g.log_softmax(scores)?;
    Ok(TaskOutputs::Supersource { log_probs })
}

/// Per-masked-node log-probabilities for a relabel task.
pub fn relabel_outputs(
    g: &mut Graph,
    store: &ParamStore,
    encoding: &Encoding,
    head: &Head,
    mask: &BTreeSet<NodeId>,
) -> Result<TaskOutputs, TaskError> {
    if mask.is_empty() {
        return Err(TaskError::EmptyMask);
    }
    let mut per_node = Vec::with_capacity(mask.len());
    for &u in mask {
        let scores = head.scores(g, store, encoding.state(u).h)?;
        per_node.push((u, g.log_softmax(scores)?));
    }
    Ok(TaskOutputs::Relabel { per_node })
}

/// Per-node keep logits for a prune task.
pub fn prune_outputs(
    g: &mut Graph,
    store: &ParamStore,
    encoding: &Encoding,
    head: &Head,
) -> Result<TaskOutputs, TaskError> {
    let mut logits = Vec::with_capacity(encoding.len());
    for (u, s) in encoding.iter() {
        logits.push((u, head.scores(g, store, s.h)?));
    }
    Ok(TaskOutputs::Prune { logits })
}

/// Concrete prediction extracted from a forward pass.
#[derive(Debug, Clone)]
pub enum Prediction {
    Supersource {
        class: usize,
        log_probs: Vec<f64>,
    },
    Relabel {
        /// `(node, argmax class, log-probability vector)` per masked node.
        per_node: Vec<(NodeId, usize, Vec<f64>)>,
        /// Input tree with predicted labels on masked nodes, copied labels
        /// elsewhere.
        output: Tree<NodeLabel>,
    },
    Prune {
        /// Keep probability per node, indexed by `id - 1`.
        keep_prob: Vec<f64>,
        /// Keep decision per node (probability >= threshold keeps).
        keep: Vec<bool>,
        /// Input skeleton with NULL labels on dropped nodes.
        output: Tree<NodeLabel>,
        /// Labels of kept leaves in left-to-right order.
        compressed: Vec<NodeLabel>,
    },
}

/// Lowest index among the maxima, so ties resolve to the smallest class.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Turns graph outputs into a concrete [`Prediction`].
pub fn extract_prediction(
    g: &Graph,
    tree: &Tree<NodeLabel>,
    task: &TaskSpec,
    outputs: &TaskOutputs,
) -> Prediction {
    match (task, outputs) {
        (TaskSpec::Supersource { .. }, TaskOutputs::Supersource { log_probs }) => {
            let lp = g.value(*log_probs).values().to_vec();
            Prediction::Supersource { class: argmax(&lp), log_probs: lp }
        }
        (TaskSpec::Relabel { .. }, TaskOutputs::Relabel { per_node }) => {
            let per_node: Vec<(NodeId, usize, Vec<f64>)> = per_node
                .iter()
                .map(|(u, lp)| {
                    let v = g.value(*lp).values().to_vec();
                    (*u, argmax(&v), v)
                })
                .collect();
            let output = tree.map_labels(|u, old| {
                per_node
                    .iter()
                    .find(|(m, _, _)| *m == u)
                    .map(|(_, class, _)| NodeLabel::Categorical(*class))
                    .unwrap_or_else(|| old.clone())
            });
            Prediction::Relabel { per_node, output }
        }
        (TaskSpec::Prune { subtree_consistent }, TaskOutputs::Prune { logits }) => {
            let mut keep_prob = vec![0.0; tree.len()];
            for (u, z) in logits {
                let z = g.value(*z).get(0);
                keep_prob[u.0 - 1] = 1.0 / (1.0 + libm::exp(-z));
            }
            let mut keep: Vec<bool> = keep_prob.iter().map(|&p| p >= PRUNE_THRESHOLD).collect();
            if *subtree_consistent {
                for u in tree.schedule(Direction::TopDown) {
                    if let Some(p) = tree.parent(u) {
                        if !keep[p.0 - 1] {
                            keep[u.0 - 1] = false;
                        }
                    }
                }
            }
            let output = tree.map_labels(|u, old| {
                if keep[u.0 - 1] {
                    old.clone()
                } else {
                    NodeLabel::Null
                }
            });
            let compressed = tree
                .leaves()
                .into_iter()
                .filter(|u| keep[u.0 - 1])
                .map(|u| tree.label(u).clone())
                .collect();
            Prediction::Prune { keep_prob, keep, output, compressed }
        }
        _ => unreachable!("task kind and outputs always constructed together"),
    }
}

/// Full pipeline: encode the tree, apply the task's head, extract the
/// prediction. Also returns the graph and raw outputs so a loss can be
/// attached (training) or the graph dropped (inference).
pub fn compose(
    g: &mut Graph,
    store: &ParamStore,
    tree: &Tree<NodeLabel>,
    cell: &Cell,
    encoder: &InputEncoder,
    head: &Head,
    task: &TaskSpec,
) -> Result<(TaskOutputs, Prediction), TaskError> {
    let direction = cell.direction();
    let encoding = encode(g, store, tree, cell, encoder, direction)?;
    let outputs = match task {
        TaskSpec::Supersource { .. } => {
            supersource_outputs(g, store, &encoding, direction, head, cell.hidden())?
        }
        TaskSpec::Relabel { mask, .. } => {
            let m = mask.mask(tree);
            relabel_outputs(g, store, &encoding, head, &m)?
        }
        TaskSpec::Prune { .. } => prune_outputs(g, store, &encoding, head)?,
    };
    let prediction = extract_prediction(g, tree, task, &outputs);
    Ok((outputs, prediction))
}

/// Ground truth paired with an input tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Supersource class.
    Class(usize),
    /// Per-node class, indexed by `id - 1`; `None` on unmasked nodes.
    Labels(Vec<Option<usize>>),
    /// Per-node keep flag, indexed by `id - 1`.
    Keep(Vec<bool>),
}

/// One corpus record.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tree: Tree<NodeLabel>,
    pub target: Target,
}

impl Sample {
    /// Token sequence of the reference compression: labels of target-kept
    /// leaves, left to right.
    pub fn reference_compression(&self) -> Option<Vec<NodeLabel>> {
        match &self.target {
            Target::Keep(keep) => Some(
                self.tree
                    .leaves()
                    .into_iter()
                    .filter(|u| keep[u.0 - 1])
                    .map(|u| self.tree.label(u).clone())
                    .collect(),
            ),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ChildSumCell, TdCell};
    use crate::tree::is_isomorphic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tree3() -> Tree<NodeLabel> {
        Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1), NodeLabel::Categorical(2)],
            &[None, Some(0), Some(0)],
            3,
        )
        .unwrap()
    }

    fn setup(task: &TaskSpec, seed: u64) -> (ParamStore, Cell, InputEncoder, Head) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = Cell::ChildSum(ChildSumCell::new(&mut store, 4, 3, &mut rng));
        let head = Head::new(&mut store, task, 4, &mut rng);
        (store, cell, InputEncoder::OneHot { alphabet: 3 }, head)
    }

    #[test]
    fn supersource_uniform_scores_with_zero_head() {
        let task = TaskSpec::Supersource { classes: 3 };
        let (mut store, cell, enc, head) = setup(&task, 1);
        store.get_mut(head.proj).value.fill(0.0);
        store.get_mut(head.bias).value.fill(0.0);
        let mut g = Graph::new();
        let (_, pred) = compose(&mut g, &store, &tree3(), &cell, &enc, &head, &task).unwrap();
        match pred {
            Prediction::Supersource { class, log_probs } => {
                assert_eq!(class, 0, "ties resolve to the lowest class index");
                for lp in log_probs {
                    assert!((lp + (3.0f64).ln()).abs() < 1e-12);
                }
            }
            _ => panic!("wrong prediction kind"),
        }
    }

    #[test]
    fn supersource_readouts_coincide_on_single_node() {
        let task = TaskSpec::Supersource { classes: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let td = Cell::TopDown(TdCell::new(&mut store, 4, 3, &mut rng));
        let head = Head::new(&mut store, &task, 4, &mut rng);
        let enc = InputEncoder::OneHot { alphabet: 3 };
        let tree = Tree::leaf(NodeLabel::Categorical(1));
        // TD mean-of-one-state readout must equal the root state readout:
        // run the encoding once and compare both pooled vectors directly.
        let mut g = Graph::new();
        let encoding = encode(&mut g, &store, &tree, &td, &enc, Direction::TopDown).unwrap();
        let root_h = encoding.state(NodeId::ROOT).h;
        let out = supersource_outputs(&mut g, &store, &encoding, Direction::TopDown, &head, 4).unwrap();
        let TaskOutputs::Supersource { log_probs } = out else { panic!() };
        let scores = head.scores(&mut g, &store, root_h).unwrap();
        let direct = g.log_softmax(scores).unwrap();
        assert_eq!(g.value(log_probs), g.value(direct));
    }

    #[test]
    fn log_probs_normalize() {
        let task = TaskSpec::Supersource { classes: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cell = Cell::ChildSum(ChildSumCell::new(&mut store, 4, 3, &mut rng));
        let head = Head::new(&mut store, &task, 4, &mut rng);
        let enc = InputEncoder::OneHot { alphabet: 3 };
        let mut g = Graph::new();
        let (_, pred) = compose(&mut g, &store, &tree3(), &cell, &enc, &head, &task).unwrap();
        let Prediction::Supersource { log_probs, .. } = pred else { panic!() };
        let lse: f64 = log_probs.iter().map(|lp| lp.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-9);
    }

    #[test]
    fn relabel_mask_and_isomorphism() {
        let task = TaskSpec::Relabel { classes: 4, mask: MaskPolicy::InternalNodes };
        let (store, cell, enc, head) = setup(&task, 4);
        let tree = tree3();
        let mut g = Graph::new();
        let (_, pred) = compose(&mut g, &store, &tree, &cell, &enc, &head, &task).unwrap();
        let Prediction::Relabel { per_node, output } = pred else { panic!() };
        assert_eq!(per_node.len(), 1, "only the root is internal in a 3-node star");
        assert_eq!(per_node[0].0, NodeId(1));
        assert!(is_isomorphic(&tree, &output, true));
        // leaves keep their original labels
        assert_eq!(*output.label(NodeId(2)), NodeLabel::Categorical(1));
    }

    #[test]
    fn relabel_explicit_empty_mask_is_an_error() {
        let task = TaskSpec::Relabel { classes: 4, mask: MaskPolicy::Explicit(BTreeSet::new()) };
        let (store, cell, enc, head) = setup(&task, 5);
        let mut g = Graph::new();
        let err = compose(&mut g, &store, &tree3(), &cell, &enc, &head, &task).unwrap_err();
        assert_eq!(err, TaskError::EmptyMask);
    }

    #[test]
    fn prune_zero_head_keeps_everything() {
        // zero parameters give probability exactly 0.5, which is kept
        let task = TaskSpec::Prune { subtree_consistent: false };
        let (mut store, cell, enc, head) = setup(&task, 6);
        store.get_mut(head.proj).value.fill(0.0);
        store.get_mut(head.bias).value.fill(0.0);
        let mut g = Graph::new();
        let (_, pred) = compose(&mut g, &store, &tree3(), &cell, &enc, &head, &task).unwrap();
        let Prediction::Prune { keep_prob, keep, compressed, .. } = pred else { panic!() };
        assert!(keep_prob.iter().all(|&p| p == 0.5));
        assert!(keep.iter().all(|&k| k));
        assert_eq!(compressed.len(), 2);
    }

    #[test]
    fn prune_large_negative_bias_drops_everything() {
        let task = TaskSpec::Prune { subtree_consistent: false };
        let (mut store, cell, enc, head) = setup(&task, 7);
        store.get_mut(head.bias).value.fill(-50.0);
        let mut g = Graph::new();
        let tree = tree3();
        let (_, pred) = compose(&mut g, &store, &tree, &cell, &enc, &head, &task).unwrap();
        let Prediction::Prune { keep, output, compressed, .. } = pred else { panic!() };
        assert!(keep.iter().all(|&k| !k));
        assert!(compressed.is_empty());
        assert!(output.node_ids().all(|u| output.label(u).is_null()));
        assert!(is_isomorphic(&tree, &output, true));
    }

    #[test]
    fn subtree_consistent_mode_drops_descendants() {
        let task = TaskSpec::Prune { subtree_consistent: true };
        let (store, cell, enc, head) = setup(&task, 8);
        // chain of 3 so the middle node has a descendant
        let tree = Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1), NodeLabel::Categorical(2)],
            &[None, Some(0), Some(1)],
            3,
        )
        .unwrap();
        let mut g = Graph::new();
        let (outputs, _) = compose(&mut g, &store, &tree, &cell, &enc, &head, &task).unwrap();
        // force a drop at the root by rebuilding the decision path manually
        let TaskOutputs::Prune { logits } = outputs else { panic!() };
        let mut fake = Graph::new();
        let neg = fake.input(Tensor::scalar(-10.0).unwrap());
        let pos = fake.input(Tensor::scalar(10.0).unwrap());
        let forced = TaskOutputs::Prune {
            logits: vec![(NodeId(1), neg), (logits[1].0, pos), (logits[2].0, pos)],
        };
        let pred = extract_prediction(&fake, &tree, &task, &forced);
        let Prediction::Prune { keep, .. } = pred else { panic!() };
        assert_eq!(keep, vec![false, false, false]);
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let v = vec![0.1, 0.9, 0.3];
        let shifted: Vec<f64> = v.iter().map(|x| x + 123.0).collect();
        assert_eq!(argmax(&v), argmax(&shifted));
    }
}
