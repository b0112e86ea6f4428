//! Synthetic task corpora for desk-scale verification.
//!
//! Each generator emits random trees (out-degree at most 3, depth at most
//! 6) whose targets are exact functions of the tree shape or labels, so an
//! independent brute-force pass can recompute them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treelstm_core::tree::{NodeId, Tree, TreeBuilder};

use crate::formats::{serialize_tree, NULL_TOKEN};

pub const SYNTH_MAX_OUTDEGREE: usize = 3;
pub const SYNTH_MAX_DEPTH: usize = 6;
/// Node budget per generated tree; keeps training runs in seconds.
const NODE_BUDGET: usize = 15;
/// Leaf tokens planted as "keep" markers for the pruning task.
pub const KEYWORDS: [usize; 3] = [0, 1, 2];
/// Token alphabet size for the pruning task.
pub const PRUNE_ALPHABET: usize = 10;
/// Node-label alphabet size for the relabeling and classification tasks.
pub const RELABEL_ALPHABET: usize = 8;
/// Depth targets saturate here, so the class count is DEPTH_CAP + 1.
pub const DEPTH_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    DepthRelabel,
    SubtreeParityRelabel,
    KeywordPrune,
    ClassByRootArity,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::DepthRelabel => "depth_relabel",
            SynthKind::SubtreeParityRelabel => "subtree_parity_relabel",
            SynthKind::KeywordPrune => "keyword_prune",
            SynthKind::ClassByRootArity => "class_by_root_arity",
        }
    }

    /// Input node-label alphabet size.
    pub fn alphabet(self) -> usize {
        match self {
            SynthKind::KeywordPrune => PRUNE_ALPHABET,
            _ => RELABEL_ALPHABET,
        }
    }

    /// Target class count (keep/drop counts as 2 for the pruning task).
    pub fn classes(self) -> usize {
        match self {
            SynthKind::DepthRelabel => DEPTH_CAP + 1,
            SynthKind::SubtreeParityRelabel => 2,
            SynthKind::KeywordPrune => 2,
            SynthKind::ClassByRootArity => SYNTH_MAX_OUTDEGREE + 1,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth_relabel" => Ok(SynthKind::DepthRelabel),
            "subtree_parity_relabel" => Ok(SynthKind::SubtreeParityRelabel),
            "keyword_prune" => Ok(SynthKind::KeywordPrune),
            "class_by_root_arity" => Ok(SynthKind::ClassByRootArity),
            other => Err(format!("unknown synthetic task '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub class: Option<usize>,
    pub input: Tree<String>,
    pub target: Option<Tree<String>>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub kind: SynthKind,
    pub records: Vec<SynthRecord>,
}

impl SynthCorpus {
    /// One record per line, in the matching corpus file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            match (&r.class, &r.target) {
                (Some(c), None) => {
                    out.push_str(&format!("{}\t{}\n", c, serialize_tree(&r.input)))
                }
                (None, Some(t)) => out.push_str(&format!(
                    "{}\t{}\n",
                    serialize_tree(&r.input),
                    serialize_tree(t)
                )),
                _ => unreachable!("record carries exactly one target form"),
            }
        }
        out
    }
}

/// Random tree under the out-degree, depth and node-budget bounds; root has
/// at least one child. Labels are uniform over `0..alphabet`.
fn random_tree(rng: &mut ChaCha8Rng, alphabet: usize, root_arity: Option<usize>) -> Tree<String> {
    let mut builder = TreeBuilder::new();
    let root = builder.add_node(rng.random_range(0..alphabet).to_string());
    let mut budget = NODE_BUDGET - 1;
    // frontier of (node, depth) still allowed to receive children
    let mut frontier = Vec::new();
    let k = root_arity.unwrap_or_else(|| rng.random_range(1..=SYNTH_MAX_OUTDEGREE));
    for _ in 0..k.min(budget.max(1)) {
        let child = builder.add_node(rng.random_range(0..alphabet).to_string());
        builder.add_edge(root, child).expect("fresh edge");
        budget -= 1;
        frontier.push((child, 1usize));
    }
    while let Some((node, depth)) = frontier.pop() {
        if depth >= SYNTH_MAX_DEPTH || budget == 0 {
            continue;
        }
        // leaf probability grows with depth so trees stay small
        let leaf_prob = 0.30 + 0.10 * depth as f64;
        if rng.random::<f64>() < leaf_prob {
            continue;
        }
        let k = rng.random_range(1..=SYNTH_MAX_OUTDEGREE).min(budget);
        for _ in 0..k {
            let child = builder.add_node(rng.random_range(0..alphabet).to_string());
            builder.add_edge(node, child).expect("fresh edge");
            budget -= 1;
            frontier.push((child, depth + 1));
        }
    }
    builder.validate(SYNTH_MAX_OUTDEGREE).expect("generator respects bounds")
}

/// Per-node depth targets, saturating at [`DEPTH_CAP`]. Root target is 0.
pub fn depth_targets<L>(tree: &Tree<L>) -> Vec<usize> {
    tree.node_ids().map(|u| tree.depth(u).min(DEPTH_CAP)).collect()
}

/// Per-node parity of the rooted-subtree size; leaves are 1 (odd).
pub fn parity_targets<L>(tree: &Tree<L>) -> Vec<usize> {
    tree.node_ids().map(|u| tree.subtree_size(u) % 2).collect()
}

/// Keep flags: a leaf is kept iff its token is in `keywords`; an internal
/// node is kept iff any descendant leaf is kept.
pub fn keyword_keep(tree: &Tree<String>, keywords: &[usize]) -> Vec<bool> {
    fn kept(tree: &Tree<String>, u: NodeId, keywords: &[usize], out: &mut [bool]) -> bool {
        let keep = if tree.is_leaf(u) {
            tree.label(u).parse::<usize>().is_ok_and(|t| keywords.contains(&t))
        } else {
            let mut any = false;
            for &c in tree.children(u) {
                any |= kept(tree, c, keywords, out);
            }
            any
        };
        out[u.0 - 1] = keep;
        keep
    }
    let mut out = vec![false; tree.len()];
    kept(tree, tree.root(), keywords, &mut out);
    out
}

fn relabel_target(input: &Tree<String>, labels: &[usize]) -> Tree<String> {
    input.with_labels(labels.iter().map(usize::to_string).collect())
}

fn prune_target(input: &Tree<String>, keep: &[bool]) -> Tree<String> {
    let labels = input
        .node_ids()
        .map(|u| {
            if keep[u.0 - 1] {
                input.label(u).clone()
            } else {
                NULL_TOKEN.to_string()
            }
        })
        .collect();
    input.with_labels(labels)
}

/// Generates `size` records of the given task, deterministically under
/// `seed`.
pub fn synth_task(kind: SynthKind, size: usize, seed: u64) -> SynthCorpus {
    assert!(size > 0, "size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(size);
    for i in 0..size {
        let record = match kind {
            SynthKind::DepthRelabel => {
                let input = random_tree(&mut rng, kind.alphabet(), None);
                let target = relabel_target(&input, &depth_targets(&input));
                SynthRecord { class: None, input, target: Some(target) }
            }
            SynthKind::SubtreeParityRelabel => {
                let input = random_tree(&mut rng, kind.alphabet(), None);
                let target = relabel_target(&input, &parity_targets(&input));
                SynthRecord { class: None, input, target: Some(target) }
            }
            SynthKind::KeywordPrune => {
                let input = plant_keyword(random_tree(&mut rng, kind.alphabet(), None), &mut rng);
                let target = prune_target(&input, &keyword_keep(&input, &KEYWORDS));
                SynthRecord { class: None, input, target: Some(target) }
            }
            SynthKind::ClassByRootArity => {
                // cycle root arities so every class is populated
                let arity = 1 + (i % SYNTH_MAX_OUTDEGREE);
                let input = random_tree(&mut rng, kind.alphabet(), Some(arity));
                let class = input.children(input.root()).len();
                SynthRecord { class: Some(class), input, target: None }
            }
        };
        records.push(record);
    }
    SynthCorpus { kind, records }
}

/// Rewrites one leaf to a keyword token when the tree has none, so every
/// pruning record keeps at least its root.
fn plant_keyword(tree: Tree<String>, rng: &mut ChaCha8Rng) -> Tree<String> {
    let has_keyword = tree
        .leaves()
        .into_iter()
        .any(|u| tree.label(u).parse::<usize>().is_ok_and(|t| KEYWORDS.contains(&t)));
    if has_keyword {
        return tree;
    }
    let leaves = tree.leaves();
    let pick = leaves[rng.random_range(0..leaves.len())];
    let keyword = KEYWORDS[rng.random_range(0..KEYWORDS.len())];
    let labels = tree
        .node_ids()
        .map(|u| if u == pick { keyword.to_string() } else { tree.label(u).clone() })
        .collect();
    tree.with_labels(labels)
}
