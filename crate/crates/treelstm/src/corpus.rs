//! Corpus loading: class-labeled tree files, parallel input/target tree
//! files, embedding tables and stratified splitting.
//!
//! All corpora share the canonical bracketed format of [`crate::formats`],
//! one record per line, UTF-8. Class-labeled records are
//! `class<TAB>tree`; parallel records are `input_tree<TAB>target_tree`
//! where the target tree must be ordered-isomorphic to the input and uses
//! the `_NULL_` token for pruned nodes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use treelstm_core::transduction::{Sample, Target};
use treelstm_core::tree::{is_isomorphic, NodeLabel, Tree};

use crate::formats::{parse_bracketed, FormatError, NULL_TOKEN};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Format {
        line: usize,
        #[source]
        source: FormatError,
    },
    #[error("line {line}: bad class field '{field}'")]
    BadClass { line: usize, field: String },
    #[error("line {line}: expected {expected} tab-separated fields")]
    BadRecord { line: usize, expected: usize },
    #[error("line {line}: label '{label}' is not a categorical integer")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: target tree is not isomorphic to the input")]
    SkeletonMismatch { line: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: embedding dimension {got} differs from {expected}")]
    DimensionMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: duplicate token '{token}'")]
    DuplicateToken { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class-labeled corpus of categorical-integer trees plus the inferred
/// alphabet sizes.
#[derive(Debug, Clone)]
pub struct ClassCorpus {
    pub samples: Vec<Sample>,
    /// Number of distinct node-label symbols (max label + 1).
    pub alphabet: usize,
    /// Number of classes (max class + 1).
    pub classes: usize,
}

impl ClassCorpus {
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.classes];
        for s in &self.samples {
            if let Target::Class(c) = s.target {
                hist[c] += 1;
            }
        }
        hist
    }
}

/// How raw token labels become model inputs: parsed categorical integers,
/// or embedding-table lookups (zero-vector OOV).
#[derive(Clone, Copy)]
pub enum Labeling<'a> {
    Categorical,
    Embedded(&'a EmbeddingTable),
}

/// Returns the labeled tree and, for categorical corpora, max label + 1
/// seen in this tree (0 for embedded corpora, where no alphabet applies).
fn convert_labels(
    tree: &Tree<String>,
    line: usize,
    labeling: Labeling<'_>,
) -> Result<(Tree<NodeLabel>, usize), CorpusError> {
    let mut alphabet = 0usize;
    let mut parsed = Vec::with_capacity(tree.len());
    for u in tree.node_ids() {
        let label = tree.label(u);
        match labeling {
            Labeling::Categorical => {
                let v: usize = label
                    .parse()
                    .map_err(|_| CorpusError::BadLabel { line, label: label.clone() })?;
                alphabet = alphabet.max(v + 1);
                parsed.push(NodeLabel::Categorical(v));
            }
            Labeling::Embedded(table) => parsed.push(NodeLabel::Dense(table.lookup(label))),
        }
    }
    Ok((tree.with_labels(parsed), alphabet))
}

/// Loads `class<TAB>tree` records with categorical integer node labels.
pub fn load_class_corpus(path: &Path, max_outdegree: usize) -> Result<ClassCorpus, CorpusError> {
    parse_class_corpus(&fs::read_to_string(path)?, max_outdegree)
}

pub fn parse_class_corpus(text: &str, max_outdegree: usize) -> Result<ClassCorpus, CorpusError> {
    parse_class_corpus_with(text, max_outdegree, Labeling::Categorical)
}

pub fn parse_class_corpus_with(
    text: &str,
    max_outdegree: usize,
    labeling: Labeling<'_>,
) -> Result<ClassCorpus, CorpusError> {
    let mut samples = Vec::new();
    let mut alphabet = 0usize;
    let mut classes = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(2, '\t');
        let class_field = fields.next().unwrap_or("");
        let tree_field = fields.next().ok_or(CorpusError::BadRecord { line, expected: 2 })?;
        let class: usize = class_field
            .trim()
            .parse()
            .map_err(|_| CorpusError::BadClass { line, field: class_field.to_string() })?;
        let tree = parse_bracketed(tree_field, max_outdegree)
            .map_err(|source| CorpusError::Format { line, source })?;
        let (tree, tree_alphabet) = convert_labels(&tree, line, labeling)?;
        alphabet = alphabet.max(tree_alphabet);
        classes = classes.max(class + 1);
        samples.push(Sample { tree, target: Target::Class(class) });
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(ClassCorpus { samples, alphabet, classes })
}

/// Parallel corpus for relabel and prune tasks.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub samples: Vec<Sample>,
    pub alphabet: usize,
    /// For relabel corpora: number of target classes. 2 (keep/drop) for
    /// prune corpora.
    pub classes: usize,
}

/// Loads `input<TAB>target` relabel records; every target node label is a
/// class integer and every node is supervised.
pub fn load_relabel_corpus(path: &Path, max_outdegree: usize) -> Result<ParallelCorpus, CorpusError> {
    parse_parallel_corpus(&fs::read_to_string(path)?, max_outdegree, false)
}

/// Loads `input<TAB>target` prune records; target labels equal the input's
/// on kept nodes and `_NULL_` on dropped ones.
pub fn load_prune_corpus(path: &Path, max_outdegree: usize) -> Result<ParallelCorpus, CorpusError> {
    parse_parallel_corpus(&fs::read_to_string(path)?, max_outdegree, true)
}

pub fn parse_parallel_corpus(
    text: &str,
    max_outdegree: usize,
    prune: bool,
) -> Result<ParallelCorpus, CorpusError> {
    parse_parallel_corpus_with(text, max_outdegree, prune, Labeling::Categorical)
}

pub fn parse_parallel_corpus_with(
    text: &str,
    max_outdegree: usize,
    prune: bool,
    labeling: Labeling<'_>,
) -> Result<ParallelCorpus, CorpusError> {
    let mut samples = Vec::new();
    let mut alphabet = 0usize;
    let mut classes = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(2, '\t');
        let input_field = fields.next().unwrap_or("");
        let target_field = fields.next().ok_or(CorpusError::BadRecord { line, expected: 2 })?;
        let input = parse_bracketed(input_field, max_outdegree)
            .map_err(|source| CorpusError::Format { line, source })?;
        let target = parse_bracketed(target_field, max_outdegree)
            .map_err(|source| CorpusError::Format { line, source })?;
        if !is_isomorphic(&input, &target, true) {
            return Err(CorpusError::SkeletonMismatch { line });
        }
        let (tree, tree_alphabet) = convert_labels(&input, line, labeling)?;
        alphabet = alphabet.max(tree_alphabet);
        let target = if prune {
            let keep: Vec<bool> =
                target.node_ids().map(|u| target.label(u) != NULL_TOKEN).collect();
            classes = 2;
            Target::Keep(keep)
        } else {
            let mut labels = Vec::with_capacity(target.len());
            for u in target.node_ids() {
                let label = target.label(u);
                let c: usize = label
                    .parse()
                    .map_err(|_| CorpusError::BadLabel { line, label: label.clone() })?;
                classes = classes.max(c + 1);
                labels.push(Some(c));
            }
            Target::Labels(labels)
        };
        samples.push(Sample { tree, target });
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(ParallelCorpus { samples, alphabet, classes })
}

/// Token to dense-vector table with a zero-vector out-of-vocabulary policy.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unknown tokens map to the zero vector.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.entries.get(token).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// Loads a word2vec-style text table: an optional `count dim` header line,
/// then `token v1 ... vd` per line.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    parse_embeddings(&fs::read_to_string(path)?)
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, CorpusError> {
    let mut entries = HashMap::new();
    let mut dim: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if line == 1 && fields.len() == 2 {
            if let (Ok(_count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let token = fields[0].to_string();
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CorpusError::BadLabel { line, label: raw.to_string() })?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::DimensionMismatch { line, expected: d, got: values.len() })
            }
            _ => {}
        }
        if entries.insert(token.clone(), values).is_some() {
            return Err(CorpusError::DuplicateToken { line, token });
        }
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(EmbeddingTable { dim: dim.unwrap_or(0), entries })
}

/// Disjoint index sets for training and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Moves `fraction` of each class to validation (rounded half-up, at least
/// one record when the class has two or more, never stranding a
/// single-record class). Deterministic under the seed.
pub fn stratified_split(classes: &[usize], fraction: f64, seed: u64) -> Result<SplitSpec, CorpusError> {
    if classes.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        match by_class.iter_mut().find(|(cc, _)| *cc == c) {
            Some((_, v)) => v.push(i),
            None => by_class.push((c, vec![i])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (_, mut members) in by_class {
        let n = members.len();
        let k = if n < 2 {
            0
        } else {
            (((n as f64) * fraction + 0.5).floor() as usize).clamp(1, n - 1)
        };
        members.shuffle(&mut rng);
        validation.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(SplitSpec { train, validation })
}

/// Unstratified split for corpora without class labels.
pub fn holdout_split(len: usize, fraction: f64, seed: u64) -> Result<SplitSpec, CorpusError> {
    if len == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    stratified_split(&vec![0usize; len], fraction, seed)
}

/// Picks the samples at `indices`.
pub fn select(samples: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices.iter().map(|&i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_corpus_roundtrip() {
        let text = "0\t(1 2 3)\n2\t(4 (2 3) 1)\n0\t5\n";
        let c = parse_class_corpus(text, 8).unwrap();
        assert_eq!(c.samples.len(), 3);
        assert_eq!(c.classes, 3);
        assert_eq!(c.alphabet, 6);
        assert_eq!(c.class_histogram(), vec![2, 0, 1]);
    }

    #[test]
    fn class_corpus_errors() {
        assert!(matches!(parse_class_corpus("", 8).unwrap_err(), CorpusError::EmptyCorpus));
        assert!(matches!(
            parse_class_corpus("x\t(1 2)", 8).unwrap_err(),
            CorpusError::BadClass { line: 1, .. }
        ));
        assert!(matches!(
            parse_class_corpus("0 (1 2)", 8).unwrap_err(),
            CorpusError::BadRecord { line: 1, .. }
        ));
        assert!(matches!(
            parse_class_corpus("0\t(1 a)", 8).unwrap_err(),
            CorpusError::BadLabel { line: 1, .. }
        ));
    }

    #[test]
    fn relabel_corpus_targets() {
        let text = "(1 2 3)\t(0 1 1)\n";
        let c = parse_parallel_corpus(text, 8, false).unwrap();
        assert_eq!(c.classes, 2);
        assert_eq!(c.samples[0].target, Target::Labels(vec![Some(0), Some(1), Some(1)]));
    }

    #[test]
    fn prune_corpus_targets_and_mismatch() {
        let text = "(1 2 3)\t(1 _NULL_ 3)\n";
        let c = parse_parallel_corpus(text, 8, true).unwrap();
        assert_eq!(c.samples[0].target, Target::Keep(vec![true, false, true]));
        let bad = "(1 2 3)\t(1 2)\n";
        assert!(matches!(
            parse_parallel_corpus(bad, 8, true).unwrap_err(),
            CorpusError::SkeletonMismatch { line: 1 }
        ));
    }

    #[test]
    fn embeddings_with_header_and_oov() {
        let t = parse_embeddings("2 3\nthe 0.1 0.2 0.3\ndog 1 2 3\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("dog"), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.lookup("unknown"), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn embeddings_errors() {
        assert!(matches!(
            parse_embeddings("a 1 2 3\nb 1 2\n").unwrap_err(),
            CorpusError::DimensionMismatch { line: 2, expected: 3, got: 2 }
        ));
        assert!(matches!(
            parse_embeddings("a 1\na 2\n").unwrap_err(),
            CorpusError::DuplicateToken { line: 2, .. }
        ));
    }

    #[test]
    fn embedded_labeling_uses_table() {
        let table = parse_embeddings("the 1 0\ndog 0 1\n").unwrap();
        let c =
            parse_class_corpus_with("0\t(the dog oov)\n", 8, Labeling::Embedded(&table)).unwrap();
        assert_eq!(c.alphabet, 0);
        let tree = &c.samples[0].tree;
        let labels: Vec<_> = tree.node_ids().map(|u| tree.label(u).clone()).collect();
        assert_eq!(
            labels,
            vec![
                NodeLabel::Dense(vec![1.0, 0.0]),
                NodeLabel::Dense(vec![0.0, 1.0]),
                NodeLabel::Dense(vec![0.0, 0.0]),
            ]
        );
    }

    #[test]
    fn stratified_exact_ratio() {
        // 60/40 over 100 records -> 6/4 validation
        let classes: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let split = stratified_split(&classes, 0.10, 1).unwrap();
        assert_eq!(split.validation.len(), 10);
        let v0 = split.validation.iter().filter(|&&i| classes[i] == 0).count();
        assert_eq!(v0, 6);
        // disjoint and covering
        let mut all: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn single_record_class_stays_in_training() {
        let classes = vec![0, 0, 0, 1];
        let split = stratified_split(&classes, 0.10, 3).unwrap();
        assert!(split.train.contains(&3));
        // class 0 has 3 records: round(0.3) = 0 but the >=2 rule forces 1
        assert_eq!(split.validation.len(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let classes: Vec<usize> = (0..50).map(|i| i % 3).collect();
        assert_eq!(
            stratified_split(&classes, 0.10, 9).unwrap(),
            stratified_split(&classes, 0.10, 9).unwrap()
        );
    }
}
