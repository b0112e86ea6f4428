//! Task evaluation metrics: classification accuracy, node-label accuracy,
//! Simple String Accuracy, compression rate, and the hybrid early-stopping
//! metric for compression tasks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricError {
    EmptyInput,
    LengthMismatch { left: usize, right: usize },
    EmptyReference,
    EmptyOriginal,
    ZeroCompression,
    SkeletonMismatch,
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::EmptyInput => write!(f, "empty input"),
            MetricError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            MetricError::EmptyReference => write!(f, "empty reference sequence"),
            MetricError::EmptyOriginal => write!(f, "original length is zero"),
            MetricError::ZeroCompression => write!(f, "compression rate is zero"),
            MetricError::SkeletonMismatch => write!(f, "trees do not share a skeleton"),
        }
    }
}

impl core::error::Error for MetricError {}

/// Reference compression rate of the gold-standard compressions on the
/// sentence-compression corpus (for report captions; never recomputed).
pub const GOLD_COMPRESSION_REFERENCE: f64 = 0.7041;

/// Fraction of exact matches.
pub fn classification_accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64, MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if predictions.len() != targets.len() {
        return Err(MetricError::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    let hits = predictions.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-tree proportion of correctly predicted labels over the masked nodes,
/// then the mean over trees. Each element of `trees` is the list of
/// (predicted, target) pairs for one tree's masked nodes.
pub fn node_label_accuracy(trees: &[Vec<(usize, usize)>]) -> Result<f64, MetricError> {
    if trees.is_empty() || trees.iter().any(Vec::is_empty) {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for pairs in trees {
        let hits = pairs.iter().filter(|(p, t)| p == t).count();
        total += hits as f64 / pairs.len() as f64;
    }
    Ok(total / trees.len() as f64)
}

/// Minimal number of token insertions, deletions and substitutions (unit
/// costs) turning `candidate` into `reference`.
pub fn edit_distance<T: PartialEq>(candidate: &[T], reference: &[T]) -> usize {
    let (n, m) = (candidate.len(), reference.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = alloc::vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(candidate[i - 1] != reference[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Simple String Accuracy: `max(0, 1 - edits / |reference|)` at token level.
pub fn ssa<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let edits = edit_distance(candidate, reference);
    Ok((1.0 - edits as f64 / reference.len() as f64).max(0.0))
}

/// Compressed token count divided by original token count.
pub fn compression_rate(compressed_len: usize, original_len: usize) -> Result<f64, MetricError> {
    if original_len == 0 {
        return Err(MetricError::EmptyOriginal);
    }
    Ok(compressed_len as f64 / original_len as f64)
}

/// Early-stopping metric for compression tasks: accuracy squared divided by
/// compression rate.
pub fn hybrid_metric(accuracy: f64, compression_rate: f64) -> Result<f64, MetricError> {
    if compression_rate <= 0.0 {
        return Err(MetricError::ZeroCompression);
    }
    Ok(accuracy * accuracy / compression_rate)
}

/// Metric values over repeated runs plus their mean.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub per_run: Vec<f64>,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        if self.per_run.is_empty() {
            return 0.0;
        }
        self.per_run.iter().sum::<f64>() / self.per_run.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn accuracy_basics() {
        assert_eq!(classification_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&[1, 2, 3], &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(classification_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert_eq!(classification_accuracy(&[], &[]).unwrap_err(), MetricError::EmptyInput);
        assert!(matches!(
            classification_accuracy(&[1], &[1, 2]).unwrap_err(),
            MetricError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn node_label_accuracy_basics() {
        assert_eq!(node_label_accuracy(&[vec![(1, 1), (2, 2)]]).unwrap(), 1.0);
        assert_eq!(node_label_accuracy(&[vec![(1, 1), (0, 2)]]).unwrap(), 0.5);
        // mean over trees, not over nodes
        let r = node_label_accuracy(&[vec![(1, 1)], vec![(0, 1), (0, 1)]]).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn ssa_basics() {
        assert_eq!(ssa(&['a', 'b'], &['a', 'b']).unwrap(), 1.0);
        assert_eq!(ssa::<char>(&[], &['a', 'b', 'c']).unwrap(), 0.0);
        assert_eq!(ssa(&['a', 'b', 'x', 'd'], &['a', 'b', 'c', 'd']).unwrap(), 0.75);
        assert_eq!(ssa::<char>(&['a'], &[]).unwrap_err(), MetricError::EmptyReference);
        // raw value would be negative: clipped at 0
        assert_eq!(ssa(&['x', 'y', 'z', 'w'], &['a']).unwrap(), 0.0);
    }

    #[test]
    fn compression_basics() {
        assert_eq!(compression_rate(4, 4).unwrap(), 1.0);
        assert_eq!(compression_rate(2, 4).unwrap(), 0.5);
        assert_eq!(compression_rate(1, 0).unwrap_err(), MetricError::EmptyOriginal);
    }

    #[test]
    fn hybrid_basics() {
        assert_eq!(hybrid_metric(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(hybrid_metric(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(hybrid_metric(1.0, 0.0).unwrap_err(), MetricError::ZeroCompression);
        // published operating point of the compression benchmark
        let t = hybrid_metric(0.7358, 0.7237).unwrap();
        assert!((t - 0.748102).abs() < 1e-4);
    }

    #[test]
    fn report_mean() {
        let r = EvalReport { metric: "acc".into(), per_run: vec![0.5, 0.7, 0.9] };
        assert!((r.mean() - 0.7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ssa_in_unit_interval(cand in proptest::collection::vec(0u8..3, 0..8),
                                refr in proptest::collection::vec(0u8..3, 1..8)) {
            let v = ssa(&cand, &refr).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            // 1 iff equal
            prop_assert_eq!(v == 1.0, cand == refr);
        }

        #[test]
        fn ssa_invariant_under_token_renaming(cand in proptest::collection::vec(0u8..3, 0..8),
                                              refr in proptest::collection::vec(0u8..3, 1..8)) {
            let rename = |s: &[u8]| s.iter().map(|&x| (x + 1) % 3).collect::<Vec<_>>();
            prop_assert_eq!(ssa(&cand, &refr).unwrap(), ssa(&rename(&cand), &rename(&refr)).unwrap());
        }

        #[test]
        fn compression_monotone(orig in 1usize..50, drop1 in 0usize..50, drop2 in 0usize..50) {
            let d1 = drop1.min(orig);
            let d2 = drop2.min(orig);
            if d1 <= d2 {
                prop_assert!(compression_rate(orig - d1, orig).unwrap()
                    >= compression_rate(orig - d2, orig).unwrap());
            }
        }
    }
}
