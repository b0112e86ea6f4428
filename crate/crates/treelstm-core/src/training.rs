//! Losses, L2 regularization, Adam optimization, the training loop with
//! early stopping, and hidden-size model selection.
//!
//! Training is deterministic: samples are visited in corpus order, child
//! and parameter reductions happen in fixed order, and all randomness flows
//! from the configured seed. Two runs with the same seed and config produce
//! bit-identical parameters and histories.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::{Cell, ChildSumCell, InputEncoder, NaryCell, TdCell};
use crate::metrics;
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, ValueId};
use crate::transduction::{
    compose, Head, Prediction, Sample, Target, TaskError, TaskOutputs, TaskSpec,
};
use crate::tree::NodeLabel;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Task(TaskError),
    Tensor(TensorError),
    EmptySplit,
    EmptyGrid,
    LabelOutOfRange { label: usize, alphabet: usize },
}

impl From<TaskError> for TrainError {
    fn from(e: TaskError) -> Self {
        TrainError::Task(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Task(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::EmptySplit => write!(f, "empty training or validation split"),
            TrainError::EmptyGrid => write!(f, "empty hidden-size grid"),
            TrainError::LabelOutOfRange { label, alphabet } => {
                write!(f, "target label {label} outside alphabet of size {alphabet}")
            }
        }
    }
}

impl core::error::Error for TrainError {}

/// Hidden sizes searched during model selection.
pub const HIDDEN_GRID: [usize; 7] = [100, 150, 200, 250, 300, 350, 400];

/// Training hyperparameters. The L2 weight is fixed to 1e-4 and Adam runs
/// with its canonical defaults unless overridden.
#[derive(Debug, Clone)]
pub struct Hyperparams {
    pub hidden: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: 100,
            lambda: 1e-4,
            learning_rate: 1e-3,
            epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

/// Adam optimizer state: bias-corrected first and second moments per
/// parameter, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros = |s: &ParamStore| -> Vec<Tensor> {
            s.iter()
                .map(|(_, p)| {
                    let (r, c) = p.value.shape();
                    Tensor::zeros(r, c)
                })
                .collect()
        };
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: zeros(store),
            second_moment: zeros(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently accumulated in the store;
    /// gradients are reset to zero afterwards.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let m = self.first_moment[i].values_mut();
            let v = self.second_moment[i].values_mut();
            for ((theta, g), (mi, vi)) in p
                .value
                .values_mut()
                .iter_mut()
                .zip(p.grad.values())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
            }
            p.grad.fill(0.0);
        }
    }
}

/// Task loss attached to the graph outputs of one sample: negative
/// log-likelihood for supersource and relabel (summed over masked nodes),
/// binary cross entropy over all nodes for prune.
pub fn task_loss(
    g: &mut Graph,
    task: &TaskSpec,
    outputs: &TaskOutputs,
    target: &Target,
) -> Result<ValueId, TrainError> {
    match (task, outputs, target) {
        (TaskSpec::Supersource { classes }, TaskOutputs::Supersource { log_probs }, Target::Class(c)) => {
            if *c >= *classes {
                return Err(TrainError::LabelOutOfRange { label: *c, alphabet: *classes });
            }
            let lp = g.pick(*log_probs, *c)?;
            Ok(g.scale(lp, -1.0))
        }
        (TaskSpec::Relabel { classes, .. }, TaskOutputs::Relabel { per_node }, Target::Labels(labels)) => {
            let mut terms = Vec::new();
            for (u, lp) in per_node {
                if let Some(c) = labels[u.0 - 1] {
                    if c >= *classes {
                        return Err(TrainError::LabelOutOfRange { label: c, alphabet: *classes });
                    }
                    let picked = g.pick(*lp, c)?;
                    terms.push(g.scale(picked, -1.0));
                }
            }
            if terms.is_empty() {
                return Err(TaskError::EmptyMask.into());
            }
            Ok(g.sum_list(&terms, 1, 1)?)
        }
        (TaskSpec::Prune { .. }, TaskOutputs::Prune { logits }, Target::Keep(keep)) => {
            let ids: Vec<ValueId> = logits.iter().map(|(_, z)| *z).collect();
            let z = g.concat(&ids)?;
            let targets: Vec<f64> = logits.iter().map(|(u, _)| f64::from(keep[u.0 - 1])).collect();
            Ok(g.bce_with_logits(z, &Tensor::vector(targets)?)?)
        }
        _ => Err(TaskError::MissingTarget.into()),
    }
}

/// `base + lambda * sum of squared weight-matrix entries`; biases excluded.
pub fn regularized_loss(
    g: &mut Graph,
    store: &ParamStore,
    base: ValueId,
    lambda: f64,
) -> Result<ValueId, TensorError> {
    if lambda == 0.0 {
        return Ok(base);
    }
    let mut terms = Vec::new();
    for id in store.weight_ids() {
        let p = g.param(store, id);
        let sq = g.mul(p, p)?;
        terms.push(g.sum_entries(sq));
    }
    let total = g.sum_list(&terms, 1, 1)?;
    let penalty = g.scale(total, lambda);
    g.add(base, penalty)
}

/// Which cell variant a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    TopDown,
    ChildSum,
    Nary,
}

impl CellKind {
    pub fn name(&self) -> &'static str {
        match self {
            CellKind::TopDown => "td",
            CellKind::ChildSum => "childsum",
            CellKind::Nary => "nary",
        }
    }
}

/// How node labels are mapped to cell inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodingSpec {
    OneHot { alphabet: usize },
    Dense { dim: usize },
    Projected { dim: usize, dense_dim: usize, alphabet: usize },
}

impl EncodingSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            EncodingSpec::OneHot { alphabet } => *alphabet,
            EncodingSpec::Dense { dim } => *dim,
            EncodingSpec::Projected { dim, .. } => *dim,
        }
    }
}

/// Everything needed to build a fresh model with a given seed.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub task: TaskSpec,
    pub cell: CellKind,
    pub hidden: usize,
    pub encoding: EncodingSpec,
    /// Maximum out-degree; only the N-ary cell consumes it.
    pub arity: usize,
}

/// A cell, input encoder and head sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub cell: Cell,
    pub encoder: InputEncoder,
    pub head: Head,
    pub task: TaskSpec,
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let input_dim = self.encoding.input_dim();
        let encoder = match &self.encoding {
            EncodingSpec::OneHot { alphabet } => InputEncoder::OneHot { alphabet: *alphabet },
            EncodingSpec::Dense { dim } => InputEncoder::Dense { dim: *dim },
            EncodingSpec::Projected { dim, dense_dim, alphabet } => {
                InputEncoder::projected(&mut store, *dim, *dense_dim, *alphabet, &mut rng)
            }
        };
        let cell = match self.cell {
            CellKind::TopDown => Cell::TopDown(TdCell::new(&mut store, self.hidden, input_dim, &mut rng)),
            CellKind::ChildSum => {
                Cell::ChildSum(ChildSumCell::new(&mut store, self.hidden, input_dim, &mut rng))
            }
            CellKind::Nary => {
                Cell::Nary(NaryCell::new(&mut store, self.hidden, input_dim, self.arity, &mut rng))
            }
        };
        let head = Head::new(&mut store, &self.task, self.hidden, &mut rng);
        Model { store, cell, encoder, head, task: self.task.clone() }
    }
}

impl Model {
    /// Forward pass producing the prediction for one tree.
    pub fn predict(&self, tree: &crate::tree::Tree<NodeLabel>) -> Result<Prediction, TaskError> {
        let mut g = Graph::new();
        let (_, pred) = compose(&mut g, &self.store, tree, &self.cell, &self.encoder, &self.head, &self.task)?;
        Ok(pred)
    }

    /// Builds the full loss graph (task loss + L2 penalty) for one sample.
    pub fn loss_graph(&self, sample: &Sample, lambda: f64) -> Result<(Graph, ValueId), TrainError> {
        let mut g = Graph::new();
        let (outputs, _) =
            compose(&mut g, &self.store, &sample.tree, &self.cell, &self.encoder, &self.head, &self.task)?;
        let base = task_loss(&mut g, &self.task, &outputs, &sample.target)?;
        let loss = regularized_loss(&mut g, &self.store, base, lambda)?;
        Ok((g, loss))
    }
}

/// Per-sample evaluation folded over a corpus.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    /// The early-stopping / selection metric (accuracy, or hybrid t for
    /// prune tasks).
    pub metric: f64,
    pub accuracy: f64,
    /// Mean per-tree compression rate (prune tasks only).
    pub compression: Option<f64>,
    /// Hybrid accuracy^2 / compression (prune tasks only).
    pub hybrid: Option<f64>,
}

/// Evaluates the model's task metric over a corpus.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    match &model.task {
        TaskSpec::Supersource { .. } => {
            let mut predictions = Vec::with_capacity(samples.len());
            let mut targets = Vec::with_capacity(samples.len());
            for s in samples {
                let Prediction::Supersource { class, .. } = model.predict(&s.tree)? else {
                    unreachable!()
                };
                let Target::Class(t) = s.target else {
                    return Err(TaskError::MissingTarget.into());
                };
                predictions.push(class);
                targets.push(t);
            }
            let acc = metrics::classification_accuracy(&predictions, &targets)
                .expect("nonempty, equal lengths");
            Ok(Evaluation { metric: acc, accuracy: acc, ..Default::default() })
        }
        TaskSpec::Relabel { .. } => {
            let mut per_tree = Vec::with_capacity(samples.len());
            for s in samples {
                let Prediction::Relabel { per_node, .. } = model.predict(&s.tree)? else {
                    unreachable!()
                };
                let Target::Labels(labels) = &s.target else {
                    return Err(TaskError::MissingTarget.into());
                };
                let pairs: Vec<(usize, usize)> = per_node
                    .iter()
                    .filter_map(|(u, class, _)| labels[u.0 - 1].map(|t| (*class, t)))
                    .collect();
                if !pairs.is_empty() {
                    per_tree.push(pairs);
                }
            }
            let acc = metrics::node_label_accuracy(&per_tree).map_err(|_| TrainError::EmptySplit)?;
            Ok(Evaluation { metric: acc, accuracy: acc, ..Default::default() })
        }
        TaskSpec::Prune { .. } => {
            let mut ssa_sum = 0.0;
            let mut rate_sum = 0.0;
            for s in samples {
                let Prediction::Prune { compressed, .. } = model.predict(&s.tree)? else {
                    unreachable!()
                };
                let reference = s.reference_compression().ok_or(TrainError::Task(TaskError::MissingTarget))?;
                let ssa = if reference.is_empty() {
                    // degenerate record: agreement means predicting emptiness
                    f64::from(compressed.is_empty())
                } else {
                    metrics::ssa(&compressed, &reference).expect("nonempty reference")
                };
                let original = s.tree.leaves().len();
                ssa_sum += ssa;
                rate_sum += compressed.len() as f64 / original as f64;
            }
            let accuracy = ssa_sum / samples.len() as f64;
            let rate = rate_sum / samples.len() as f64;
            let hybrid = if rate > 0.0 { accuracy * accuracy / rate } else { 0.0 };
            Ok(Evaluation {
                metric: hybrid,
                accuracy,
                compression: Some(rate),
                hybrid: Some(hybrid),
            })
        }
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub val_accuracy: f64,
    pub val_compression: Option<f64>,
}

/// Outcome of a training run. The model's parameters are left at the
/// best-validation checkpoint.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub best_snapshot: Vec<(String, Tensor)>,
}

/// Epoch loop of forward/backward/Adam over the training split with
/// early stopping on the validation metric (hybrid t for prune tasks,
/// accuracy otherwise). Stops once `patience` epochs pass without
/// improvement and restores the best checkpoint.
pub fn train(
    model: &mut Model,
    train_split: &[Sample],
    val_split: &[Sample],
    hp: &Hyperparams,
) -> Result<TrainResult, TrainError> {
    if train_split.is_empty() || val_split.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut adam = Adam::new(&model.store, hp.learning_rate);
    let mut history = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_snapshot = model.store.snapshot();
    let mut since_improvement = 0usize;

    for epoch in 1..=hp.epochs {
        let mut loss_sum = 0.0;
        for sample in train_split {
            let (g, loss) = model.loss_graph(sample, hp.lambda)?;
            loss_sum += g.value(loss).item()?;
            model.store.zero_grads();
            g.backward(loss, &mut model.store)?;
            adam.step(&mut model.store);
        }
        let eval = evaluate(model, val_split)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_split.len() as f64,
            val_metric: eval.metric,
            val_accuracy: eval.accuracy,
            val_compression: eval.compression,
        });
        if eval.metric > best_metric {
            best_metric = eval.metric;
            best_epoch = epoch;
            best_snapshot = model.store.snapshot();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if since_improvement >= hp.patience {
            break;
        }
    }
    model.store.restore(&best_snapshot)?;
    Ok(TrainResult { history, best_epoch, best_metric, best_snapshot })
}

/// Per-hidden-size outcome of a model-selection sweep.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub hidden: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
}

/// Trains one model per hidden size and returns the winner (ties broken by
/// the smaller hidden size) plus the per-size report.
pub fn model_select(
    config: &ModelConfig,
    train_split: &[Sample],
    val_split: &[Sample],
    grid: &[usize],
    hp: &Hyperparams,
) -> Result<(usize, Vec<GridEntry>), TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut sorted: Vec<usize> = grid.to_vec();
    sorted.sort_unstable();
    let mut report = Vec::with_capacity(sorted.len());
    let mut best: Option<(usize, f64)> = None;
    for &hidden in &sorted {
        let mut cfg = config.clone();
        cfg.hidden = hidden;
        let mut model = cfg.build(hp.seed);
        let mut hp_h = hp.clone();
        hp_h.hidden = hidden;
        let result = train(&mut model, train_split, val_split, &hp_h)?;
        report.push(GridEntry { hidden, best_metric: result.best_metric, best_epoch: result.best_epoch });
        // strict improvement only: equal scores keep the smaller size
        if best.map_or(true, |(_, m)| result.best_metric > m) {
            best = Some((hidden, result.best_metric));
        }
    }
    Ok((best.expect("nonempty grid").0, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamKind;
    use crate::transduction::MaskPolicy;
    use crate::tree::Tree;
    use alloc::vec;

    #[test]
    fn adam_zero_gradient_is_a_noop_on_values() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::vector(vec![1.0, -2.0]).unwrap());
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store);
        assert_eq!(store.get(w).value.values(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_signlike() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::vector(vec![0.0, 0.0]).unwrap());
        store.get_mut(w).grad = Tensor::vector(vec![3.7, -0.002]).unwrap();
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store);
        let v = store.get(w).value.values().to_vec();
        // bias correction makes m_hat = g, v_hat = g^2 at t = 1
        assert!((v[0] + 0.1).abs() < 1e-6);
        assert!((v[1] - 0.1).abs() < 1e-4);
        // gradients reset afterwards
        assert_eq!(store.get(w).grad.values(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // minimize (theta - 3)^2 from theta = 0
        let mut store = ParamStore::new();
        let w = store.add("theta", ParamKind::Weight, Tensor::scalar(0.0).unwrap());
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..100 {
            let mut g = Graph::new();
            let t = g.param(&store, w);
            let c = g.input(Tensor::scalar(-3.0).unwrap());
            let diff = g.add(t, c).unwrap();
            let sq = g.mul(diff, diff).unwrap();
            let loss = g.sum_entries(sq);
            store.zero_grads();
            g.backward(loss, &mut store).unwrap();
            adam.step(&mut store);
        }
        assert!((store.get(w).value.get(0) - 3.0).abs() < 0.05);
    }

    #[test]
    fn regularization_closed_form() {
        let mut store = ParamStore::new();
        store.add("w", ParamKind::Weight, Tensor::new(2, 2, vec![1.0; 4]).unwrap());
        store.add("b", ParamKind::Bias, Tensor::vector(vec![100.0]).unwrap());
        let mut g = Graph::new();
        let base = g.input(Tensor::scalar(0.0).unwrap());
        let loss = regularized_loss(&mut g, &store, base, 1e-4).unwrap();
        // biases excluded: 4 * 1^2 * 1e-4
        assert!((g.value(loss).item().unwrap() - 4e-4).abs() < 1e-15);
        // lambda = 0 is the identity
        let id = regularized_loss(&mut g, &store, base, 0.0).unwrap();
        assert_eq!(id, base);
    }

    #[test]
    fn regularized_loss_monotone_in_lambda() {
        let mut store = ParamStore::new();
        store.add("w", ParamKind::Weight, Tensor::vector(vec![0.5, -1.5]).unwrap());
        let mut vals = Vec::new();
        for lambda in [0.0, 1e-4, 1e-2, 1.0] {
            let mut g = Graph::new();
            let base = g.input(Tensor::scalar(2.0).unwrap());
            let loss = regularized_loss(&mut g, &store, base, lambda).unwrap();
            vals.push(g.value(loss).item().unwrap());
        }
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            task: TaskSpec::Supersource { classes: 2 },
            cell: CellKind::ChildSum,
            hidden: 4,
            encoding: EncodingSpec::OneHot { alphabet: 2 },
            arity: 2,
        }
    }

    fn toy_samples() -> Vec<Sample> {
        // class = 1 iff the root has two children
        let star = Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1), NodeLabel::Categorical(1)],
            &[None, Some(0), Some(0)],
            2,
        )
        .unwrap();
        let chain = Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1)],
            &[None, Some(0)],
            2,
        )
        .unwrap();
        vec![
            Sample { tree: star, target: Target::Class(1) },
            Sample { tree: chain, target: Target::Class(0) },
        ]
    }

    #[test]
    fn uniform_prediction_loss_is_ln_classes() {
        let cfg = toy_config();
        let mut model = cfg.build(1);
        for id in model.store.ids().collect::<Vec<_>>() {
            model.store.get_mut(id).value.fill(0.0);
        }
        let samples = toy_samples();
        let (g, loss) = model.loss_graph(&samples[0], 0.0).unwrap();
        assert!((g.value(loss).item().unwrap() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let cfg = toy_config();
        let model = cfg.build(1);
        let mut s = toy_samples().remove(0);
        s.target = Target::Class(9);
        let err = model.loss_graph(&s, 0.0).unwrap_err();
        assert!(matches!(err, TrainError::LabelOutOfRange { .. }));
    }

    #[test]
    fn patience_zero_runs_exactly_one_epoch() {
        let cfg = toy_config();
        let mut model = cfg.build(2);
        let samples = toy_samples();
        let hp = Hyperparams { epochs: 50, patience: 0, hidden: 4, ..Default::default() };
        let result = train(&mut model, &samples, &samples, &hp).unwrap();
        assert_eq!(result.history.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = toy_config();
        let samples = toy_samples();
        let hp = Hyperparams { epochs: 5, patience: 10, hidden: 4, seed: 7, ..Default::default() };
        let run = |cfg: &ModelConfig| {
            let mut model = cfg.build(hp.seed);
            let r = train(&mut model, &samples, &samples, &hp).unwrap();
            (r, model.store.snapshot())
        };
        let (r1, s1) = run(&cfg);
        let (r2, s2) = run(&cfg);
        assert_eq!(r1.history.len(), r2.history.len());
        for (a, b) in r1.history.iter().zip(&r2.history) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_metric.to_bits(), b.val_metric.to_bits());
        }
        for ((n1, t1), (n2, t2)) in s1.iter().zip(&s2) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn toy_task_is_learnable() {
        let cfg = toy_config();
        let mut model = cfg.build(3);
        let samples = toy_samples();
        let hp = Hyperparams {
            epochs: 200,
            patience: 200,
            hidden: 4,
            learning_rate: 0.02,
            ..Default::default()
        };
        let result = train(&mut model, &samples, &samples, &hp).unwrap();
        assert!(result.best_metric >= 1.0 - 1e-12, "best metric {}", result.best_metric);
    }

    #[test]
    fn model_select_singleton_and_tiebreak() {
        let cfg = toy_config();
        let samples = toy_samples();
        let hp = Hyperparams { epochs: 1, patience: 0, ..Default::default() };
        let (best, report) = model_select(&cfg, &samples, &samples, &[8], &hp).unwrap();
        assert_eq!(best, 8);
        assert_eq!(report.len(), 1);
        // epochs = 0 forces identical (empty-history) scores; smaller H wins
        let hp0 = Hyperparams { epochs: 0, patience: 0, ..Default::default() };
        let (best, _) = model_select(&cfg, &samples, &samples, &[16, 4, 8], &hp0).unwrap();
        assert_eq!(best, 4);
        assert!(matches!(
            model_select(&cfg, &samples, &samples, &[], &hp).unwrap_err(),
            TrainError::EmptyGrid
        ));
    }

    #[test]
    fn empty_split_rejected() {
        let cfg = toy_config();
        let mut model = cfg.build(1);
        let samples = toy_samples();
        let hp = Hyperparams::default();
        assert_eq!(train(&mut model, &[], &samples, &hp).unwrap_err(), TrainError::EmptySplit);
        assert_eq!(train(&mut model, &samples, &[], &hp).unwrap_err(), TrainError::EmptySplit);
    }

    #[test]
    fn relabel_loss_sums_masked_nodes() {
        let cfg = ModelConfig {
            task: TaskSpec::Relabel { classes: 3, mask: MaskPolicy::AllNodes },
            cell: CellKind::TopDown,
            hidden: 4,
            encoding: EncodingSpec::OneHot { alphabet: 3 },
            arity: 2,
        };
        let mut model = cfg.build(4);
        for id in model.store.ids().collect::<Vec<_>>() {
            model.store.get_mut(id).value.fill(0.0);
        }
        let tree = Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1), NodeLabel::Categorical(2)],
            &[None, Some(0), Some(0)],
            3,
        )
        .unwrap();
        let sample = Sample { tree, target: Target::Labels(vec![Some(0), Some(1), None]) };
        let (g, loss) = model.loss_graph(&sample, 0.0).unwrap();
        // two labeled nodes, uniform predictions: 2 ln 3
        assert!((g.value(loss).item().unwrap() - 2.0 * (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn prune_bce_matches_direct_formula() {
        let cfg = ModelConfig {
            task: TaskSpec::Prune { subtree_consistent: false },
            cell: CellKind::TopDown,
            hidden: 3,
            encoding: EncodingSpec::OneHot { alphabet: 2 },
            arity: 2,
        };
        let model = cfg.build(5);
        let tree = Tree::from_parents(
            vec![NodeLabel::Categorical(0), NodeLabel::Categorical(1), NodeLabel::Categorical(1)],
            &[None, Some(0), Some(0)],
            2,
        )
        .unwrap();
        let keep = vec![true, false, true];
        let sample = Sample { tree: tree.clone(), target: Target::Keep(keep.clone()) };
        let (g, loss) = model.loss_graph(&sample, 0.0).unwrap();
        // direct -[y ln p + (1-y) ln (1-p)] oracle from the predicted probabilities
        let Prediction::Prune { keep_prob, .. } = model.predict(&tree).unwrap() else { panic!() };
        let direct: f64 = keep_prob
            .iter()
            .zip(&keep)
            .map(|(&p, &y)| {
                let y = f64::from(y);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        assert!((g.value(loss).item().unwrap() - direct).abs() < 1e-9);
    }
}
