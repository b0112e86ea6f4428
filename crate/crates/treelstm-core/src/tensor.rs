//! Dense double-precision vector/matrix values and a reverse-mode
//! automatic differentiation engine over dynamically built graphs.
//!
//! One [`Graph`] is built per tree unfolding and discarded after the
//! optimizer step. Parameters live outside the graph in a [`ParamStore`];
//! [`Graph::backward`] accumulates (`+=`) into their gradient buffers.
//! Summation order is fixed left-to-right everywhere so that identical
//! graphs produce bit-identical values and gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    NonFinite,
    NonScalarLoss,
    IndexOutOfRange { index: usize, len: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)
            }
            TensorError::NonFinite => write!(f, "non-finite value in tensor"),
            TensorError::NonScalarLoss => write!(f, "backward requires a 1x1 loss"),
            TensorError::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
        }
    }
}

impl core::error::Error for TensorError {}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Row-major dense matrix; column vectors have shape `(n, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch { expected: (rows, cols), got: (data.len(), 1) });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Tensor::new(n, 1, data)
    }

    pub fn scalar(v: f64) -> Result<Self, TensorError> {
        Tensor::new(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss);
        }
        Ok(self.data[0])
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    fn same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch { expected: self.shape(), got: other.shape() });
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Whether a parameter participates in L2 regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A named trainable tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Flat, ordered collection of all trainable parameters of a model.
/// Iteration order is insertion order, which makes every reduction over
/// parameters deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.into(),
            kind,
            grad: Tensor::zeros(r, c),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.kind == ParamKind::Weight).map(|(id, _)| id).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Snapshot of all parameter values, in store order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Restores values from a snapshot taken on an identically shaped store.
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<(), TensorError> {
        if snapshot.len() != self.params.len() {
            return Err(TensorError::IndexOutOfRange { index: snapshot.len(), len: self.params.len() });
        }
        for (p, (name, t)) in self.params.iter_mut().zip(snapshot) {
            if p.name != *name || p.value.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch { expected: p.value.shape(), got: t.shape() });
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(ValueId, ValueId),
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    Sigmoid(ValueId),
    Tanh(ValueId),
    SumList(Vec<ValueId>),
    Concat(Vec<ValueId>),
    LogSoftmax(ValueId),
    Pick(ValueId, usize),
    SumEntries(ValueId),
    BceWithLogits(ValueId, Tensor),
}

#[derive(Debug)]
struct GraphNode {
    op: Op,
    value: Tensor,
}

/// Dynamically built computation graph. Nodes are appended during the
/// forward pass (so the node list is already a topological order) and
/// gradients flow in reverse over the same list.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<GraphNode>,
    fault_injection: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Test hook: corrupts the tanh backward rule so that gradient checks
    /// must fail (negative control for the checking machinery).
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, on: bool) {
        self.fault_injection = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(GraphNode { op, value });
        ValueId(self.nodes.len() - 1)
    }

    /// Constant leaf (inputs, targets).
    pub fn input(&mut self, t: Tensor) -> ValueId {
        self.push(Op::Input, t)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> ValueId {
        self.push(Op::Input, Tensor::zeros(rows, cols))
    }

    /// Trainable leaf; the current value is captured from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> ValueId {
        self.push(Op::Param(id), store.get(id).value.clone())
    }

    /// Matrix-vector product `m * v`.
    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId, TensorError> {
        let (mr, mc) = self.value(m).shape();
        let (vr, vc) = self.value(v).shape();
        if vc != 1 || mc != vr {
            return Err(TensorError::ShapeMismatch { expected: (mc, 1), got: (vr, vc) });
        }
        let mv = self.value(m);
        let vv = self.value(v);
        let mut out = vec![0.0; mr];
        for i in 0..mr {
            let row = &mv.data[i * mc..(i + 1) * mc];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(&vv.data) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(self.push(Op::MatVec(m, v), Tensor { rows: mr, cols: 1, data: out }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.value(a).same_shape(self.value(b))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let (r, c) = self.value(a).shape();
        Ok(self.push(Op::Add(a, b), Tensor { rows: r, cols: c, data }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.value(a).same_shape(self.value(b))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let (r, c) = self.value(a).shape();
        Ok(self.push(Op::Mul(a, b), Tensor { rows: r, cols: c, data }))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let data = self.value(a).data.iter().map(|x| k * x).collect();
        let (r, c) = self.value(a).shape();
        self.push(Op::Scale(a, k), Tensor { rows: r, cols: c, data })
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data.iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.value(a).shape();
        self.push(Op::Sigmoid(a), Tensor { rows: r, cols: c, data })
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data.iter().map(|&x| libm::tanh(x)).collect();
        let (r, c) = self.value(a).shape();
        self.push(Op::Tanh(a), Tensor { rows: r, cols: c, data })
    }

    /// Sum of equally shaped tensors, left to right. The empty sum is the
    /// zero tensor of the declared shape (Child-Sum leaves rely on this).
    pub fn sum_list(&mut self, items: &[ValueId], rows: usize, cols: usize) -> Result<ValueId, TensorError> {
        let mut acc = Tensor::zeros(rows, cols);
        for &it in items {
            let t = self.value(it);
            if t.shape() != (rows, cols) {
                return Err(TensorError::ShapeMismatch { expected: (rows, cols), got: t.shape() });
            }
            acc.add_assign(t);
        }
        Ok(self.push(Op::SumList(items.to_vec()), acc))
    }

    /// `w * x + b`, as a composition of `matvec` and `add`.
    pub fn affine(&mut self, w: ValueId, x: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Vertical concatenation of column vectors.
    pub fn concat(&mut self, items: &[ValueId]) -> Result<ValueId, TensorError> {
        let mut data = Vec::new();
        for &it in items {
            let t = self.value(it);
            if t.cols != 1 {
                return Err(TensorError::ShapeMismatch { expected: (t.rows, 1), got: t.shape() });
            }
            data.extend_from_slice(&t.data);
        }
        let rows = data.len();
        Ok(self.push(Op::Concat(items.to_vec()), Tensor { rows, cols: 1, data }))
    }

    /// Numerically stable `x - logsumexp(x)` over a column vector.
    pub fn log_softmax(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        let t = self.value(a);
        if t.cols != 1 || t.rows == 0 {
            return Err(TensorError::ShapeMismatch { expected: (1, 1), got: t.shape() });
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &x in &t.data {
            sum += libm::exp(x - max);
        }
        let lse = max + libm::log(sum);
        let data = t.data.iter().map(|x| x - lse).collect();
        let rows = t.rows;
        Ok(self.push(Op::LogSoftmax(a), Tensor { rows, cols: 1, data }))
    }

    /// Extracts entry `index` of a column vector as a 1x1 tensor.
    pub fn pick(&mut self, a: ValueId, index: usize) -> Result<ValueId, TensorError> {
        let t = self.value(a);
        if index >= t.data.len() {
            return Err(TensorError::IndexOutOfRange { index, len: t.data.len() });
        }
        let v = t.data[index];
        Ok(self.push(Op::Pick(a, index), Tensor { rows: 1, cols: 1, data: vec![v] }))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_entries(&mut self, a: ValueId) -> ValueId {
        let mut acc = 0.0;
        for &x in &self.value(a).data {
            acc += x;
        }
        self.push(Op::SumEntries(a), Tensor { rows: 1, cols: 1, data: vec![acc] })
    }

    /// Binary cross entropy summed over entries, computed from logits with
    /// targets in [0,1]: sum_i max(z,0) - z*y + ln(1 + exp(-|z|)).
    pub fn bce_with_logits(&mut self, logits: ValueId, targets: &Tensor) -> Result<ValueId, TensorError> {
        self.value(logits).same_shape(targets)?;
        let mut acc = 0.0;
        for (&z, &y) in self.value(logits).data.iter().zip(&targets.data) {
            acc += z.max(0.0) - z * y + libm::log(1.0 + libm::exp(-libm::fabs(z)));
        }
        Ok(self.push(Op::BceWithLogits(logits, targets.clone()), Tensor {
            rows: 1,
            cols: 1,
            data: vec![acc],
        }))
    }

    /// Reverse pass from a scalar loss. Parameter gradients are accumulated
    /// (`+=`) into the store; call [`ParamStore::zero_grads`] between
    /// unrelated passes.
    pub fn backward(&self, loss: ValueId, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0).expect("finite"));
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pid) => {
                    store.get_mut(*pid).grad.add_assign(&g);
                }
                Op::MatVec(m, v) => {
                    let (mr, mc) = self.value(*m).shape();
                    // dM += g * v^T ; dv += M^T * g
                    let vv = &self.value(*v).data;
                    let mv = &self.value(*m).data;
                    let gm = grads[m.0].get_or_insert_with(|| Tensor::zeros(mr, mc));
                    for r in 0..mr {
                        for c in 0..mc {
                            gm.data[r * mc + c] += g.data[r] * vv[c];
                        }
                    }
                    let gv = grads[v.0].get_or_insert_with(|| Tensor::zeros(mc, 1));
                    for c in 0..mc {
                        let mut acc = 0.0;
                        for r in 0..mr {
                            acc += mv[r * mc + c] * g.data[r];
                        }
                        gv.data[c] += acc;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, self.value(*a).shape());
                    accumulate(&mut grads, *b, &g, self.value(*b).shape());
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.value(*b));
                    accumulate(&mut grads, *a, &ga, self.value(*a).shape());
                    let gb = elementwise(&g, self.value(*a));
                    accumulate(&mut grads, *b, &gb, self.value(*b).shape());
                }
                Op::Scale(a, k) => {
                    let mut ga = g.clone();
                    ga.data.iter_mut().for_each(|x| *x *= k);
                    accumulate(&mut grads, *a, &ga, self.value(*a).shape());
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[i].value;
                    let mut ga = g.clone();
                    for (x, &sv) in ga.data.iter_mut().zip(&s.data) {
                        *x *= sv * (1.0 - sv);
                    }
                    accumulate(&mut grads, *a, &ga, self.value(*a).shape());
                }
                Op::Tanh(a) => {
                    let t = &self.nodes[i].value;
                    let sign = if self.fault_injection { -1.0 } else { 1.0 };
                    let mut ga = g.clone();
                    for (x, &tv) in ga.data.iter_mut().zip(&t.data) {
                        *x *= sign * (1.0 - tv * tv);
                    }
                    accumulate(&mut grads, *a, &ga, self.value(*a).shape());
                }
                Op::SumList(items) => {
                    for &it in items {
                        accumulate(&mut grads, it, &g, self.value(it).shape());
                    }
                }
                Op::Concat(items) => {
                    let mut off = 0;
                    for &it in items {
                        let (r, _) = self.value(it).shape();
                        let part = Tensor {
                            rows: r,
                            cols: 1,
                            data: g.data[off..off + r].to_vec(),
                        };
                        accumulate(&mut grads, it, &part, (r, 1));
                        off += r;
                    }
                }
                Op::LogSoftmax(a) => {
                    // d/dx_i = g_i - softmax_i * sum(g)
                    let y = &self.nodes[i].value;
                    let gsum: f64 = g.data.iter().sum();
                    let mut ga = g.clone();
                    for (x, &yv) in ga.data.iter_mut().zip(&y.data) {
                        *x -= libm::exp(yv) * gsum;
                    }
                    accumulate(&mut grads, *a, &ga, self.value(*a).shape());
                }
                Op::Pick(a, index) => {
                    let (r, c) = self.value(*a).shape();
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    ga.data[*index] += g.data[0];
                }
                Op::SumEntries(a) => {
                    let (r, c) = self.value(*a).shape();
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    for x in ga.data.iter_mut() {
                        *x += g.data[0];
                    }
                }
                Op::BceWithLogits(a, targets) => {
                    // d/dz_i = sigmoid(z_i) - y_i
                    let (r, c) = self.value(*a).shape();
                    let zv = &self.value(*a).data;
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    for ((x, &z), &y) in ga.data.iter_mut().zip(zv).zip(&targets.data) {
                        *x += g.data[0] * (sigmoid(z) - y);
                    }
                }
            }
        }
        Ok(())
    }
}

fn elementwise(g: &Tensor, v: &Tensor) -> Tensor {
    let data = g.data.iter().zip(&v.data).map(|(a, b)| a * b).collect();
    Tensor { rows: g.rows, cols: g.cols, data }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, g: &Tensor, shape: (usize, usize)) {
    let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
    slot.add_assign(g);
}

/// Outcome of [`finite_difference_check`] for one parameter.
#[derive(Debug, Clone)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_err: f64,
}

/// Per-parameter worst relative errors between analytic and central
/// finite-difference gradients.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub per_param: Vec<FdEntry>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tolerance: f64,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.per_param {
            writeln!(f, "{}\t{:.3e}", e.name, e.max_rel_err)?;
        }
        writeln!(
            f,
            "worst\t{}\t{:.3e}\t{}",
            self.worst_param,
            self.max_rel_err,
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = libm::fabs(a).max(libm::fabs(n)).max(1e-8);
    libm::fabs(a - n) / denom
}

/// Compares the analytic gradient of `build` (a deterministic function from
/// the store's parameters to a scalar loss graph) against central finite
/// differences with the given step, for every entry of every parameter.
///
/// Central differences bottom out at a roundoff noise of a few ulps of the
/// loss divided by 2*step; entries whose absolute disagreement is inside
/// that noise band are treated as exact, since no finite-difference probe
/// can resolve them.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    mut build: F,
    step: f64,
    tolerance: f64,
) -> Result<FdReport, TensorError>
where
    F: FnMut(&ParamStore) -> Result<(Graph, ValueId), TensorError>,
{
    store.zero_grads();
    let (graph, loss) = build(store)?;
    let f_base = graph.value(loss).item()?;
    graph.backward(loss, store)?;
    let analytic: Vec<Tensor> = store.iter().map(|(_, p)| p.grad.clone()).collect();
    let noise_floor = 16.0 * f64::EPSILON * libm::fabs(f_base).max(1.0) / (2.0 * step);

    let mut per_param = Vec::new();
    let ids: Vec<ParamId> = store.ids().collect();
    for (pi, &pid) in ids.iter().enumerate() {
        let n_entries = store.get(pid).value.len();
        let mut worst = 0.0f64;
        for e in 0..n_entries {
            let orig = store.get(pid).value.data[e];
            store.get_mut(pid).value.data[e] = orig + step;
            let (g_plus, l_plus) = build(store)?;
            let f_plus = g_plus.value(l_plus).item()?;
            store.get_mut(pid).value.data[e] = orig - step;
            let (g_minus, l_minus) = build(store)?;
            let f_minus = g_minus.value(l_minus).item()?;
            store.get_mut(pid).value.data[e] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[pi].data[e];
            if libm::fabs(a - numeric) > noise_floor {
                worst = worst.max(rel_err(a, numeric));
            }
        }
        per_param.push(FdEntry { name: store.get(pid).name.clone(), max_rel_err: worst });
    }
    let (worst_param, max_rel_err) = per_param
        .iter()
        .map(|e| (e.name.clone(), e.max_rel_err))
        .fold((String::new(), 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    Ok(FdReport { per_param, max_rel_err, worst_param, tolerance })
}

/// Bit-exact text encoding of an f64 (IEEE-754 bits in hex).
pub fn f64_to_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

/// Inverse of [`f64_to_hex`].
pub fn f64_from_hex(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_rejects_nan_and_bad_shape() {
        assert_eq!(Tensor::new(1, 2, vec![1.0]).unwrap_err(), TensorError::ShapeMismatch { expected: (1, 2), got: (1, 1) });
        assert_eq!(Tensor::vector(vec![f64::NAN]).unwrap_err(), TensorError::NonFinite);
        assert_eq!(Tensor::vector(vec![f64::INFINITY]).unwrap_err(), TensorError::NonFinite);
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0]).unwrap());
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).get(0), 0.5);
        assert_eq!(g.value(t).get(0), 0.0);
    }

    #[test]
    fn log_softmax_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.3, 1.3, 1.3, 1.3]).unwrap());
        let y = g.log_softmax(x).unwrap();
        for i in 0..4 {
            assert!((g.value(y).get(i) + (4.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sum_is_zero_vector() {
        let mut g = Graph::new();
        let s = g.sum_list(&[], 3, 1).unwrap();
        assert_eq!(g.value(s).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_list_of_k_copies_is_exact() {
        let mut g = Graph::new();
        let v = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.sum_list(&[v, v, v, v], 3, 1).unwrap();
        assert_eq!(g.value(s).values(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum_entries(wv);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn chain_rule_closed_form() {
        // loss = sigmoid(w * x), scalar: d/dw = sigmoid'(wx) * x
        let (w0, x0) = (0.7, -1.3);
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::scalar(w0).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.input(Tensor::scalar(x0).unwrap());
        let wx = g.mul(wv, x).unwrap();
        let loss = g.sigmoid(wx);
        g.backward(loss, &mut store).unwrap();
        let s = 1.0 / (1.0 + (-(w0 * x0)).exp());
        let expected = s * (1.0 - s) * x0;
        assert!((store.get(w).grad.get(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::vector(vec![0.3, 0.8]).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum_entries(sq);
        g.backward(loss, &mut store).unwrap();
        let once: Vec<f64> = store.get(w).grad.values().to_vec();
        g.backward(loss, &mut store).unwrap();
        let twice: Vec<f64> = store.get(w).grad.values().to_vec();
        assert_eq!(twice, once.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamKind::Weight, Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        assert_eq!(g.backward(wv, &mut store).unwrap_err(), TensorError::NonScalarLoss);
    }

    #[test]
    fn fd_check_quadratic_passes() {
        let mut store = ParamStore::new();
        store.add("theta", ParamKind::Weight, Tensor::vector(vec![0.4, -1.1, 2.0]).unwrap());
        let report = finite_difference_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let ids: Vec<ParamId> = s.ids().collect();
                let t = g.param(s, ids[0]);
                let sq = g.mul(t, t)?;
                let loss = g.sum_entries(sq);
                Ok((g, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn fd_check_detects_corrupted_backward() {
        let mut store = ParamStore::new();
        store.add("theta", ParamKind::Weight, Tensor::vector(vec![0.4, -1.1]).unwrap());
        let report = finite_difference_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                g.inject_backward_fault(true);
                let ids: Vec<ParamId> = s.ids().collect();
                let t = g.param(s, ids[0]);
                let th = g.tanh(t);
                let loss = g.sum_entries(th);
                Ok((g, loss))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass());
    }

    #[test]
    fn all_primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let mut store = ParamStore::new();
            let n = 4;
            let rnd = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
                (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            store.add("m", ParamKind::Weight, Tensor::new(n, n, rnd(&mut rng, n * n)).unwrap());
            store.add("v", ParamKind::Weight, Tensor::vector(rnd(&mut rng, n)).unwrap());
            store.add("b", ParamKind::Bias, Tensor::vector(rnd(&mut rng, n)).unwrap());
            let targets = Tensor::vector(vec![1.0, 0.0, 1.0, 0.0]).unwrap();
            let report = finite_difference_check(
                &mut store,
                |s| {
                    let mut g = Graph::new();
                    let ids: Vec<ParamId> = s.ids().collect();
                    let (m, v, b) = (ids[0], ids[1], ids[2]);
                    let mv = g.param(s, m);
                    let vv = g.param(s, v);
                    let bv = g.param(s, b);
                    let aff = g.affine(mv, vv, bv)?;
                    let sg = g.sigmoid(aff);
                    let th = g.tanh(aff);
                    let prod = g.mul(sg, th)?;
                    let summed = g.sum_list(&[prod, vv, bv], 4, 1)?;
                    let sc = g.scale(summed, 0.37);
                    let cat = g.concat(&[sc, vv])?;
                    let ls = g.log_softmax(aff)?;
                    let picked = g.pick(ls, trial % 4)?;
                    let bce = g.bce_with_logits(aff, &targets)?;
                    let se = g.sum_entries(cat);
                    let total0 = g.add(se, picked)?;
                    let total = g.add(total0, bce)?;
                    Ok((g, total))
                },
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass(), "trial {trial}: max rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn hex_roundtrip_is_bit_exact() {
        for v in [0.0, -0.0, 1.5, -3.14159, 1e-300, f64::MIN_POSITIVE] {
            let s = f64_to_hex(v);
            assert_eq!(f64_from_hex(&s).unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(f64_from_hex("zz"), None);
    }
}
