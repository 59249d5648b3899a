//! Define-by-run reverse-mode automatic differentiation.
//!
//! A fresh [`Tape`] is built per minibatch: forward ops append nodes in
//! topological order and record what the backward rule needs, then
//! [`Tape::backward`] walks the nodes exactly once in reverse. The tape
//! also carries an f64 re-execution path ([`Tape::eval_f64`]) used by the
//! finite-difference gradient oracle, which replays the recorded graph
//! (including frozen dropout masks) at higher precision.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamBinding, ParamStore};
use crate::tensor::{dim_error, matmul_f32_t, matmul_f64, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddRowBias { a: NodeId, bias: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    SoftmaxRows { a: NodeId },
    /// Saved mask holds the per-element multiplier (0 or 1/(1-rate)).
    Dropout { a: NodeId, mask: Vec<f32> },
    ConcatCols { a: NodeId, b: NodeId },
    SliceCols { a: NodeId, start: usize, width: usize },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    Scale { a: NodeId, c: f32 },
    CrossEntropyFromProbs { probs: NodeId, labels: Vec<u32> },
    Mse { pred: NodeId, target: NodeId },
}

struct Node {
    value: Tensor,
    grad: Vec<f32>,
    op: Op,
}

/// Append-only computation graph. Node inputs always precede the node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input node (no gradient exported).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Trainable input node; its gradient is read back after `backward`.
    pub fn trainable_leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient buffer of a node (zeros before `backward` has run).
    pub fn grad(&self, id: NodeId) -> &[f32] {
        &self.nodes[id.0].grad
    }

    /// Scalar value of a shape-[1] node.
    pub fn scalar_value(&self, id: NodeId) -> f32 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let numel = value.numel();
        self.nodes.push(Node { value, grad: vec![0.0; numel], op });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &[f32] {
        self.nodes[id.0].value.data()
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_error("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_f32_t(self.val(a), false, self.val(b), false, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_error(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f32> =
            self.val(a).iter().zip(self.val(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op(a, b)))
    }

    /// Adds a bias vector to every row of a 2-D tensor.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(bias).to_vec();
        if sa.len() != 2 || self.nodes[bias.0].value.numel() != sa[1] {
            return Err(dim_error("add_row_bias", &sa, &sb));
        }
        let (m, n) = (sa[0], sa[1]);
        let mut out = self.val(a).to_vec();
        let bv = self.val(bias);
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv[j];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRowBias { a, bias }))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| x.max(0.0), |a| Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| 1.0 / (1.0 + (-x).exp()), |a| Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| x.tanh(), |a| Op::Tanh { a })
    }

    fn map_elementwise(
        &mut self,
        a: NodeId,
        f: impl Fn(f32) -> f32,
        op: impl Fn(NodeId) -> Op,
    ) -> Result<NodeId> {
        let out: Vec<f32> = self.val(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op(a)))
    }

    /// Row-wise softmax with max-subtraction; row sums accumulate in f64.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[1] < 1 {
            return Err(dim_error("softmax_rows", &sa, &[]));
        }
        let (m, n) = (sa[0], sa[1]);
        let out = softmax_rows_f32(self.val(a), m, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::SoftmaxRows { a }))
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). Identity (the input node is returned) when not training
    /// or `rate == 0`.
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: f32,
        rng: &mut ChaCha8Rng,
        training: bool,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..self.nodes[a.0].value.numel())
            .map(|_| if rng.random::<f32>() < rate { 0.0 } else { scale })
            .collect();
        let out: Vec<f32> = self.val(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { a, mask }))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(dim_error("concat_cols", &sa, &sb));
        }
        let (m, p, q) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.val(a), self.val(b));
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        Ok(self.push(Tensor::new(vec![m, p + q], out)?, Op::ConcatCols { a, b }))
    }

    /// Contiguous column range `[start, start + width)` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || width == 0 || start + width > sa[1] {
            return Err(Error::Contract(format!(
                "slice_cols [{start}, {}) out of bounds for shape {sa:?}",
                start + width
            )));
        }
        let (m, n) = (sa[0], sa[1]);
        let av = self.val(a);
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + width]);
        }
        Ok(self.push(Tensor::new(vec![m, width], out)?, Op::SliceCols { a, start, width }))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let numel = self.nodes[a.0].value.numel();
        let s: f64 = self.val(a).iter().map(|&x| x as f64).sum();
        Ok(self.push(Tensor::scalar((s / numel as f64) as f32), Op::MeanAll { a }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.val(a).iter().map(|&x| x as f64).sum();
        Ok(self.push(Tensor::scalar(s as f32), Op::SumAll { a }))
    }

    /// Copies a node's value into a fresh constant leaf, cutting the
    /// gradient path (the value is identical bit for bit).
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.clone();
        self.leaf(value)
    }

    /// Multiplication by a compile-time constant (loss weighting).
    pub fn scale(&mut self, a: NodeId, c: f32) -> Result<NodeId> {
        let out: Vec<f32> = self.val(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale { a, c }))
    }

    /// Mean categorical cross-entropy from probability rows,
    /// `-mean(log probs[i, y_i])`, log clamped at 1e-12.
    pub fn cross_entropy_from_probs(&mut self, probs: NodeId, labels: &[u32]) -> Result<NodeId> {
        let sp = self.shape(probs).to_vec();
        if sp.len() != 2 || sp[0] != labels.len() {
            return Err(dim_error("cross_entropy", &sp, &[labels.len()]));
        }
        let (m, c) = (sp[0], sp[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let pv = self.val(probs);
        let mut total = 0.0f64;
        for (i, &y) in labels.iter().enumerate() {
            total -= (pv[i * c + y as usize].max(CE_CLAMP) as f64).ln();
        }
        let value = Tensor::scalar((total / m as f64) as f32);
        Ok(self.push(value, Op::CrossEntropyFromProbs { probs, labels: labels.to_vec() }))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) {
            return Err(dim_error("mse", self.shape(pred), self.shape(target)));
        }
        let (pv, tv) = (self.val(pred), self.val(target));
        let total: f64 =
            pv.iter().zip(tv).map(|(&p, &t)| ((p - t) as f64) * ((p - t) as f64)).sum();
        let value = Tensor::scalar((total / pv.len() as f64) as f32);
        Ok(self.push(value, Op::Mse { pred, target }))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Populates the gradient buffer
    /// of every node; leaves not reachable from the loss keep zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            // Detach grad and op from the node to sidestep aliasing with
            // the input-grad accumulation below.
            let grad = std::mem::take(&mut self.nodes[i].grad);
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    let da = matmul_f32_t(&grad, false, self.val(b), true, m, n, k);
                    let db = matmul_f32_t(self.val(a), true, &grad, false, k, m, n);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &grad);
                    self.accumulate_scaled(b, &grad, -1.0);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<f32> =
                        grad.iter().zip(self.val(b)).map(|(&g, &y)| g * y).collect();
                    let db: Vec<f32> =
                        grad.iter().zip(self.val(a)).map(|(&g, &x)| g * x).collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddRowBias { a, bias } => {
                    let (a, bias) = (*a, *bias);
                    let n = self.shape(a)[1];
                    let mut db = vec![0.0f32; n];
                    for (idx, &g) in grad.iter().enumerate() {
                        db[idx % n] += g;
                    }
                    self.accumulate(a, &grad);
                    self.accumulate(bias, &db);
                }
                Op::Relu { a } => {
                    let a = *a;
                    let da: Vec<f32> = grad
                        .iter()
                        .zip(self.val(a))
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let out = self.nodes[i].value.data();
                    let da: Vec<f32> =
                        grad.iter().zip(out).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                    self.accumulate(a, &da);
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let out = self.nodes[i].value.data();
                    let da: Vec<f32> =
                        grad.iter().zip(out).map(|(&g, &t)| g * (1.0 - t * t)).collect();
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let a = *a;
                    let s = self.nodes[i].value.data();
                    let n = self.shape(a)[1];
                    let mut da = vec![0.0f32; s.len()];
                    for r in 0..self.shape(a)[0] {
                        let row = r * n;
                        let dot: f64 = (0..n)
                            .map(|j| grad[row + j] as f64 * s[row + j] as f64)
                            .sum();
                        for j in 0..n {
                            da[row + j] = s[row + j] * (grad[row + j] - dot as f32);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Dropout { a, mask } => {
                    let a = *a;
                    let da: Vec<f32> = grad.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    self.accumulate(a, &da);
                }
                Op::ConcatCols { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, p) = (self.shape(a)[0], self.shape(a)[1]);
                    let q = self.shape(b)[1];
                    let mut da = vec![0.0f32; m * p];
                    let mut db = vec![0.0f32; m * q];
                    for r in 0..m {
                        da[r * p..(r + 1) * p]
                            .copy_from_slice(&grad[r * (p + q)..r * (p + q) + p]);
                        db[r * q..(r + 1) * q]
                            .copy_from_slice(&grad[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::SliceCols { a, start, width } => {
                    let (a, start, width) = (*a, *start, *width);
                    let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut da = vec![0.0f32; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + width]
                            .copy_from_slice(&grad[r * width..(r + 1) * width]);
                    }
                    self.accumulate(a, &da);
                }
                Op::MeanAll { a } => {
                    let a = *a;
                    let g = grad[0] / self.nodes[a.0].value.numel() as f32;
                    let da = vec![g; self.nodes[a.0].value.numel()];
                    self.accumulate(a, &da);
                }
                Op::SumAll { a } => {
                    let a = *a;
                    let da = vec![grad[0]; self.nodes[a.0].value.numel()];
                    self.accumulate(a, &da);
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    self.accumulate_scaled(a, &grad, c);
                }
                Op::CrossEntropyFromProbs { probs, labels } => {
                    let probs = *probs;
                    let c = self.shape(probs)[1];
                    let m = labels.len();
                    let pv = self.val(probs);
                    let mut dp = vec![0.0f32; pv.len()];
                    for (r, &y) in labels.iter().enumerate() {
                        let idx = r * c + y as usize;
                        dp[idx] = -grad[0] / (m as f32 * pv[idx].max(CE_CLAMP));
                    }
                    self.accumulate(probs, &dp);
                }
                Op::Mse { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let numel = self.nodes[pred.0].value.numel() as f32;
                    let scale = 2.0 * grad[0] / numel;
                    let d: Vec<f32> = self
                        .val(pred)
                        .iter()
                        .zip(self.val(target))
                        .map(|(&p, &t)| scale * (p - t))
                        .collect();
                    self.accumulate(pred, &d);
                    self.accumulate_scaled(target, &d, -1.0);
                }
            }
            self.nodes[i].op = op;
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &[f32]) {
        for (g, &d) in self.nodes[id.0].grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn accumulate_scaled(&mut self, id: NodeId, delta: &[f32], factor: f32) {
        for (g, &d) in self.nodes[id.0].grad.iter_mut().zip(delta) {
            *g += factor * d;
        }
    }

    // ── f64 re-execution (finite-difference oracle support) ─────────

    /// Replays the recorded graph up to `target` in f64, reading leaf
    /// values from `overrides` where present (keyed by leaf node). Saved
    /// dropout masks and labels are reused, so the replay is a fixed
    /// deterministic function of the leaf values.
    pub fn eval_f64(&self, target: NodeId, overrides: &HashMap<usize, Vec<f64>>) -> f64 {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(target.0 + 1);
        for i in 0..=target.0 {
            let node = &self.nodes[i];
            let v: Vec<f64> = match &node.op {
                Op::Leaf => match overrides.get(&i) {
                    Some(o) => o.clone(),
                    None => node.value.data().iter().map(|&x| x as f64).collect(),
                },
                Op::Matmul { a, b } => {
                    let sa = self.shape(*a);
                    let n = self.shape(*b)[1];
                    matmul_f64(&values[a.0], &values[b.0], sa[0], sa[1], n)
                }
                Op::Add { a, b } => {
                    values[a.0].iter().zip(&values[b.0]).map(|(x, y)| x + y).collect()
                }
                Op::Sub { a, b } => {
                    values[a.0].iter().zip(&values[b.0]).map(|(x, y)| x - y).collect()
                }
                Op::Mul { a, b } => {
                    values[a.0].iter().zip(&values[b.0]).map(|(x, y)| x * y).collect()
                }
                Op::AddRowBias { a, bias } => {
                    let n = self.shape(*a)[1];
                    values[a.0]
                        .iter()
                        .enumerate()
                        .map(|(idx, x)| x + values[bias.0][idx % n])
                        .collect()
                }
                Op::Relu { a } => values[a.0].iter().map(|&x| x.max(0.0)).collect(),
                Op::Sigmoid { a } => {
                    values[a.0].iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()
                }
                Op::Tanh { a } => values[a.0].iter().map(|&x| x.tanh()).collect(),
                Op::SoftmaxRows { a } => {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut out = vec![0.0f64; m * n];
                    for r in 0..m {
                        let row = &values[a.0][r * n..(r + 1) * n];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for j in 0..n {
                            let e = (row[j] - max).exp();
                            out[r * n + j] = e;
                            sum += e;
                        }
                        for j in 0..n {
                            out[r * n + j] /= sum;
                        }
                    }
                    out
                }
                Op::Dropout { a, mask } => {
                    values[a.0].iter().zip(mask).map(|(&x, &m)| x * m as f64).collect()
                }
                Op::ConcatCols { a, b } => {
                    let (m, p) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let q = self.shape(*b)[1];
                    let mut out = Vec::with_capacity(m * (p + q));
                    for r in 0..m {
                        out.extend_from_slice(&values[a.0][r * p..(r + 1) * p]);
                        out.extend_from_slice(&values[b.0][r * q..(r + 1) * q]);
                    }
                    out
                }
                Op::SliceCols { a, start, width } => {
                    let n = self.shape(*a)[1];
                    let m = self.shape(*a)[0];
                    let mut out = Vec::with_capacity(m * width);
                    for r in 0..m {
                        out.extend_from_slice(
                            &values[a.0][r * n + start..r * n + start + width],
                        );
                    }
                    out
                }
                Op::MeanAll { a } => {
                    let s: f64 = values[a.0].iter().sum();
                    vec![s / values[a.0].len() as f64]
                }
                Op::SumAll { a } => vec![values[a.0].iter().sum()],
                Op::Scale { a, c } => values[a.0].iter().map(|x| x * *c as f64).collect(),
                Op::CrossEntropyFromProbs { probs, labels } => {
                    let c = self.shape(*probs)[1];
                    let total: f64 = labels
                        .iter()
                        .enumerate()
                        .map(|(r, &y)| -values[probs.0][r * c + y as usize]
                            .max(CE_CLAMP as f64)
                            .ln())
                        .sum();
                    vec![total / labels.len() as f64]
                }
                Op::Mse { pred, target } => {
                    let total: f64 = values[pred.0]
                        .iter()
                        .zip(&values[target.0])
                        .map(|(p, t)| (p - t) * (p - t))
                        .sum();
                    vec![total / values[pred.0].len() as f64]
                }
            };
            values.push(v);
        }
        values[target.0][0]
    }
}

const CE_CLAMP: f32 = 1e-12;

fn softmax_rows_f32(input: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for r in 0..m {
        let row = &input[r * n..(r + 1) * n];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for j in 0..n {
            let e = (row[j] - max).exp();
            out[r * n + j] = e;
            sum += e as f64;
        }
        for j in 0..n {
            out[r * n + j] = (out[r * n + j] as f64 / sum) as f32;
        }
    }
    out
}

/// Compares analytic gradients against central finite differences computed
/// by the f64 replay path. Returns the worst relative error over every
/// parameter coordinate, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(store: &ParamStore, epsilon: f64, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamBinding) -> Result<NodeId>,
{
    if epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut tape = Tape::new();
    let binding = ParamBinding::bind_all(&mut tape, store);
    let loss = build(&mut tape, &binding)?;
    tape.backward(loss)?;

    let mut max_rel = 0.0f64;
    for (name, &node) in binding.entries() {
        let base: Vec<f64> =
            store.get(name).expect("bound param").value.data().iter().map(|&x| x as f64).collect();
        let analytic: Vec<f64> = tape.grad(node).iter().map(|&g| g as f64).collect();
        let mut overrides = HashMap::new();
        overrides.insert(node.0, base.clone());
        for i in 0..base.len() {
            overrides.get_mut(&node.0).unwrap()[i] = base[i] + epsilon;
            let plus = tape.eval_f64(loss, &overrides);
            overrides.get_mut(&node.0).unwrap()[i] = base[i] - epsilon;
            let minus = tape.eval_f64(loss, &overrides);
            overrides.get_mut(&node.0).unwrap()[i] = base[i];
            let numeric = (plus - minus) / (2.0 * epsilon);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
