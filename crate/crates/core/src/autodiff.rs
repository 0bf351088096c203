//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records one forward pass. [`Tensor`] is a handle into the tape;
//! nodes are appended in evaluation order, so walking the node list backwards
//! is a valid reverse topological order and each node is visited once.
//! Gradients of shared nodes accumulate.

use rayon::prelude::*;
use thiserror::Error;

use crate::qnn::{qnn_forward_fast, qnn_forward_state, qnn_vjp, QnnError, QnnSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("tensor values have length {got}, shape needs {expected}")]
    ValueLength { expected: usize, got: usize },
    #[error("class label {label} out of range for {classes} logits")]
    Label { label: usize, classes: usize },
    #[error(transparent)]
    Qnn(#[from] QnnError),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    /// `a * b^T`
    MatMulT(Tensor, Tensor),
    Add(Tensor, Tensor),
    /// Adds a `[1, cols]` row to every row.
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    SoftmaxRows(Tensor),
    MeanRows(Tensor),
    LayerNormRows { input: Tensor, inv_std: Vec<f64> },
    Sum(Tensor),
    Mse { input: Tensor, target: Vec<f64> },
    CrossEntropy { logits: Tensor, label: usize, probs: Vec<f64> },
    /// Final real state of every row, `[rows, 2^n]`, kept for the adjoint sweep.
    Quantum { input: Tensor, params: Tensor, pairs: Vec<(usize, usize)>, states: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    track: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), track: true }
    }

    /// A tape that computes values only. Forward results are bit-identical
    /// to a tracking tape.
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), track: false }
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = requires_grad && self.track;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { rows, cols, value, requires_grad, op });
        Tensor(self.nodes.len() - 1)
    }

    fn needs(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        self.leaf(rows, cols, values, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        self.leaf(rows, cols, values, false)
    }

    fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>, grad: bool) -> Result<Tensor> {
        if values.len() != rows * cols {
            return Err(AutodiffError::ValueLength { expected: rows * cols, got: values.len() });
        }
        Ok(self.push(rows, cols, values, grad, Op::Leaf))
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let ((m, k), (k2, p)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(AutodiffError::Shape { op: "matmul", lhs: (m, k), rhs: (k2, p) });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let orow = &mut out[i * p..(i + 1) * p];
            for kk in 0..k {
                let aik = av[i * k + kk];
                let brow = &bv[kk * p..(kk + 1) * p];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let g = self.needs(&[a, b]);
        Ok(self.push(m, p, out, g, Op::MatMul(a, b)))
    }

    /// `a * b^T` for `a: [m, k]`, `b: [p, k]`.
    pub fn matmul_t(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let ((m, k), (p, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(AutodiffError::Shape { op: "matmul_t", lhs: (m, k), rhs: (p, k2) });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..p {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * p + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let g = self.needs(&[a, b]);
        Ok(self.push(m, p, out, g, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::Shape { op: "add", lhs: sa, rhs: sb });
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let g = self.needs(&[a, b]);
        Ok(self.push(sa.0, sa.1, out, g, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AutodiffError::Shape { op: "add_row", lhs: sa, rhs: sr });
        }
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(sa.1)
            .flat_map(|r| r.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        let g = self.needs(&[a, row]);
        Ok(self.push(sa.0, sa.1, out, g, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let g = self.needs(&[a]);
        self.push(r, c, out, g, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let g = self.needs(&[a]);
        self.push(r, c, out, g, Op::Relu(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let g = self.needs(&[a]);
        self.push(r, c, out, g, Op::SoftmaxRows(a))
    }

    /// Mean over rows, `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let g = self.needs(&[a]);
        self.push(1, c, out, g, Op::MeanRows(a))
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Tensor) -> Tensor {
        const EPS: f64 = 1e-5;
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in out.chunks_exact_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + EPS).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let g = self.needs(&[a]);
        self.push(r, c, out, g, Op::LayerNormRows { input: a, inv_std })
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().sum();
        let g = self.needs(&[a]);
        self.push(1, 1, vec![s], g, Op::Sum(a))
    }

    /// Mean squared error against a constant target, reduced to `[1, 1]`.
    pub fn mse_loss(&mut self, a: Tensor, target: &[f64]) -> Result<Tensor> {
        let s = self.shape(a);
        if target.len() != s.0 * s.1 {
            return Err(AutodiffError::ValueLength { expected: s.0 * s.1, got: target.len() });
        }
        let n = target.len() as f64;
        let loss = self.value(a).iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum::<f64>() / n;
        let g = self.needs(&[a]);
        Ok(self.push(1, 1, vec![loss], g, Op::Mse { input: a, target: target.to_vec() }))
    }

    /// Softmax cross-entropy of a `[1, C]` logit row against a class index,
    /// computed through log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Tensor, label: usize) -> Result<Tensor> {
        let (r, c) = self.shape(logits);
        if r != 1 {
            return Err(AutodiffError::Shape { op: "softmax_cross_entropy", lhs: (r, c), rhs: (1, c) });
        }
        if label >= c {
            return Err(AutodiffError::Label { label, classes: c });
        }
        let v = self.value(logits);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - v[label];
        let mut probs = v.to_vec();
        softmax_in_place(&mut probs);
        let g = self.needs(&[logits]);
        Ok(self.push(1, 1, vec![loss], g, Op::CrossEntropy { logits, label, probs }))
    }

    /// Runs every row of `input` through the QNN whose circuit parameters are
    /// the `[1, 2n]` tensor `params` on the given pair topology. Jacobians
    /// are computed during the forward pass when gradients are tracked.
    pub fn quantum_apply(
        &mut self,
        input: Tensor,
        params: Tensor,
        pairs: &[(usize, usize)],
    ) -> Result<Tensor> {
        let (rows, n) = self.shape(input);
        let ps = self.shape(params);
        if ps != (1, 2 * n) {
            return Err(AutodiffError::Shape { op: "quantum_apply", lhs: (rows, n), rhs: ps });
        }
        let spec = QnnSpec::new(n, pairs.to_vec(), self.value(params).to_vec())?;
        let xv = self.value(input);
        let track = self.track && self.needs(&[input, params]);

        let mut out = Vec::with_capacity(rows * n);
        let mut states = Vec::new();
        if track {
            let per_row = map_rows(xv, n, |x| qnn_forward_state(x, &spec))?;
            states.reserve(rows << n);
            for (y, psi) in per_row {
                out.extend(y);
                states.extend(psi);
            }
        } else {
            for y in map_rows(xv, n, |x| qnn_forward_fast(x, &spec))? {
                out.extend(y);
            }
        }
        Ok(self.push(rows, n, out, track, Op::Quantum { input, params, pairs: pairs.to_vec(), states }))
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Tensor) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let root_node = &self.nodes[root.0];
        if !root_node.requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(vec![1.0; root_node.value.len()]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |t: Tensor, contribution: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[t.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[t.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            contribution(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let p = nodes[b.0].cols;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                // dA = G B^T
                acc(a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * p..(i + 1) * p];
                        for kk in 0..k {
                            let brow = &bv[kk * p..(kk + 1) * p];
                            ga[i * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = A^T G
                acc(b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * p..(i + 1) * p];
                        for kk in 0..k {
                            let aik = av[i * k + kk];
                            for (o, x) in gb[kk * p..(kk + 1) * p].iter_mut().zip(grow) {
                                *o += aik * x;
                            }
                        }
                    }
                });
            }
            &Op::MatMulT(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let p = nodes[b.0].rows;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                // out = A B^T; dA = G B, dB = G^T A
                acc(a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..p {
                            let gij = g[i * p + j];
                            for (o, x) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *o += gij * x;
                            }
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..m {
                        for j in 0..p {
                            let gij = g[i * p + j];
                            for (o, x) in gb[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *o += gij * x;
                            }
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                for t in [a, b] {
                    acc(t, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                }
            }
            &Op::AddRow(a, row) => {
                let c = node.cols;
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                acc(row, &mut |gr| {
                    for grow in g.chunks_exact(c) {
                        gr.iter_mut().zip(grow).for_each(|(o, x)| *o += x);
                    }
                });
            }
            &Op::Scale(a, s) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += s * x));
            }
            &Op::Relu(a) => {
                let av = &nodes[a.0].value;
                acc(a, &mut |ga| {
                    for ((o, x), v) in ga.iter_mut().zip(g).zip(av) {
                        if *v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            &Op::SoftmaxRows(a) => {
                let c = node.cols;
                let y = &node.value;
                acc(a, &mut |ga| {
                    for ((grow, yrow), orow) in g.chunks_exact(c).zip(y.chunks_exact(c)).zip(ga.chunks_exact_mut(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((o, gx), yx) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yx * (gx - dot);
                        }
                    }
                });
            }
            &Op::MeanRows(a) => {
                let r = nodes[a.0].rows;
                let inv = 1.0 / r as f64;
                acc(a, &mut |ga| {
                    for orow in ga.chunks_exact_mut(node.cols) {
                        orow.iter_mut().zip(g).for_each(|(o, x)| *o += x * inv);
                    }
                });
            }
            Op::LayerNormRows { input, inv_std } => {
                let c = node.cols;
                let y = &node.value;
                acc(*input, &mut |ga| {
                    for (((grow, yrow), orow), is) in g
                        .chunks_exact(c)
                        .zip(y.chunks_exact(c))
                        .zip(ga.chunks_exact_mut(c))
                        .zip(inv_std)
                    {
                        let mg = grow.iter().sum::<f64>() / c as f64;
                        let mgy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((o, gx), yx) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += is * (gx - mg - yx * mgy);
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mse { input, target } => {
                let av = &nodes[input.0].value;
                let scale = 2.0 * g[0] / target.len() as f64;
                acc(*input, &mut |ga| {
                    for ((o, x), t) in ga.iter_mut().zip(av).zip(target) {
                        *o += scale * (x - t);
                    }
                });
            }
            Op::CrossEntropy { logits, label, probs } => {
                acc(*logits, &mut |ga| {
                    for (i, (o, p)) in ga.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        *o += g[0] * (p - onehot);
                    }
                });
            }
            Op::Quantum { input, params, pairs, states } => {
                let n = node.cols;
                let spec = QnnSpec::new(n, pairs.clone(), nodes[params.0].value.clone())
                    .expect("spec validated in forward");
                let dim = 1usize << n;
                let idx: Vec<usize> = (0..node.rows).collect();
                let vjp = |&r: &usize| {
                    qnn_vjp(&spec, &states[r * dim..(r + 1) * dim], &g[r * n..(r + 1) * n])
                        .expect("shapes fixed in forward")
                };
                let rows: Vec<(Vec<f64>, Vec<f64>)> = if node.rows >= PAR_MIN_ROWS && rayon::current_num_threads() > 1 {
                    idx.par_iter().map(vjp).collect()
                } else {
                    idx.iter().map(vjp).collect()
                };
                acc(*input, &mut |gi| {
                    for (orow, (dx, _)) in gi.chunks_exact_mut(n).zip(&rows) {
                        orow.iter_mut().zip(dx).for_each(|(o, d)| *o += d);
                    }
                });
                acc(*params, &mut |gp| {
                    for (_, dp) in &rows {
                        gp.iter_mut().zip(dp).for_each(|(o, d)| *o += d);
                    }
                });
            }
        }
    }
}

const PAR_MIN_ROWS: usize = 64;

/// Evaluates `f` on each `width`-wide row, in parallel for large inputs.
/// Results keep row order, so downstream sums are order-fixed.
fn map_rows<T: Send>(
    values: &[f64],
    width: usize,
    f: impl Fn(&[f64]) -> std::result::Result<T, QnnError> + Sync,
) -> Result<Vec<T>> {
    let rows = values.len() / width;
    let out: std::result::Result<Vec<T>, QnnError> = if rows >= PAR_MIN_ROWS && rayon::current_num_threads() > 1 {
        values.par_chunks_exact(width).map(&f).collect()
    } else {
        values.chunks_exact(width).map(&f).collect()
    };
    Ok(out?)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Gradients produced by [`Tape::backward`], indexed by tensor.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&[f64]> {
        self.grads.get(t.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `t`, or zeros of the given length when `t` received none.
    pub fn get_or_zeros(&self, t: Tensor, len: usize) -> Vec<f64> {
        self.get(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}
