//! Reverse-mode tape over dense tensors.
//!
//! Forward ops append a node holding the output value and whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes once in reverse
//! insertion order (which is a topological order) and returns the gradients
//! of every trainable parameter leaf.

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;
use rand::Rng;

use super::param::{GradUpdate, ParamGrads, ParamId, ParamSet};
use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};
use crate::spline::SplineGrid;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv1dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv1dOptions {
    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Relu(Var),
    Gelu(Var),
    Silu(Var),
    Prelu(Var, Var),
    Conv1d {
        input: Var,
        kernel: Var,
        opts: Conv1dOptions,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    AvgPool(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Bspline {
        input: Var,
        derivs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Silu(_) => "silu",
            Op::Prelu(..) => "prelu",
            Op::Conv1d { .. } => "conv1d",
            Op::InstanceNorm { .. } => "instance_norm_1d",
            Op::AvgPool(_) => "adaptive_avg_pool_to_1",
            Op::Dropout { .. } => "dropout",
            Op::Embedding { .. } => "embedding_lookup",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::Bspline { .. } => "bspline_basis",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded record of one forward pass. Parameter leaves read their
/// values from the borrowed [`ParamSet`] without copying.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value (output shape {:?})",
                op.name(),
                value.shape()
            )));
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let requires_grad = self.params.get(id).trainable();
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m x k] @ [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid(format!("matmul shape mismatch: {sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), (m, k), false, self.value(b).data(), (k, n), false, &mut out, 0.0);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)?;
        let (ma, mb) = (broadcast_map(&sa, &out_shape), broadcast_map(&sb, &out_shape));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
        self.push(Tensor::from_parts(out_shape, out), op, &[a, b])
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(a), |x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Exact GELU, `x * Phi(x)` with the Gaussian CDF written through `erf`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), gelu);
        self.push(out, Op::Gelu(a), &[a])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x * sigmoid(x));
        self.push(out, Op::Silu(a), &[a])
    }

    /// Parametric ReLU with one shared slope (a one-element tensor).
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(Error::invalid(format!(
                "prelu slope must have one element, got shape {:?}",
                self.shape(slope)
            )));
        }
        let s = self.value(slope).item();
        let out = map(self.value(a), |x| if x > 0.0 { x } else { s * x });
        self.push(out, Op::Prelu(a, slope), &[a, slope])
    }

    /// Cross-correlation of `[batch x C_in x L]` (or `[C_in x L]`) with a
    /// `[C_out x C_in/groups x K]` kernel. No bias.
    pub fn conv1d(&mut self, input: Var, kernel: Var, opts: Conv1dOptions) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let geom = ConvGeometry::new(&si, &sk, opts)?;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let rows = geom.col_rows();
        let n = geom.batch * geom.l_out;
        let mut out = vec![0.0; geom.batch * geom.c_out * geom.l_out];
        let mut cols = vec![0.0; rows * n];
        let mut y = vec![0.0; geom.cout_g * n];
        for g in 0..opts.groups {
            geom.im2col(x, g, &mut cols);
            let w_g = &w[g * geom.cout_g * rows..(g + 1) * geom.cout_g * rows];
            gemm(w_g, (geom.cout_g, rows), false, &cols, (rows, n), false, &mut y, 0.0);
            geom.scatter_out(&y, g, &mut out);
        }
        let shape = if si.len() == 2 {
            vec![geom.c_out, geom.l_out]
        } else {
            vec![geom.batch, geom.c_out, geom.l_out]
        };
        self.push(Tensor::from_parts(shape, out), Op::Conv1d { input, kernel, opts }, &[input, kernel])
    }

    /// Normalizes every row of the last axis to zero mean and unit (biased)
    /// variance: `(x - mean) / sqrt(var + eps)`. No affine parameters.
    pub fn instance_norm_1d(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let len = *t.shape().last().ok_or_else(|| Error::invalid("instance_norm_1d needs at least one axis"))?;
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / len);
        for row in out.chunks_exact_mut(len) {
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::InstanceNorm { input, inv_std }, &[input])
    }

    /// Mean over the last axis, which is dropped from the output shape.
    pub fn adaptive_avg_pool_to_1(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.ndim() < 2 {
            return Err(Error::invalid(format!(
                "adaptive_avg_pool_to_1 expects [.. x C x L], got {:?}",
                t.shape()
            )));
        }
        let len = *t.shape().last().unwrap();
        let out = t.data().chunks_exact(len).map(|r| r.iter().sum::<f64>() / len as f64).collect();
        let shape = t.shape()[..t.ndim() - 1].to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AvgPool(input), &[input])
    }

    /// Inverted dropout: kept values are scaled by `1 / (1 - p)` during
    /// training. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng>(&mut self, input: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(input);
        }
        let scale = 1.0 / (1.0 - p);
        let t = self.value(input);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Dropout { input, mask }, &[input])
    }

    /// Gathers rows of a `[V x d]` table. The output shape is
    /// `index_shape + [d]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize], index_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::invalid(format!("embedding table must be 2-D, got {st:?}")));
        }
        if index_shape.iter().product::<usize>() != indices.len() {
            return Err(Error::invalid(format!(
                "index shape {index_shape:?} does not match {} indices",
                indices.len()
            )));
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!("embedding index {bad} out of range for table {st:?}")));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(dim);
        let indices = indices.to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Embedding { table, indices }, &[table])
    }

    /// Mean softmax cross-entropy of `[batch x classes]` logits (or a single
    /// `[classes]` row) against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (batch, classes) = match t.shape() {
            [n] => (1, *n),
            [b, n] => (*b, *n),
            s => return Err(Error::invalid(format!("logits must be 1-D or 2-D, got {s:?}"))),
        };
        if labels.len() != batch {
            return Err(Error::invalid(format!(
                "{} labels for logits of shape {:?}",
                labels.len(),
                t.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for ((row, p), &label) in t.data().chunks_exact(classes).zip(probs.chunks_exact_mut(classes)).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|v| *v /= z);
            loss += z.ln() + max - row[label];
        }
        let labels = labels.to_vec();
        self.push(
            Tensor::scalar(loss / batch as f64),
            Op::SoftmaxCrossEntropy { logits, labels, probs },
            &[logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let mut seen = vec![false; t.ndim()];
        if axes.len() != t.ndim() || axes.iter().any(|&ax| ax >= t.ndim() || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::invalid(format!("invalid permutation {axes:?} for shape {:?}", t.shape())));
        }
        let (shape, data) = permute(t, axes);
        self.push(Tensor::from_parts(shape, data), Op::Permute(a, axes.to_vec()), &[a])
    }

    /// Evaluates every B-spline basis function at each element; output shape
    /// is `input_shape + [G + k]`.
    pub fn bspline(&mut self, input: Var, grid: &SplineGrid) -> Result<Var> {
        let t = self.value(input);
        let nb = grid.num_basis();
        let mut out = vec![0.0; t.numel() * nb];
        let needs_derivs = self.requires_grad(input);
        let mut derivs = if needs_derivs { vec![0.0; t.numel() * nb] } else { Vec::new() };
        for (i, &x) in t.data().iter().enumerate() {
            let row = &mut out[i * nb..(i + 1) * nb];
            if needs_derivs {
                grid.basis_and_derivative_into(x, row, &mut derivs[i * nb..(i + 1) * nb]);
            } else {
                grid.basis_into(x, row);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.push(nb);
        self.push(Tensor::from_parts(shape, out), Op::Bspline { input, derivs }, &[input])
    }

    /// Back-propagates from a scalar `loss` and returns the gradient of every
    /// trainable parameter reached. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<ParamGrads> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = ParamGrads::default();
        let loss_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut ParamGrads) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.updates.push((*id, GradUpdate::Dense(g))),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), (m, n), false, self.value(*b).data(), (k, n), true, &mut ga, 0.0);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(self.value(*a).data(), (m, k), true, g.data(), (m, n), false, &mut gb, 0.0);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let ga = reduce_to(g.data(), g.shape(), self.shape(*a), |gi, _| gi);
                self.accumulate(grads, *a, ga);
                let gb = reduce_to(g.data(), g.shape(), self.shape(*b), |gi, _| sign * gi);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let out_shape = g.shape();
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ma, mb) = (broadcast_map(va.shape(), out_shape), broadcast_map(vb.shape(), out_shape));
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; va.numel()];
                    for (i, gi) in g.data().iter().enumerate() {
                        ga[ma[i]] += gi * vb.data()[mb[i]];
                    }
                    self.accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; vb.numel()];
                    for (i, gi) in g.data().iter().enumerate() {
                        gb[mb[i]] += gi * va.data()[ma[i]];
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vb.shape().to_vec(), gb));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, map(&g, |x| x * f)),
            Op::Square(a) => {
                let ga = zip_map(&g, self.value(*a), |gi, x| 2.0 * x * gi);
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = zip_map(&g, self.value(*a), |gi, x| gi * gelu_derivative(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Silu(a) => {
                let ga = zip_map(&g, self.value(*a), |gi, x| {
                    let s = sigmoid(x);
                    gi * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Prelu(a, slope) => {
                let s = self.value(*slope).item();
                let x = self.value(*a);
                let ga = zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { s * gi });
                self.accumulate(grads, *a, ga);
                let gs: f64 = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .filter(|(_, &xi)| xi <= 0.0)
                    .map(|(gi, xi)| gi * xi)
                    .sum();
                let shape = self.shape(*slope).to_vec();
                self.accumulate(grads, *slope, Tensor::from_parts(shape, vec![gs]));
            }
            Op::Conv1d { input, kernel, opts } => {
                let (si, sk) = (self.shape(*input).to_vec(), self.shape(*kernel).to_vec());
                let geom = ConvGeometry::new(&si, &sk, *opts)?;
                let x = self.value(*input).data();
                let w = self.value(*kernel).data();
                let rows = geom.col_rows();
                let want_x = self.requires_grad(*input);
                let want_w = self.requires_grad(*kernel);
                let mut gw = if want_w { vec![0.0; w.len()] } else { Vec::new() };
                let mut gx = if want_x { vec![0.0; x.len()] } else { Vec::new() };
                let n = geom.batch * geom.l_out;
                let mut cols = vec![0.0; rows * n];
                let mut g_y = vec![0.0; geom.cout_g * n];
                for grp in 0..opts.groups {
                    geom.gather_out(g.data(), grp, &mut g_y);
                    let wr = grp * geom.cout_g * rows..(grp + 1) * geom.cout_g * rows;
                    if want_w {
                        geom.im2col(x, grp, &mut cols);
                        gemm(&g_y, (geom.cout_g, n), false, &cols, (rows, n), true, &mut gw[wr.clone()], 1.0);
                    }
                    if want_x {
                        gemm(&w[wr], (geom.cout_g, rows), true, &g_y, (geom.cout_g, n), false, &mut cols, 0.0);
                        geom.col2im(&cols, grp, &mut gx);
                    }
                }
                if want_w {
                    self.accumulate(grads, *kernel, Tensor::from_parts(sk, gw));
                }
                if want_x {
                    self.accumulate(grads, *input, Tensor::from_parts(si, gx));
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                let y = y.expect("instance norm keeps its output");
                let len = *y.shape().last().unwrap();
                let mut gx = vec![0.0; y.numel()];
                for (((gr, yr), out), &inv) in g
                    .data()
                    .chunks_exact(len)
                    .zip(y.data().chunks_exact(len))
                    .zip(gx.chunks_exact_mut(len))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().sum::<f64>() / len as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / len as f64;
                    for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gi - mean_g - yi * mean_gy);
                    }
                }
                self.accumulate(grads, *input, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::AvgPool(input) => {
                let shape = self.shape(*input).to_vec();
                let len = *shape.last().unwrap();
                let gx = g.data().iter().flat_map(|&gi| std::iter::repeat_n(gi / len as f64, len)).collect();
                self.accumulate(grads, *input, Tensor::from_parts(shape, gx));
            }
            Op::Dropout { input, mask } => {
                let gx = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *input, Tensor::from_parts(g.shape().to_vec(), gx));
            }
            Op::Embedding { table, indices } => {
                let shape = self.shape(*table).to_vec();
                let dim = shape[1];
                match self.nodes[table.0].op {
                    Op::Param(id) => out.updates.push((
                        id,
                        GradUpdate::Rows {
                            rows: indices.clone(),
                            values: g.into_data(),
                        },
                    )),
                    _ => {
                        let mut gt = vec![0.0; shape[0] * dim];
                        for (&i, row) in indices.iter().zip(g.data().chunks_exact(dim)) {
                            gt[i * dim..(i + 1) * dim].iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        self.accumulate(grads, *table, Tensor::from_parts(shape, gt));
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.shape(*logits).to_vec();
                let classes = *shape.last().unwrap();
                let scale = g.item() / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &label) in gl.chunks_exact_mut(classes).zip(labels) {
                    row[label] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, gl));
            }
            Op::Sum(a) | Op::Mean(a) => {
                let t = self.value(*a);
                let gi = if matches!(node.op, Op::Mean(_)) { g.item() / t.numel() as f64 } else { g.item() };
                self.accumulate(grads, *a, Tensor::full(t.shape().to_vec(), gi));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.reshaped(shape)?);
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let (shape, data) = permute(&g, &inverse);
                self.accumulate(grads, *a, Tensor::from_parts(shape, data));
            }
            Op::Bspline { input, derivs } => {
                let shape = self.shape(*input).to_vec();
                let nb = *g.shape().last().unwrap();
                let gx = g
                    .data()
                    .chunks_exact(nb)
                    .zip(derivs.chunks_exact(nb))
                    .map(|(gr, dr)| gr.iter().zip(dr).map(|(a, b)| a * b).sum())
                    .collect();
                self.accumulate(grads, *input, Tensor::from_parts(shape, gx));
            }
        }
        Ok(())
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect())
}

/// `c = a' @ b' + beta * c`, where `'` is an optional transpose and shapes
/// are given before transposition.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_shape: (usize, usize),
    ta: bool,
    b: &[f64],
    b_shape: (usize, usize),
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm rhs shape");
    let a = if ta { a.reversed_axes() } else { a };
    let b = if tb { b.reversed_axes() } else { b };
    let mut c = ndarray::ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm output shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::invalid(format!("cannot broadcast shapes {a:?} and {b:?}"))),
        };
    }
    Ok(out)
}

/// For each linear index of `out_shape`, the linear index of the broadcast
/// source element in `in_shape`.
fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n = out_shape.len();
    let offset = n - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0; n];
    for i in 0..in_shape.len() {
        if in_shape[i] != 1 {
            eff[i + offset] = in_strides[i];
        }
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0; n];
    let mut pos = 0;
    for _ in 0..total {
        map.push(pos);
        for ax in (0..n).rev() {
            counter[ax] += 1;
            pos += eff[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            pos -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    map
}

fn reduce_to(g: &[f64], out_shape: &[usize], in_shape: &[usize], f: impl Fn(f64, usize) -> f64) -> Tensor {
    if out_shape == in_shape {
        return Tensor::from_parts(in_shape.to_vec(), g.iter().enumerate().map(|(i, &x)| f(x, i)).collect());
    }
    let m = broadcast_map(in_shape, out_shape);
    let mut acc = vec![0.0; in_shape.iter().product()];
    for (i, &gi) in g.iter().enumerate() {
        acc[m[i]] += f(gi, i);
    }
    Tensor::from_parts(in_shape.to_vec(), acc)
}

fn permute(t: &Tensor, axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = t.data();
    let Some((&inner_len, outer_shape)) = out_shape.split_last() else {
        return (out_shape, src.to_vec());
    };
    let inner_stride = eff[eff.len() - 1];
    let outer = outer_shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut counter = vec![0; outer];
    let mut pos = 0;
    for _ in 0..src.len() / inner_len {
        out.extend((0..inner_len).map(|j| src[pos + j * inner_stride]));
        for ax in (0..outer).rev() {
            counter[ax] += 1;
            pos += eff[ax];
            if counter[ax] < outer_shape[ax] {
                break;
            }
            pos -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (out_shape, out)
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    cin_g: usize,
    cout_g: usize,
    l_out: usize,
    opts: Conv1dOptions,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], opts: Conv1dOptions) -> Result<Self> {
        let (batch, c_in, len) = match input {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            s => return Err(Error::invalid(format!("conv1d input must be [C x L] or [B x C x L], got {s:?}"))),
        };
        let [c_out, cin_g, k] = kernel else {
            return Err(Error::invalid(format!("conv1d kernel must be [C_out x C_in/groups x K], got {kernel:?}")));
        };
        if opts.stride == 0 || opts.dilation == 0 || opts.groups == 0 {
            return Err(Error::invalid(format!("conv1d stride, dilation and groups must be positive: {opts:?}")));
        }
        if c_in % opts.groups != 0 || c_out % opts.groups != 0 || c_in / opts.groups != *cin_g {
            return Err(Error::invalid(format!(
                "conv1d shape mismatch: input {input:?}, kernel {kernel:?}, groups {}",
                opts.groups
            )));
        }
        let l_out = opts.output_len(len, *k).ok_or_else(|| {
            Error::invalid(format!("conv1d input {input:?} is shorter than kernel {kernel:?} allows"))
        })?;
        Ok(Self {
            batch,
            c_in,
            len,
            c_out: *c_out,
            kernel: *k,
            cin_g: *cin_g,
            cout_g: c_out / opts.groups,
            l_out,
            opts,
        })
    }

    fn col_rows(&self) -> usize {
        self.cin_g * self.kernel
    }

    fn source(&self, p: usize, t: usize) -> Option<usize> {
        let pos = (p * self.opts.stride + t * self.opts.dilation) as isize - self.opts.padding as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }

    /// Column matrix `[cin_g*K x batch*l_out]` of one group; column
    /// `b*l_out + p` holds the receptive field of output position `p` of
    /// sample `b`.
    fn im2col(&self, x: &[f64], group: usize, cols: &mut [f64]) {
        let n = self.batch * self.l_out;
        for ci in 0..self.cin_g {
            for t in 0..self.kernel {
                let row = &mut cols[(ci * self.kernel + t) * n..][..n];
                for b in 0..self.batch {
                    let base = (b * self.c_in + group * self.cin_g + ci) * self.len;
                    for (p, v) in row[b * self.l_out..][..self.l_out].iter_mut().enumerate() {
                        *v = self.source(p, t).map_or(0.0, |s| x[base + s]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], group: usize, gx: &mut [f64]) {
        let n = self.batch * self.l_out;
        for ci in 0..self.cin_g {
            for t in 0..self.kernel {
                let row = &cols[(ci * self.kernel + t) * n..][..n];
                for b in 0..self.batch {
                    let base = (b * self.c_in + group * self.cin_g + ci) * self.len;
                    for (p, v) in row[b * self.l_out..][..self.l_out].iter().enumerate() {
                        if let Some(s) = self.source(p, t) {
                            gx[base + s] += v;
                        }
                    }
                }
            }
        }
    }

    /// `[cout_g x batch*l_out]` group result into the `[B x C_out x L_out]` output.
    fn scatter_out(&self, y: &[f64], group: usize, out: &mut [f64]) {
        let n = self.batch * self.l_out;
        for co in 0..self.cout_g {
            for b in 0..self.batch {
                let dst = (b * self.c_out + group * self.cout_g + co) * self.l_out;
                out[dst..dst + self.l_out].copy_from_slice(&y[co * n + b * self.l_out..][..self.l_out]);
            }
        }
    }

    fn gather_out(&self, out: &[f64], group: usize, y: &mut [f64]) {
        let n = self.batch * self.l_out;
        for co in 0..self.cout_g {
            for b in 0..self.batch {
                let src = (b * self.c_out + group * self.cout_g + co) * self.l_out;
                y[co * n + b * self.l_out..][..self.l_out].copy_from_slice(&out[src..src + self.l_out]);
            }
        }
    }
}
