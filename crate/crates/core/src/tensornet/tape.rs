use super::params::{ParamId, ParamSet};
use super::{Precision, Tensor, TensorError, TensorResult};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10000.0;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    ConcatGroups { parts: Vec<(usize, usize)>, groups: usize },
    TileRows { x: usize, times: usize },
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Softmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    NormalizeRows { x: usize, norms: Vec<f64> },
    Rope { x: usize, cos: Vec<f64>, sin: Vec<f64>, head_dim: usize },
    Attention { q: usize, k: usize, v: usize, heads: usize, lq: usize, lk: usize, probs: Vec<f64> },
    L1 { pred: usize, target: usize },
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<usize>,
}

/// Append-only record of a forward computation. One backward pass per tape.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    consumed: bool,
    param_vars: Vec<Option<usize>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    param_vars: Vec<Option<usize>>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradient with respect to a parameter; zeros when the parameter did not
    /// influence the loss.
    pub fn param(&self, params: &ParamSet, id: ParamId) -> Vec<f64> {
        let n = params.value(id).len();
        self.param_vars
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|node| self.grads[node].clone())
            .unwrap_or_else(|| vec![0.0; n])
    }

    /// Gradients for every parameter, in parameter order.
    pub fn params(&self, params: &ParamSet) -> Vec<Vec<f64>> {
        params.iter().map(|(id, _)| self.param(params, id)).collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    // Row-major operands; a transposed operand is described by swapped strides.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices hold m*k, k*n and m*n elements laid out with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(Precision::F64)
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape { nodes: Vec::new(), precision, consumed: false, param_vars: Vec::new() }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, mut value: Tensor, op: Op, op_name: &'static str, inputs: &[usize]) -> TensorResult<Var> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.precision == Precision::F32 {
            for x in value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
        if !value.is_finite() {
            return Err(TensorError::NumericFault { op: op_name });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[*i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn v(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> TensorResult<Var> {
        let v = self.push(value, Op::Leaf, "input", &[])?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorResult<Var> {
        self.push(value, Op::Leaf, "constant", &[])
    }

    /// Records a parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> TensorResult<Var> {
        if let Some(Some(node)) = self.param_vars.get(id.index()) {
            return Ok(Var(*node));
        }
        let v = self.input(params.value(id).clone())?;
        self.nodes[v.0].param = Some(id.index());
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(v.0);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), "matmul", &[a.0, b.0])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> TensorResult<()> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.v(a), self.v(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data).expect("shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Op::Add(a.0, b.0), "add", &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a.0, b.0), "sub", &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a.0, b.0), "mul", &[a.0, b.0])
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> TensorResult<Var> {
        let (ta, tr) = (self.v(a), self.v(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| x + tr.data()[i % c]).collect();
        let out = Tensor::matrix(ta.rows(), c, data)?;
        self.push(out, Op::AddRow(a.0, row.0), "add_row", &[a.0, row.0])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> TensorResult<Var> {
        let ta = self.v(a);
        let out = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * s).collect())?;
        self.push(out, Op::Scale(a.0, s), "scale", &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Config("concat of nothing".into()))?;
        let rows = self.v(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.v(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.v(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.v(*p).row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(ids.clone()), "concat_cols", &ids)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> TensorResult<Var> {
        let t = self.v(x);
        if start >= end || end > t.cols() {
            return Err(TensorError::Shape { op: "slice_cols", left: t.shape().to_vec(), right: vec![start, end] });
        }
        let data = (0..t.rows()).flat_map(|r| t.row(r)[start..end].iter().copied()).collect();
        let out = Tensor::matrix(t.rows(), end - start, data)?;
        self.push(out, Op::SliceCols { x: x.0, start }, "slice_cols", &[x.0])
    }

    /// Interleaves row groups: part `i` holds `groups` consecutive blocks of
    /// `len_i` rows, and the output holds, per group, the blocks of every part
    /// in order.
    pub fn concat_groups(&mut self, parts: &[(Var, usize)], groups: usize) -> TensorResult<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Config("concat of nothing".into()))?;
        let cols = self.v(first.0).cols();
        for (p, len) in parts {
            let t = self.v(*p);
            if t.cols() != cols || t.rows() != groups * len {
                return Err(TensorError::Shape {
                    op: "concat_groups",
                    left: t.shape().to_vec(),
                    right: vec![groups * len, cols],
                });
            }
        }
        let total: usize = parts.iter().map(|(_, l)| l).sum();
        let mut data = Vec::with_capacity(groups * total * cols);
        for g in 0..groups {
            for (p, len) in parts {
                let t = self.v(*p);
                data.extend_from_slice(&t.data()[g * len * cols..(g + 1) * len * cols]);
            }
        }
        let ids: Vec<(usize, usize)> = parts.iter().map(|(p, l)| (p.0, *l)).collect();
        let inputs: Vec<usize> = ids.iter().map(|(p, _)| *p).collect();
        let out = Tensor::matrix(groups * total, cols, data)?;
        self.push(out, Op::ConcatGroups { parts: ids, groups }, "concat_groups", &inputs)
    }

    /// Stacks `times` copies of `x` along rows.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> TensorResult<Var> {
        let t = self.v(x);
        let mut data = Vec::with_capacity(t.len() * times);
        for _ in 0..times {
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(t.rows() * times, t.cols(), data)?;
        self.push(out, Op::TileRows { x: x.0, times }, "tile_rows", &[x.0])
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> TensorResult<Var> {
        let t = self.v(x);
        let out = Tensor::matrix(t.rows(), t.cols(), t.data().iter().map(|v| f(*v)).collect())?;
        self.push(out, op, name, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> TensorResult<Var> {
        self.map(x, |v| v.max(0.0), Op::Relu(x.0), "relu")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> TensorResult<Var> {
        self.map(x, |v| gelu(v).0, Op::Gelu(x.0), "gelu")
    }

    pub fn sigmoid(&mut self, x: Var) -> TensorResult<Var> {
        self.map(x, sigmoid, Op::Sigmoid(x.0), "sigmoid")
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, x: Var) -> TensorResult<Var> {
        let t = self.v(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::matrix(t.rows(), c, data)?;
        self.push(out, Op::Softmax(x.0), "softmax", &[x.0])
    }

    /// Row-wise normalization followed by the affine `gamma * xhat + beta`,
    /// with `gamma` and `beta` of shape `1 x cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> TensorResult<Var> {
        let (t, g, b) = (self.v(x), self.v(gamma), self.v(beta));
        let c = t.cols();
        if g.len() != c || b.len() != c {
            return Err(shape_err("layer_norm", t, g));
        }
        let rows = t.rows();
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(t.len());
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                xhat.push(xh);
                out.push(xh * g.data()[j] + b.data()[j]);
            }
        }
        let out = Tensor::matrix(rows, c, out)?;
        self.push(out, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std }, "layer_norm", &[
            x.0, gamma.0, beta.0,
        ])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> TensorResult<Var> {
        let t = self.v(x);
        let c = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(TensorError::NumericFault { op: "normalize_rows" });
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let out = Tensor::matrix(t.rows(), c, data)?;
        self.push(out, Op::NormalizeRows { x: x.0, norms }, "normalize_rows", &[x.0])
    }

    /// Rotary embedding: within each head, coordinate pair `(2i, 2i+1)` of
    /// row `r` is rotated by `positions[r] * base^(-2i/head_dim)`.
    pub fn rope(&mut self, x: Var, positions: &[f64], heads: usize, base: f64) -> TensorResult<Var> {
        let t = self.v(x);
        let d = t.cols();
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config(format!("width {d} not divisible by {heads} heads")));
        }
        let hd = d / heads;
        if hd % 2 != 0 {
            return Err(TensorError::Config(format!("rotary embedding needs an even head dimension, got {hd}")));
        }
        if positions.len() != t.rows() {
            return Err(TensorError::Shape { op: "rope", left: t.shape().to_vec(), right: vec![positions.len()] });
        }
        let half = hd / 2;
        let mut cos = Vec::with_capacity(t.rows() * half);
        let mut sin = Vec::with_capacity(t.rows() * half);
        for p in positions {
            for i in 0..half {
                let a = p * base.powf(-2.0 * i as f64 / hd as f64);
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        let mut data = t.data().to_vec();
        for r in 0..t.rows() {
            for h in 0..heads {
                for i in 0..half {
                    let (c, s) = (cos[r * half + i], sin[r * half + i]);
                    let j = r * d + h * hd + 2 * i;
                    let (x0, x1) = (data[j], data[j + 1]);
                    data[j] = x0 * c - x1 * s;
                    data[j + 1] = x0 * s + x1 * c;
                }
            }
        }
        let out = Tensor::matrix(t.rows(), d, data)?;
        self.push(out, Op::Rope { x: x.0, cos, sin, head_dim: hd }, "rope", &[x.0])
    }

    /// Scaled dot-product attention without masking, batched over row groups:
    /// `q` holds `groups x lq` rows, `k` and `v` hold `groups x lk` rows, and
    /// columns split into `heads` equal slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, lq: usize, lk: usize) -> TensorResult<Var> {
        let (tq, tk, tv) = (self.v(q), self.v(k), self.v(v));
        let d = tq.cols();
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config(format!("width {d} not divisible by {heads} heads")));
        }
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(shape_err("attention", tk, tv));
        }
        if lq == 0 || lk == 0 || tq.rows() % lq != 0 || tk.rows() != (tq.rows() / lq) * lk {
            return Err(shape_err("attention", tq, tk));
        }
        let groups = tq.rows() / lq;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut probs = vec![0.0; groups * heads * lq * lk];
        let mut out = vec![0.0; tq.len()];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * hd;
                for i in 0..lq {
                    let qi = &qd[(g * lq + i) * d + off..(g * lq + i) * d + off + hd];
                    let p = &mut probs[((g * heads + h) * lq + i) * lk..((g * heads + h) * lq + i + 1) * lk];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &kd[(g * lk + j) * d + off..(g * lk + j) * d + off + hd];
                        *pj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(p);
                    let o = &mut out[(g * lq + i) * d + off..(g * lq + i) * d + off + hd];
                    for (j, pj) in p.iter().enumerate() {
                        let vj = &vd[(g * lk + j) * d + off..(g * lk + j) * d + off + hd];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += pj * vc;
                        }
                    }
                }
            }
        }
        let out = Tensor::matrix(tq.rows(), d, out)?;
        self.push(out, Op::Attention { q: q.0, k: k.0, v: v.0, heads, lq, lk, probs }, "attention", &[q.0, k.0, v.0])
    }

    /// Attention weights recorded by an [`Tape::attention`] node, laid out as
    /// `[group][head][query][key]`.
    pub fn attention_weights(&self, out: Var) -> Option<&[f64]> {
        match &self.nodes[out.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean over rows of the row-wise l1 distance. The subgradient of `|x|`
    /// at 0 is taken as 0.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> TensorResult<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let (tp, tt) = (self.v(pred), self.v(target));
        let total: f64 = tp.data().iter().zip(tt.data()).map(|(a, b)| (a - b).abs()).sum();
        let out = Tensor::scalar(total / tp.rows() as f64);
        self.push(out, Op::L1 { pred: pred.0, target: target.0 }, "l1_loss", &[pred.0, target.0])
    }

    pub fn sum(&mut self, x: Var) -> TensorResult<Var> {
        let s = self.v(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), "sum", &[x.0])
    }

    /// Reverse-mode accumulation from a scalar loss. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> TensorResult<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lshape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(lshape));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes, param_vars: self.param_vars.clone() })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| &self.nodes[i].value;
        let acc = |grads: &mut [Option<Vec<f64>>], i: usize, contrib: Vec<f64>| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[*a].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, &mut da, 0.0);
                    acc(grads, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, &mut db, 0.0);
                    acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(grads, *a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                acc(grads, *b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, g.to_vec());
                let c = val(*r).cols();
                let mut dr = vec![0.0; c];
                for (i, x) in g.iter().enumerate() {
                    dr[i % c] += x;
                }
                acc(grads, *r, dr);
            }
            Op::Scale(a, s) => acc(grads, *a, g.iter().map(|x| x * s).collect()),
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + off..r * total + off + c]);
                    }
                    acc(grads, *p, dp);
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let t = val(*x);
                let (c, w) = (t.cols(), node.value.cols());
                let mut dx = vec![0.0; t.len()];
                for r in 0..t.rows() {
                    dx[r * c + start..r * c + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                acc(grads, *x, dx);
            }
            Op::ConcatGroups { parts, groups } => {
                let cols = node.value.cols();
                let total: usize = parts.iter().map(|(_, l)| l).sum();
                let mut off = 0;
                for (p, len) in parts {
                    let mut dp = Vec::with_capacity(groups * len * cols);
                    for gi in 0..*groups {
                        let start = (gi * total + off) * cols;
                        dp.extend_from_slice(&g[start..start + len * cols]);
                    }
                    acc(grads, *p, dp);
                    off += len;
                }
            }
            Op::TileRows { x, times } => {
                let n = val(*x).len();
                let mut dx = vec![0.0; n];
                for t in 0..*times {
                    dx.iter_mut().zip(&g[t * n..(t + 1) * n]).for_each(|(d, v)| *d += v);
                }
                acc(grads, *x, dx);
            }
            Op::Relu(x) => {
                let t = val(*x);
                acc(grads, *x, g.iter().zip(t.data()).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Gelu(x) => {
                let t = val(*x);
                acc(grads, *x, g.iter().zip(t.data()).map(|(gv, v)| gv * gelu(*v).1).collect());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(grads, *x, g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect());
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for r in 0..node.value.rows() {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let c = node.value.cols();
                let gm = val(*gamma).data();
                let rows = node.value.rows();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; rows * c];
                for r in 0..rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..c {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        let d = gr[j] * gm[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    let inv = inv_std[r];
                    for j in 0..c {
                        let d = gr[j] * gm[j];
                        dx[r * c + j] = inv * (d - sum_d / c as f64 - xh[j] * sum_dx / c as f64);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
            }
            Op::NormalizeRows { x, norms } => {
                let c = node.value.cols();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for (r, n) in norms.iter().enumerate() {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Rope { x, cos, sin, head_dim } => {
                let d = node.value.cols();
                let half = head_dim / 2;
                let heads = d / head_dim;
                let mut dx = g.to_vec();
                for r in 0..node.value.rows() {
                    for h in 0..heads {
                        for i in 0..half {
                            let (c, s) = (cos[r * half + i], sin[r * half + i]);
                            let j = r * d + h * head_dim + 2 * i;
                            let (g0, g1) = (g[j], g[j + 1]);
                            dx[j] = g0 * c + g1 * s;
                            dx[j + 1] = -g0 * s + g1 * c;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Attention { q, k, v, heads, lq, lk, probs } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let d = tq.cols();
                let hd = d / heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let groups = tq.rows() / lq;
                let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
                let mut dq = vec![0.0; tq.len()];
                let mut dk = vec![0.0; tk.len()];
                let mut dv = vec![0.0; tv.len()];
                let mut dp = vec![0.0; *lk];
                for gi in 0..groups {
                    for h in 0..*heads {
                        let off = h * hd;
                        for i in 0..*lq {
                            let qrow = (gi * lq + i) * d + off;
                            let go = &g[qrow..qrow + hd];
                            let p = &probs[((gi * heads + h) * lq + i) * lk..((gi * heads + h) * lq + i + 1) * lk];
                            for j in 0..*lk {
                                let krow = (gi * lk + j) * d + off;
                                dp[j] = go.iter().zip(&vd[krow..krow + hd]).map(|(a, b)| a * b).sum();
                                for c in 0..hd {
                                    dv[krow + c] += p[j] * go[c];
                                }
                            }
                            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..*lk {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let krow = (gi * lk + j) * d + off;
                                for c in 0..hd {
                                    dq[qrow + c] += ds * kd[krow + c];
                                    dk[krow + c] += ds * qd[qrow + c];
                                }
                            }
                        }
                    }
                }
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::L1 { pred, target } => {
                let (tp, tt) = (val(*pred), val(*target));
                let w = g[0] / tp.rows() as f64;
                let sign: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(a, b)| match (a - b).partial_cmp(&0.0) {
                        Some(std::cmp::Ordering::Greater) => w,
                        Some(std::cmp::Ordering::Less) => -w,
                        _ => 0.0,
                    })
                    .collect();
                acc(grads, *target, sign.iter().map(|s| -s).collect());
                acc(grads, *pred, sign);
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                acc(grads, *x, vec![g[0]; n]);
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::default();
        let a = tape.constant(t(2, 3, &[1., 2., 3., 4., 5., 6.])).unwrap();
        let i = tape.constant(Tensor::eye(3)).unwrap();
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
        let bad = tape.constant(Tensor::eye(2)).unwrap();
        assert!(matches!(tape.matmul(a, bad), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::default();
        let x = tape.constant(Tensor::zeros(1, 4)).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn l1_offset_example() {
        let mut tape = Tape::default();
        let target = Tensor::filled(8, 6, 0.3);
        let pred = Tensor::new(vec![8, 6], target.data().iter().map(|v| v + 0.01).collect()).unwrap();
        let p = tape.input(pred).unwrap();
        let q = tape.constant(target).unwrap();
        let l = tape.l1_loss(p, q).unwrap();
        let mut oracle = 0.0;
        for _row in 0..8 {
            let mut row_sum = 0.0;
            for _ in 0..6 {
                row_sum += ((0.3f64 + 0.01) - 0.3).abs();
            }
            oracle += row_sum;
        }
        oracle /= 8.0;
        assert!((tape.value(l).item() - oracle).abs() < 1e-15);
        assert!((tape.value(l).item() - 0.06).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones_and_tape_is_single_use() {
        let mut tape = Tape::default();
        let x = tape.input(t(2, 2, &[1., -2., 3., 0.5])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 4]);
        assert!(matches!(tape.backward(s), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::default();
        let x = tape.input(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn numeric_fault_is_reported() {
        let mut tape = Tape::default();
        let x = tape.input(Tensor::filled(1, 2, 1e300)).unwrap();
        assert!(matches!(tape.scale(x, 1e300), Err(TensorError::NumericFault { op: "scale" })));
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let mut tape = Tape::default();
        let x = tape.constant(t(1, 4, &[0.3, -0.7, 1.1, 0.2])).unwrap();
        let y = tape.rope(x, &[0.0], 1, ROPE_BASE).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(matches!(tape.rope(x, &[0.0], 4, ROPE_BASE), Err(TensorError::Config(_))));
    }

    #[test]
    fn single_key_attention_copies_value() {
        let mut tape = Tape::default();
        let q = tape.constant(t(3, 4, &[0.1, 0.2, 0.3, 0.4, -1., 2., 0., 1., 5., 5., 5., 5.])).unwrap();
        let k = tape.constant(t(1, 4, &[0.9, -0.1, 0.4, 0.0])).unwrap();
        let v = tape.constant(t(1, 4, &[7., 8., 9., 10.])).unwrap();
        let o = tape.attention(q, k, v, 2, 3, 1).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(o).row(r), &[7., 8., 9., 10.]);
        }
    }

    #[test]
    fn f32_mode_rounds_outputs() {
        let mut tape = Tape::new(Precision::F32);
        let x = tape.constant(Tensor::scalar(0.1)).unwrap();
        assert_eq!(tape.value(x).item(), 0.1f32 as f64);
    }
}
