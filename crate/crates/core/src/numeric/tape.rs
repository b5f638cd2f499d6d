use std::cell::{Ref, RefCell};

use super::Tensor;
use crate::error::{Error, Result};

/// Floor applied before every logarithm: `ln(max(x, LOG_FLOOR))`.
pub const LOG_FLOOR: f64 = 1e-10;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `[.., n] + [n]`, the bias of a linear map.
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Concat(Var, Var),
    Reshape(Var),
    RepeatInterleave(Var, usize),
    Softmax { input: Var, axis: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Conv2d { input: Var, weight: Var, bias: Var },
    AvgPool2(Var),
    SpatialMean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient; only leaves that require grad keep one.
    grad: Option<Tensor>,
    op: Op,
}

/// Reverse-mode differentiation tape.
///
/// Operations append nodes in execution order, so inputs always precede
/// outputs and a single reverse sweep visits every node after all of its
/// consumers. A tape is single-threaded; independent runs use independent
/// tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let grad = match (&op, requires_grad) {
            (Op::Leaf, true) => Some(Tensor::zeros(value.shape())),
            _ => None,
        };
        nodes.push(Node {
            value,
            requires_grad,
            grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let data = x.data().iter().map(|&v| f(v)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
        };
        let rg = self.needs_grad(&[a]);
        self.push(out, op, rg)
    }

    fn binary_same(&self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() != y.shape() {
                return Err(dim_err(name, x.shape(), y.shape()));
            }
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |v| v * factor)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |v| v.max(LOG_FLOOR).ln())
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// `[.., n] + [n]`: adds `row` to every trailing-axis slice of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, r) = (&nodes[a.0].value, &nodes[row.0].value);
            if r.ndim() != 1 || x.last_dim() != r.numel() {
                return Err(dim_err("add_row", x.shape(), r.shape()));
            }
            let n = r.numel();
            let mut data = x.data().to_vec();
            if n > 0 {
                for chunk in data.chunks_mut(n) {
                    for (v, b) in chunk.iter_mut().zip(r.data()) {
                        *v += b;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
                return Err(dim_err("matmul", x.shape(), y.shape()));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            let mut data = vec![0.0; m * n];
            matmul_into(x.data(), y.data(), &mut data, m, k, n);
            Tensor::new(vec![m, n], data)?
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Concatenation along the last axis, `a` first.
    pub fn concat(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (xs, ys) = (x.shape(), y.shape());
            if xs.is_empty() || xs.len() != ys.len() || xs[..xs.len() - 1] != ys[..ys.len() - 1] {
                return Err(dim_err("concat", xs, ys));
            }
            let (da, db) = (x.last_dim(), y.last_dim());
            let rows: usize = xs[..xs.len() - 1].iter().product();
            let mut data = Vec::with_capacity(rows * (da + db));
            for r in 0..rows {
                data.extend_from_slice(&x.data()[r * da..(r + 1) * da]);
                data.extend_from_slice(&y.data()[r * db..(r + 1) * db]);
            }
            let mut shape = xs.to_vec();
            *shape.last_mut().expect("non-empty") = da + db;
            Tensor::new(shape, data)?
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.reshaped(shape)?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Repeats every trailing-axis element `times` times in place:
    /// `[a, b] -> [a, a, b, b]` for `times = 2`.
    pub fn repeat_interleave(&self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Parameter("repeat count must be positive".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.ndim() == 0 {
                return Err(Error::Dimension("repeat_interleave needs at least one axis".into()));
            }
            let data = x
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, times))
                .collect();
            let mut shape = x.shape().to_vec();
            *shape.last_mut().expect("non-empty") *= times;
            Tensor::new(shape, data)?
        };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::RepeatInterleave(a, times), rg))
    }

    /// Softmax along `axis`, evaluated with max subtraction.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if axis >= x.ndim() {
                return Err(Error::Dimension(format!(
                    "softmax axis {axis} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let mut data = x.data().to_vec();
            let (outer, n, inner) = axis_split(x.shape(), axis);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let max = (0..n).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..n {
                        let e = (data[idx(j)] - max).exp();
                        data[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        data[idx(j)] /= total;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::Softmax { input: a, axis }, rg))
    }

    /// Mean over the batch of `-ln softmax(logits)[label]` for `[batch, C]` logits.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[logits.0].value;
            if x.ndim() != 2 || x.shape()[0] != labels.len() {
                return Err(Error::Dimension(format!(
                    "cross_entropy: logits {:?} vs {} labels",
                    x.shape(),
                    labels.len()
                )));
            }
            let (batch, classes) = (x.shape()[0], x.shape()[1]);
            if batch == 0 {
                return Err(Error::Usage("cross_entropy over an empty batch".into()));
            }
            let mut probs = vec![0.0; batch * classes];
            let mut loss = 0.0;
            for (row, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::Data(format!(
                        "label {label} in row {row} is outside [0, {classes})"
                    )));
                }
                let z = &x.data()[row * classes..(row + 1) * classes];
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[label];
                for (p, v) in probs[row * classes..(row + 1) * classes].iter_mut().zip(z) {
                    *p = (v - lse).exp();
                }
            }
            (loss / batch as f64, probs)
        };
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.data().iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let m = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            x.data().iter().sum::<f64>() / x.numel().max(1) as f64
        };
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Same-padded, stride-1 convolution.
    ///
    /// `input` is `[N, C_in, H, W]`, `weight` is `[C_out, C_in, K, K]` with odd
    /// `K`, `bias` is `[C_out]`.
    pub fn conv2d(&self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, w, b) = (&nodes[input.0].value, &nodes[weight.0].value, &nodes[bias.0].value);
            let geom = ConvGeometry::new(x.shape(), w.shape(), b.shape())?;
            let mut out = vec![0.0; geom.n * geom.c_out * geom.plane()];
            let mut cols = vec![0.0; geom.col_rows() * geom.plane()];
            for s in 0..geom.n {
                geom.im2col(&x.data()[s * geom.sample_in()..(s + 1) * geom.sample_in()], &mut cols);
                let o = &mut out[s * geom.sample_out()..(s + 1) * geom.sample_out()];
                for co in 0..geom.c_out {
                    let row = &mut o[co * geom.plane()..(co + 1) * geom.plane()];
                    row.fill(b.data()[co]);
                    let wrow = &w.data()[co * geom.col_rows()..(co + 1) * geom.col_rows()];
                    for (r, &wv) in wrow.iter().enumerate() {
                        axpy(wv, &cols[r * geom.plane()..(r + 1) * geom.plane()], row);
                    }
                }
            }
            Tensor::new(vec![geom.n, geom.c_out, geom.h, geom.w], out)?
        };
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias }, rg))
    }

    /// 2x2 mean pooling over the two trailing axes (even extents required).
    pub fn avg_pool2(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let s = x.shape();
            if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
                return Err(Error::Dimension(format!("avg_pool2 needs [N, C, even, even], got {s:?}")));
            }
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let mut data = vec![0.0; planes * oh * ow];
            for p in 0..planes {
                let src = &x.data()[p * h * w..(p + 1) * h * w];
                let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
                for y in 0..oh {
                    for xx in 0..ow {
                        let i = 2 * y * w + 2 * xx;
                        dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                    }
                }
            }
            Tensor::new(vec![s[0], s[1], oh, ow], data)?
        };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::AvgPool2(a), rg))
    }

    /// `[N, C, H, W] -> [N, C]` by averaging each plane.
    pub fn spatial_mean(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let s = x.shape();
            if s.len() != 4 {
                return Err(Error::Dimension(format!("spatial_mean needs [N, C, H, W], got {s:?}")));
            }
            let plane = s[2] * s[3];
            let data = x
                .data()
                .chunks(plane.max(1))
                .map(|c| c.iter().sum::<f64>() / plane as f64)
                .collect();
            Tensor::new(vec![s[0], s[1]], data)?
        };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::SpatialMean(a), rg))
    }

    /// Accumulates `d loss / d leaf` into every trainable leaf reachable from `loss`.
    ///
    /// Repeated calls add to the existing gradients; see [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            if let (Some(acc), Some(g)) = (node.grad.as_mut(), g) {
                acc.add_assign(&g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, delta: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match grads[v.0].as_mut() {
        Some(g) => g.add_assign(&delta),
        None => grads[v.0] = Some(delta),
    }
}

fn map_like(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient has operand shape")
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let value = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Mul(a, b) => {
            let (x, y) = (value(*a), value(*b));
            if wants(*a) {
                let d = gd.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                accumulate(grads, nodes, *a, map_like(x, d));
            }
            if wants(*b) {
                let d = gd.iter().zip(x.data()).map(|(g, x)| g * x).collect();
                accumulate(grads, nodes, *b, map_like(y, d));
            }
        }
        Op::AddRow(a, row) => {
            accumulate(grads, nodes, *a, g.clone());
            if wants(*row) {
                let r = value(*row);
                let n = r.numel();
                let mut d = vec![0.0; n];
                if n > 0 {
                    for chunk in gd.chunks(n) {
                        for (acc, v) in d.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                }
                accumulate(grads, nodes, *row, map_like(r, d));
            }
        }
        Op::Scale(a, f) => {
            let d = gd.iter().map(|g| g * f).collect();
            accumulate(grads, nodes, *a, map_like(g, d));
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(grads, nodes, *a, map_like(g, d));
        }
        Op::Relu(a) => {
            let x = value(*a).data();
            let d = gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
            accumulate(grads, nodes, *a, map_like(g, d));
        }
        Op::Log(a) => {
            let x = value(*a).data();
            let d = gd
                .iter()
                .zip(x)
                .map(|(g, &x)| if x > LOG_FLOOR { g / x } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, map_like(g, d));
        }
        Op::Exp(a) => {
            let y = node.value.data();
            let d = gd.iter().zip(y).map(|(g, y)| g * y).collect();
            accumulate(grads, nodes, *a, map_like(g, d));
        }
        Op::MatMul(a, b) => {
            let (x, y) = (value(*a), value(*b));
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            if wants(*a) {
                // dA = dC . B^T
                let mut d = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for kk in 0..k {
                        d[i * k + kk] = dot(grow, &y.data()[kk * n..(kk + 1) * n]);
                    }
                }
                accumulate(grads, nodes, *a, map_like(x, d));
            }
            if wants(*b) {
                // dB = A^T . dC
                let mut d = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for kk in 0..k {
                        axpy(x.data()[i * k + kk], grow, &mut d[kk * n..(kk + 1) * n]);
                    }
                }
                accumulate(grads, nodes, *b, map_like(y, d));
            }
        }
        Op::Concat(a, b) => {
            let (x, y) = (value(*a), value(*b));
            let (da, db) = (x.last_dim(), y.last_dim());
            let rows = gd.len().checked_div(da + db).unwrap_or(0);
            let mut ga = Vec::with_capacity(rows * da);
            let mut gb = Vec::with_capacity(rows * db);
            for r in 0..rows {
                let row = &gd[r * (da + db)..(r + 1) * (da + db)];
                ga.extend_from_slice(&row[..da]);
                gb.extend_from_slice(&row[da..]);
            }
            accumulate(grads, nodes, *a, map_like(x, ga));
            accumulate(grads, nodes, *b, map_like(y, gb));
        }
        Op::Reshape(a) => {
            accumulate(grads, nodes, *a, map_like(value(*a), gd.to_vec()));
        }
        Op::RepeatInterleave(a, times) => {
            let d = gd.chunks(*times).map(|c| c.iter().sum()).collect();
            accumulate(grads, nodes, *a, map_like(value(*a), d));
        }
        Op::Softmax { input, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = axis_split(node.value.shape(), *axis);
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let s: f64 = (0..n).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                    for j in 0..n {
                        d[idx(j)] = y[idx(j)] * (gd[idx(j)] - s);
                    }
                }
            }
            accumulate(grads, nodes, *input, map_like(g, d));
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let x = value(*logits);
            let classes = x.shape()[1];
            let scale = gd[0] / labels.len() as f64;
            let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (row, &label) in labels.iter().enumerate() {
                d[row * classes + label] -= scale;
            }
            accumulate(grads, nodes, *logits, map_like(x, d));
        }
        Op::Sum(a) => {
            let x = value(*a);
            accumulate(grads, nodes, *a, Tensor::full(x.shape(), gd[0]));
        }
        Op::Mean(a) => {
            let x = value(*a);
            accumulate(grads, nodes, *a, Tensor::full(x.shape(), gd[0] / x.numel().max(1) as f64));
        }
        Op::Conv2d { input, weight, bias } => {
            let (x, w, b) = (value(*input), value(*weight), value(*bias));
            let geom = ConvGeometry::new(x.shape(), w.shape(), b.shape()).expect("validated in forward");
            let plane = geom.plane();
            let rows = geom.col_rows();
            let mut dw = vec![0.0; w.numel()];
            let mut db = vec![0.0; b.numel()];
            let mut dx = wants(*input).then(|| vec![0.0; x.numel()]);
            let mut cols = vec![0.0; rows * plane];
            let mut dcols = vec![0.0; rows * plane];
            for s in 0..geom.n {
                let gs = &gd[s * geom.sample_out()..(s + 1) * geom.sample_out()];
                if wants(*weight) {
                    geom.im2col(&x.data()[s * geom.sample_in()..(s + 1) * geom.sample_in()], &mut cols);
                }
                for co in 0..geom.c_out {
                    let grow = &gs[co * plane..(co + 1) * plane];
                    db[co] += grow.iter().sum::<f64>();
                    if wants(*weight) {
                        for r in 0..rows {
                            dw[co * rows + r] += dot(grow, &cols[r * plane..(r + 1) * plane]);
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    dcols.fill(0.0);
                    for co in 0..geom.c_out {
                        let grow = &gs[co * plane..(co + 1) * plane];
                        for r in 0..rows {
                            axpy(w.data()[co * rows + r], grow, &mut dcols[r * plane..(r + 1) * plane]);
                        }
                    }
                    geom.col2im_add(&dcols, &mut dx[s * geom.sample_in()..(s + 1) * geom.sample_in()]);
                }
            }
            accumulate(grads, nodes, *weight, map_like(w, dw));
            accumulate(grads, nodes, *bias, map_like(b, db));
            if let Some(dx) = dx {
                accumulate(grads, nodes, *input, map_like(x, dx));
            }
        }
        Op::AvgPool2(a) => {
            let x = value(*a);
            let s = x.shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let mut d = vec![0.0; x.numel()];
            for p in 0..planes {
                let src = &gd[p * oh * ow..(p + 1) * oh * ow];
                let dst = &mut d[p * h * w..(p + 1) * h * w];
                for y in 0..oh {
                    for xx in 0..ow {
                        let v = 0.25 * src[y * ow + xx];
                        let i = 2 * y * w + 2 * xx;
                        dst[i] = v;
                        dst[i + 1] = v;
                        dst[i + w] = v;
                        dst[i + w + 1] = v;
                    }
                }
            }
            accumulate(grads, nodes, *a, map_like(x, d));
        }
        Op::SpatialMean(a) => {
            let x = value(*a);
            let s = x.shape();
            let plane = s[2] * s[3];
            let mut d = Vec::with_capacity(x.numel());
            for &gv in gd {
                d.extend(std::iter::repeat_n(gv / plane as f64, plane));
            }
            accumulate(grads, nodes, *a, map_like(x, d));
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociation.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        total += a[i] * b[i];
    }
    total
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            axpy(a[i * k + kk], &b[kk * n..(kk + 1) * n], orow);
        }
    }
}

struct ConvGeometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], b: &[usize]) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || w[1] != x[1] || w[2] != w[3] || w[2].is_multiple_of(2) {
            return Err(dim_err("conv2d", x, w));
        }
        if b != [w[0]] {
            return Err(dim_err("conv2d bias", w, b));
        }
        Ok(ConvGeometry {
            n: x[0],
            c_in: x[1],
            c_out: w[0],
            h: x[2],
            w: x[3],
            k: w[2],
        })
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn sample_in(&self) -> usize {
        self.c_in * self.plane()
    }

    fn sample_out(&self) -> usize {
        self.c_out * self.plane()
    }

    /// Visits every contiguous run copied by im2col as
    /// `(col_row, out_y, src_offset, x0, len)`, where the run covers output
    /// columns `x0..x0 + len` and starts at `src_offset` in the sample.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let pad = (self.k / 2) as isize;
        let (h, w) = (self.h as isize, self.w as isize);
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y + dy;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        let src = ci as isize * h * w + sy * w + x0 + dx;
                        f(r, y as usize, src as usize, x0 as usize, (x1 - x0) as usize);
                    }
                }
            }
        }
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        let (plane, w) = (self.plane(), self.w);
        self.for_each_run(|r, y, src, x0, len| {
            let dst = r * plane + y * w + x0;
            cols[dst..dst + len].copy_from_slice(&sample[src..src + len]);
        });
    }

    fn col2im_add(&self, cols: &[f64], sample: &mut [f64]) {
        let (plane, w) = (self.plane(), self.w);
        self.for_each_run(|r, y, dst, x0, len| {
            let src = r * plane + y * w + x0;
            for (d, s) in sample[dst..dst + len].iter_mut().zip(&cols[src..src + len]) {
                *d += s;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let tape = Tape::new();
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);

        let row = tape.constant(t(&[1, 2], &[1., 2.]));
        let col = tape.constant(t(&[2, 1], &[3., 4.]));
        let p = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(p).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(tape.value(tape.sigmoid(z)).data(), &[0.5]);

        let x = tape.constant(Tensor::vector(vec![-1., 0., 2.]));
        assert_eq!(tape.value(tape.relu(x)).data(), &[0., 0., 2.]);

        let a = tape.constant(Tensor::vector(vec![2., 4.]));
        let b = tape.constant(Tensor::vector(vec![0.5, 0.5]));
        assert_eq!(tape.value(tape.mul(a, b).unwrap()).data(), &[1., 2.]);

        let c = tape.constant(Tensor::vector(vec![1., 2., 3.]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn sigmoid_stays_open_interval_for_moderate_inputs() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-30.0, -5.0, 5.0, 30.0]));
        let y = tape.sigmoid(x);
        assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn log_is_floored() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, -1.0, 1.0]));
        let y = tape.log(x);
        let v = tape.value(y).clone();
        assert_eq!(v.data()[0], LOG_FLOOR.ln());
        assert_eq!(v.data()[1], LOG_FLOOR.ln());
        assert_eq!(v.data()[2], 0.0);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_examples() {
        let tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1., 2.]));
        let b = tape.constant(Tensor::vector(vec![3.]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 3.]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1., 1.]);

        let empty = tape.constant(Tensor::new(vec![0], vec![]).unwrap());
        let five = tape.constant(Tensor::vector(vec![5.]));
        assert_eq!(tape.value(tape.concat(empty, five).unwrap()).data(), &[5.]);

        let m = tape.constant(Tensor::zeros(&[2, 3]));
        let n = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(m, n).is_err());
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0., 0.]));
        assert_eq!(tape.value(tape.softmax(a, 0).unwrap()).data(), &[0.5, 0.5]);

        // exp(k) / (e + e^2 + e^3), evaluated by hand.
        let b = tape.constant(Tensor::vector(vec![1., 2., 3.]));
        let sb = tape.softmax(b, 0).unwrap();
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_6, 0.665_240_955_774_821_8];
        for (got, want) in tape.value(sb).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }

        let c = tape.constant(Tensor::vector(vec![1000., 0.]));
        let sc = tape.value(tape.softmax(c, 0).unwrap()).clone();
        assert!(sc.is_finite());
        assert!((sc.data()[0] - 1.0).abs() < 1e-12 && sc.data()[1] < 1e-300);

        assert!(tape.softmax(c, 1).is_err());
    }

    #[test]
    fn softmax_over_leading_axis() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[0., 1., 2., 0., 1., 2.]));
        let y = tape.softmax(x, 0).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn cross_entropy_examples() {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[3, 20]));
        let l = tape.cross_entropy(uniform, &[0, 5, 19]).unwrap();
        assert!((tape.value(l).data()[0] - 20f64.ln()).abs() < 1e-12);

        let mut confident = vec![0.0; 20];
        confident[7] = 30.0;
        let c = tape.constant(t(&[1, 20], &confident));
        let l = tape.cross_entropy(c, &[7]).unwrap();
        let v = tape.value(l).data()[0];
        assert!((0.0..1e-11).contains(&v), "{v}");

        let err = tape.cross_entropy(uniform, &[0, 20, 1]).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn backward_simple_cases() {
        let tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2, 3]));
        let s = tape.sum(w);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), Tensor::ones(&[2, 3]));

        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1., 2.]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2., 4.]);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[4., 8.]);
        tape.zero_grad();
        assert_eq!(tape.grad(w).unwrap().data(), &[0., 0.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let tape = Tape::new();
        let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let xv = tape.constant(x.clone());
        let w = tape.constant(Tensor::new(vec![1, 1, 3, 3], k).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.5]));
        let y = tape.conv2d(xv, w, b).unwrap();
        let expect: Vec<f64> = x.data().iter().map(|v| v + 0.5).collect();
        assert_eq!(tape.value(y).data(), expect.as_slice());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (n, ci, co, h, w) = (2, 2, 3, 4, 5);
        let x: Vec<f64> = (0..n * ci * h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..co * ci * 9).map(|i| ((i * 5 % 7) as f64) * 0.1 - 0.3).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![n, ci, h, w], x.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![co, ci, 3, 3], k.clone()).unwrap());
        let bv = tape.constant(Tensor::vector(bias.clone()));
        let y = tape.value(tape.conv2d(xv, kv, bv).unwrap()).clone();
        for s in 0..n {
            for o in 0..co {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = bias[o];
                        for c in 0..ci {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += k[((o * ci + c) * 3 + ky) * 3 + kx]
                                        * x[((s * ci + c) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        assert!((y.at(&[s, o, yy, xx]) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_shapes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        assert_eq!(tape.value(tape.avg_pool2(x).unwrap()).data(), &[2.5]);
        assert_eq!(tape.value(tape.spatial_mean(x).unwrap()).data(), &[2.5]);
        let odd = tape.constant(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(tape.avg_pool2(odd).is_err());
    }

    #[test]
    fn repeat_interleave_duplicates_in_place() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let y = tape.repeat_interleave(x, 2).unwrap();
        assert_eq!(tape.shape(y), vec![2, 4]);
        assert_eq!(tape.value(y).data(), &[1., 1., 2., 2., 3., 3., 4., 4.]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2., 2., 2., 2.]);
    }
}
