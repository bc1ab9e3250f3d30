//! Reverse-mode differentiation over a recorded tape.
//!
//! Every primitive evaluates eagerly, appends its result to the tape and
//! remembers its operands. Nodes are appended in evaluation order, so node
//! indices are already a topological order and the backward sweep is a
//! plain reverse iteration. Gradients accumulate additively into each
//! parent's buffer, which handles fan-out.
//!
//! Elementwise and row-wise primitives view an array of any rank as
//! `rows x cols`, where `cols` is the size of the last axis.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::array::{gemm, Array};
use crate::error::{shape_err, Result, TensorError};

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
    Linear(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    AddN(Vec<Var>),
    MeanAxis(Var, usize),
    SumAll(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    BatchDot(Var, Var),
    BatchWeighted(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Array>,
    op: Op,
    needs_grad: bool,
}

/// Single-threaded record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, Var)>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matrix_dims(a: &Array, what: &str) -> Result<(usize, usize)> {
    match a.shape() {
        [m, n] => Ok((*m, *n)),
        s => shape_err(format!("{what}: expected a matrix, got shape {s:?}")),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current value of a recorded node.
    pub fn value(&self, v: Var) -> Arc<Array> {
        self.nodes.borrow()[v.0].value.clone()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn push(&self, value: Array, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::Numeric(name));
        }
        Ok(self.push_arc(Arc::new(value), op, needs_grad))
    }

    fn push_arc(&self, value: Arc<Array>, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var {
        self.push_arc(Arc::new(value), Op::Leaf, false)
    }

    pub fn constant_arc(&self, value: Arc<Array>) -> Var {
        self.push_arc(value, Op::Leaf, false)
    }

    /// An unnamed leaf whose gradient can be read back with [`Grads::wrt`].
    pub fn variable(&self, value: Array) -> Var {
        self.push_arc(Arc::new(value), Op::Leaf, true)
    }

    /// A named trainable leaf. The value is shared, not copied.
    pub fn param(&self, name: &str, value: Arc<Array>) -> Var {
        let v = self.push_arc(value, Op::Leaf, true);
        self.params.borrow_mut().push((name.to_string(), v));
        v
    }

    fn unary(&self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(x).map(f);
        let ng = self.needs(x);
        self.push(out, op, ng, name)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(Arc<Array>, Arc<Array>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("{what}: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        Ok((av, bv))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = self.same_shape(a, b, name)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Array::new(av.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, op, ng, name)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims(&av, "matmul")?;
        let (k2, n) = matrix_dims(&bv, "matmul")?;
        if k != k2 {
            return shape_err(format!("matmul: inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), k as isize, 1, bv.data(), n as isize, 1, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(Array::new(vec![m, n], out)?, Op::MatMul(a, b), ng, "matmul")
    }

    /// `x W + b` with `x: m x k`, `W: k x n`, `b: n`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = matrix_dims(&xv, "linear")?;
        let (k2, n) = matrix_dims(&wv, "linear")?;
        if k != k2 || bv.len() != n {
            return shape_err(format!(
                "linear: x {:?}, W {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm(m, k, n, xv.data(), k as isize, 1, wv.data(), n as isize, 1, 1.0, &mut out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Array::new(vec![m, n], out)?, Op::Linear(x, w, b), ng, "linear")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    fn row_broadcast(
        &self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.cols();
        if bv.len() != n {
            return shape_err(format!("{name}: row of {} vs cols {n}", bv.len()));
        }
        let bd = bv.data();
        let data = av
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Array::new(av.shape().to_vec(), data)?, op, ng, name)
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast(a, b, Op::AddRow(a, b), "add_row", |x, y| x + y)
    }

    /// Multiplies every row of `a` elementwise by the vector `b`.
    pub fn mul_row(&self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast(a, b, Op::MulRow(a, b), "mul_row", |x, y| x * y)
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), "scale", |v| v * s)
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), "add_scalar", |v| v + s)
    }

    /// Concatenates along the last axis. Leading axes must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat: no operands");
        }
        let vals: Vec<Arc<Array>> = parts.iter().map(|&p| self.value(p)).collect();
        let lead = &vals[0].shape()[..vals[0].shape().len() - 1];
        let rows = vals[0].rows();
        for v in &vals {
            if &v.shape()[..v.shape().len() - 1] != lead {
                return shape_err(format!(
                    "concat: leading shape {:?} vs {:?}",
                    v.shape(),
                    vals[0].shape()
                ));
            }
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Array::new(shape, data)?, Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if start >= end || end > n {
            return shape_err(format!("slice {start}..{end} of last axis {n}"));
        }
        let data = xv
            .data()
            .chunks(n)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let ng = self.needs(x);
        self.push(Array::new(shape, data)?, Op::Slice(x, start), ng, "slice")
    }

    /// Stacks `N` arrays of shape `[r, c]` into `[r, N, c]`.
    pub fn stack(&self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("stack: no operands");
        };
        let fv = self.value(first);
        let (r, c) = matrix_dims(&fv, "stack")?;
        let vals: Vec<Arc<Array>> = parts.iter().map(|&p| self.value(p)).collect();
        if vals.iter().any(|v| v.shape() != fv.shape()) {
            return shape_err("stack: operands differ in shape");
        }
        let n = parts.len();
        let mut data = Vec::with_capacity(r * n * c);
        for row in 0..r {
            for v in &vals {
                data.extend_from_slice(v.row(row));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Array::new(vec![r, n, c], data)?, Op::Stack(parts.to_vec()), ng, "stack")
    }

    /// Elementwise sum of equally shaped arrays.
    pub fn add_n(&self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("add_n: no operands");
        };
        let fv = self.value(first);
        let mut data = fv.data().to_vec();
        for &p in &parts[1..] {
            let pv = self.value(p);
            if pv.shape() != fv.shape() {
                return shape_err("add_n: operands differ in shape");
            }
            for (d, &x) in data.iter_mut().zip(pv.data()) {
                *d += x;
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Array::new(fv.shape().to_vec(), data)?, Op::AddN(parts.to_vec()), ng, "add_n")
    }

    pub fn mean_over_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return shape_err(format!("mean_over_axis: axis {axis} of {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let src = xv.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let mut out_shape: Vec<usize> = shape[..axis]
            .iter()
            .chain(&shape[axis + 1..])
            .copied()
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let ng = self.needs(x);
        self.push(Array::new(out_shape, data)?, Op::MeanAxis(x, axis), ng, "mean_over_axis")
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Array::scalar(s), Op::SumAll(x), ng, "sum")
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), "softplus", softplus)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn ln(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Ln(x), "ln", f64::ln)
    }

    pub fn square(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), "square", |v| v * v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, Op::Clamp(x, lo, hi), "clamp", |v| v.clamp(lo, hi))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        let mut data = Vec::with_capacity(xv.len());
        for r in xv.data().chunks(n) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for &v in r {
                let e = (v - m).exp();
                z += e;
                data.push(e);
            }
            data[start..].iter_mut().for_each(|e| *e /= z);
        }
        let ng = self.needs(x);
        self.push(Array::new(xv.shape().to_vec(), data)?, Op::Softmax(x), ng, "softmax")
    }

    /// Per-batch inner products: `keys: [B, N, H]`, `query: [B, H]` -> `[B, N]`.
    pub fn batch_dot(&self, keys: Var, query: Var) -> Result<Var> {
        let (kv, qv) = (self.value(keys), self.value(query));
        let (b, n, h) = match kv.shape() {
            [b, n, h] => (*b, *n, *h),
            s => return shape_err(format!("batch_dot: keys shape {s:?}")),
        };
        if qv.shape() != [b, h] {
            return shape_err(format!("batch_dot: query {:?} vs keys {:?}", qv.shape(), kv.shape()));
        }
        let (kd, qd) = (kv.data(), qv.data());
        let mut out = vec![0.0; b * n];
        for bi in 0..b {
            let q = &qd[bi * h..(bi + 1) * h];
            for ni in 0..n {
                let k = &kd[(bi * n + ni) * h..(bi * n + ni + 1) * h];
                out[bi * n + ni] = k.iter().zip(q).map(|(x, y)| x * y).sum();
            }
        }
        let ng = self.needs(keys) || self.needs(query);
        self.push(Array::new(vec![b, n], out)?, Op::BatchDot(keys, query), ng, "batch_dot")
    }

    /// Per-batch weighted sums: `weights: [B, N]`, `values: [B, N, D]` -> `[B, D]`.
    pub fn batch_weighted(&self, weights: Var, values: Var) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        let (b, n, d) = match vv.shape() {
            [b, n, d] => (*b, *n, *d),
            s => return shape_err(format!("batch_weighted: values shape {s:?}")),
        };
        if wv.shape() != [b, n] {
            return shape_err(format!(
                "batch_weighted: weights {:?} vs values {:?}",
                wv.shape(),
                vv.shape()
            ));
        }
        let (wd, vd) = (wv.data(), vv.data());
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for ni in 0..n {
                let w = wd[bi * n + ni];
                let v = &vd[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                for (oo, &vv) in o.iter_mut().zip(v) {
                    *oo += w * vv;
                }
            }
        }
        let ng = self.needs(weights) || self.needs(values);
        self.push(
            Array::new(vec![b, d], out)?,
            Op::BatchWeighted(weights, values),
            ng,
            "batch_weighted",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return shape_err(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.needs_grad {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let params = self.params.borrow().clone();
        Ok(Grads {
            grads,
            shapes,
            params,
        })
    }
}

fn buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn acc_map(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    if let Some(b) = buf(nodes, grads, v) {
        for (i, (d, &gi)) in b.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| -> &Array { &nodes[v.0].value };
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) | Op::Linear(a, b, _) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if let Some(ga) = buf(nodes, grads, *a) {
                // dA = dC B^T
                gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, 1.0, ga);
            }
            if let Some(gb) = buf(nodes, grads, *b) {
                // dB = A^T dC
                gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, 1.0, gb);
            }
            if let Op::Linear(_, _, bias) = &node.op {
                if let Some(gbias) = buf(nodes, grads, *bias) {
                    for row in g.chunks(n) {
                        for (d, &x) in gbias.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_map(nodes, grads, *a, g, |_, gi| gi);
            acc_map(nodes, grads, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            acc_map(nodes, grads, *a, g, |_, gi| gi);
            acc_map(nodes, grads, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            acc_map(nodes, grads, *a, g, |i, gi| gi * bd[i]);
            acc_map(nodes, grads, *b, g, |i, gi| gi * ad[i]);
        }
        Op::Div(a, b) => {
            let bd = val(*b).data();
            acc_map(nodes, grads, *a, g, |i, gi| gi / bd[i]);
            acc_map(nodes, grads, *b, g, |i, gi| -gi * out[i] / bd[i]);
        }
        Op::AddRow(a, b) | Op::MulRow(a, b) => {
            let is_mul = matches!(node.op, Op::MulRow(..));
            let ad = val(*a).data();
            let bd = val(*b).data();
            let n = bd.len();
            if is_mul {
                acc_map(nodes, grads, *a, g, |i, gi| gi * bd[i % n]);
            } else {
                acc_map(nodes, grads, *a, g, |_, gi| gi);
            }
            if let Some(gb) = buf(nodes, grads, *b) {
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % n] += if is_mul { gi * ad[i] } else { gi };
                }
            }
        }
        Op::Scale(x, s) => acc_map(nodes, grads, *x, g, |_, gi| gi * s),
        Op::AddScalar(x) => acc_map(nodes, grads, *x, g, |_, gi| gi),
        Op::Concat(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let c = val(p).cols();
                if let Some(gp) = buf(nodes, grads, p) {
                    for (r, grow) in g.chunks(total).enumerate() {
                        for (d, &x) in gp[r * c..(r + 1) * c].iter_mut().zip(&grow[offset..offset + c]) {
                            *d += x;
                        }
                    }
                }
                offset += c;
            }
        }
        Op::Slice(x, start) => {
            let n = val(*x).cols();
            let w = node.value.cols();
            if let Some(gx) = buf(nodes, grads, *x) {
                for (r, grow) in g.chunks(w).enumerate() {
                    for (d, &v) in gx[r * n + start..r * n + start + w].iter_mut().zip(grow) {
                        *d += v;
                    }
                }
            }
        }
        Op::Stack(parts) => {
            let [r, n, c] = node.value.shape() else { unreachable!() };
            let (r, n, c) = (*r, *n, *c);
            for (i, &p) in parts.iter().enumerate() {
                if let Some(gp) = buf(nodes, grads, p) {
                    for row in 0..r {
                        let src = &g[(row * n + i) * c..(row * n + i + 1) * c];
                        for (d, &v) in gp[row * c..(row + 1) * c].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::AddN(parts) => {
            for &p in parts {
                acc_map(nodes, grads, p, g, |_, gi| gi);
            }
        }
        Op::MeanAxis(x, axis) => {
            let shape = val(*x).shape();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let inv = 1.0 / len as f64;
            if let Some(gx) = buf(nodes, grads, *x) {
                for (i, d) in gx.iter_mut().enumerate() {
                    let o = i / (len * inner);
                    *d += g[o * inner + i % inner] * inv;
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = buf(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Relu(x) => {
            let xd = val(*x).data();
            acc_map(nodes, grads, *x, g, |i, gi| if xd[i] > 0.0 { gi } else { 0.0 });
        }
        Op::Tanh(x) => acc_map(nodes, grads, *x, g, |i, gi| gi * (1.0 - out[i] * out[i])),
        Op::Sigmoid(x) => acc_map(nodes, grads, *x, g, |i, gi| gi * out[i] * (1.0 - out[i])),
        Op::Softplus(x) => {
            let xd = val(*x).data();
            acc_map(nodes, grads, *x, g, |i, gi| gi * sigmoid(xd[i]));
        }
        Op::Exp(x) => acc_map(nodes, grads, *x, g, |i, gi| gi * out[i]),
        Op::Ln(x) => {
            let xd = val(*x).data();
            acc_map(nodes, grads, *x, g, |i, gi| gi / xd[i]);
        }
        Op::Square(x) => {
            let xd = val(*x).data();
            acc_map(nodes, grads, *x, g, |i, gi| 2.0 * gi * xd[i]);
        }
        Op::Clamp(x, lo, hi) => {
            let xd = val(*x).data();
            acc_map(nodes, grads, *x, g, |i, gi| {
                if xd[i] > *lo && xd[i] < *hi {
                    gi
                } else {
                    0.0
                }
            });
        }
        Op::Softmax(x) => {
            let n = node.value.cols();
            if let Some(gx) = buf(nodes, grads, *x) {
                for ((grow, yrow), dst) in g.chunks(n).zip(out.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, &gi), &yi) in dst.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::BatchDot(keys, query) => {
            let [b, n, h] = val(*keys).shape() else { unreachable!() };
            let (b, n, h) = (*b, *n, *h);
            let kd = val(*keys).data();
            let qd = val(*query).data();
            if let Some(gk) = buf(nodes, grads, *keys) {
                for bi in 0..b {
                    let q = &qd[bi * h..(bi + 1) * h];
                    for ni in 0..n {
                        let w = g[bi * n + ni];
                        let dst = &mut gk[(bi * n + ni) * h..(bi * n + ni + 1) * h];
                        for (d, &qq) in dst.iter_mut().zip(q) {
                            *d += w * qq;
                        }
                    }
                }
            }
            if let Some(gq) = buf(nodes, grads, *query) {
                for bi in 0..b {
                    let dst = &mut gq[bi * h..(bi + 1) * h];
                    for ni in 0..n {
                        let w = g[bi * n + ni];
                        let k = &kd[(bi * n + ni) * h..(bi * n + ni + 1) * h];
                        for (d, &kk) in dst.iter_mut().zip(k) {
                            *d += w * kk;
                        }
                    }
                }
            }
        }
        Op::BatchWeighted(weights, values) => {
            let [b, n, d] = val(*values).shape() else { unreachable!() };
            let (b, n, d) = (*b, *n, *d);
            let wd = val(*weights).data();
            let vd = val(*values).data();
            if let Some(gw) = buf(nodes, grads, *weights) {
                for bi in 0..b {
                    let go = &g[bi * d..(bi + 1) * d];
                    for ni in 0..n {
                        let v = &vd[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                        gw[bi * n + ni] += go.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gv) = buf(nodes, grads, *values) {
                for bi in 0..b {
                    let go = &g[bi * d..(bi + 1) * d];
                    for ni in 0..n {
                        let w = wd[bi * n + ni];
                        let dst = &mut gv[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                        for (dd, &x) in dst.iter_mut().zip(go) {
                            *dd += w * x;
                        }
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// contribute.
    pub fn wrt(&self, v: Var) -> Array {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Array::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Array::zeros(&shape),
        }
    }

    /// Gradients of every parameter registered on the tape, by name.
    /// Parameters bound more than once have their gradients summed.
    pub fn named(&self) -> Gradients {
        let mut out = Gradients::default();
        for (name, v) in &self.params {
            out.accumulate(name, &self.wrt(*v));
        }
        out
    }
}

/// Named gradient arrays, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Array)>,
    index: HashMap<String, usize>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Array> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: &str, g: Array) {
        match self.index.get(name) {
            Some(&i) => self.entries[i].1 = g,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), g));
            }
        }
    }

    /// Adds `g` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, g: &Array) {
        match self.index.get(name) {
            Some(&i) => {
                for (d, &x) in self.entries[i].1.data_mut().iter_mut().zip(g.data()) {
                    *d += x;
                }
            }
            None => self.insert(name, g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (name, g) in other.iter() {
            self.accumulate(name, g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, g) in &mut self.entries {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.all_finite())
    }
}
