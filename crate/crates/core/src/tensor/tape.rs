use std::cell::RefCell;
use std::rc::Rc;

use super::{matmul_strided, transpose_raw, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Matmul(usize, usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Powf(usize, f64),
    LeakyRelu(usize, f64),
    Clamp(usize, f64, f64),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    /// min/max along an axis; `witness[k]` is the flat input index that produced output `k`.
    Select(usize, Vec<usize>),
    Softmax(usize, usize),
    Concat(Vec<usize>, usize),
    Reshape(usize),
    Transpose(usize),
    GatherRows(usize, Vec<usize>),
    SliceCols(usize, usize),
    BroadcastRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed differentiable operations.
///
/// Nodes are appended in execution order; `backward` visits each once in
/// reverse. A tape is built per forward pass and dropped afterwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Result of a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it requires grad and is
    /// reachable from the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for unreachable vars.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
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

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`. Gradients reaching the same node
    /// along several paths are summed.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        debug_assert!(std::ptr::eq(loss.tape, self));
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, slot) in grads.iter_mut().enumerate() {
            if !nodes[id].requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.data.iter_mut().zip(&g.data) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Reduce a broadcast gradient back to the operand's shape.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape == target.shape {
        g
    } else {
        Tensor {
            shape: target.shape.clone(),
            data: vec![g.sum()],
        }
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let req = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if req(*a) {
                accumulate(grads, nodes, *a, unbroadcast(g.clone(), val(*a)));
            }
            if req(*b) {
                accumulate(grads, nodes, *b, unbroadcast(g.clone(), val(*b)));
            }
        }
        Op::Sub(a, b) => {
            if req(*a) {
                accumulate(grads, nodes, *a, unbroadcast(g.clone(), val(*a)));
            }
            if req(*b) {
                accumulate(grads, nodes, *b, unbroadcast(g.map(|v| -v), val(*b)));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if req(*a) {
                let ga = zip_broadcast(g, vb, |g, y| g * y);
                accumulate(grads, nodes, *a, unbroadcast(ga, va));
            }
            if req(*b) {
                let gb = zip_broadcast(g, va, |g, x| g * x);
                accumulate(grads, nodes, *b, unbroadcast(gb, vb));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if req(*a) {
                let ga = zip_broadcast(g, vb, |g, y| g / y);
                accumulate(grads, nodes, *a, unbroadcast(ga, va));
            }
            if req(*b) {
                // d(a/b)/db = -out/b
                let t = zip_broadcast(g, out, |g, o| g * o);
                let gb = zip_broadcast(&t, vb, |t, y| -t / y);
                accumulate(grads, nodes, *b, unbroadcast(gb, vb));
            }
        }
        Op::Scale(a, k) => accumulate(grads, nodes, *a, g.map(|v| v * k)),
        Op::Shift(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::Matmul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
            if req(*a) {
                let ga = matmul_strided(&g.data, [n, 1], &vb.data, [1, n], m, n, k);
                accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: ga });
            }
            if req(*b) {
                let gb = matmul_strided(&va.data, [1, k], &g.data, [n, 1], k, m, n);
                accumulate(grads, nodes, *b, Tensor { shape: vb.shape.clone(), data: gb });
            }
        }
        Op::Sigmoid(a) => {
            let d = zip(g, out, |g, s| g * s * (1.0 - s));
            accumulate(grads, nodes, *a, d);
        }
        Op::Exp(a) => accumulate(grads, nodes, *a, zip(g, out, |g, e| g * e)),
        Op::Log(a) => accumulate(grads, nodes, *a, zip(g, val(*a), |g, x| g / x)),
        Op::Sqrt(a) => {
            // Subgradient 0 at the origin.
            let d = zip(g, out, |g, r| if r == 0.0 { 0.0 } else { g / (2.0 * r) });
            accumulate(grads, nodes, *a, d);
        }
        Op::Powf(a, p) => {
            let d = zip(g, val(*a), |g, x| g * p * x.powf(p - 1.0));
            accumulate(grads, nodes, *a, d);
        }
        Op::LeakyRelu(a, slope) => {
            let d = zip(g, val(*a), |g, x| if x > 0.0 { g } else { g * slope });
            accumulate(grads, nodes, *a, d);
        }
        Op::Clamp(a, lo, hi) => {
            let d = zip(g, val(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g });
            accumulate(grads, nodes, *a, d);
        }
        Op::SumAll(a) => {
            let va = val(*a);
            accumulate(grads, nodes, *a, Tensor::full(va.shape.clone(), g.item()));
        }
        Op::MeanAll(a) => {
            let va = val(*a);
            let n = va.numel() as f64;
            accumulate(grads, nodes, *a, Tensor::full(va.shape.clone(), g.item() / n));
        }
        Op::SumAxis(a, axis) => {
            let va = val(*a);
            let (r, c) = (va.shape[0], va.shape[1]);
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = if *axis == 0 { g.data[j] } else { g.data[i] };
                }
            }
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: d });
        }
        Op::Select(a, witness) => {
            let va = val(*a);
            let mut d = vec![0.0; va.numel()];
            for (k, &w) in witness.iter().enumerate() {
                d[w] += g.data[k];
            }
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: d });
        }
        Op::Softmax(a, axis) => {
            let (r, c) = (out.shape[0], out.shape[1]);
            let mut d = vec![0.0; r * c];
            if *axis == 0 {
                for j in 0..c {
                    let mut dot = 0.0;
                    for i in 0..r {
                        dot += g.data[i * c + j] * out.data[i * c + j];
                    }
                    for i in 0..r {
                        let s = out.data[i * c + j];
                        d[i * c + j] = s * (g.data[i * c + j] - dot);
                    }
                }
            } else {
                for i in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g.data[i * c + j] * out.data[i * c + j];
                    }
                    for j in 0..c {
                        let s = out.data[i * c + j];
                        d[i * c + j] = s * (g.data[i * c + j] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor { shape: out.shape.clone(), data: d });
        }
        Op::Concat(parts, axis) => {
            let oc = out.shape[1];
            let mut offset = 0;
            for &p in parts {
                let vp = val(p);
                let (pr, pc) = (vp.shape[0], vp.shape[1]);
                if req(p) {
                    let mut d = Vec::with_capacity(pr * pc);
                    if *axis == 0 {
                        d.extend_from_slice(&g.data[offset * oc..(offset + pr) * oc]);
                    } else {
                        for i in 0..pr {
                            d.extend_from_slice(&g.data[i * oc + offset..i * oc + offset + pc]);
                        }
                    }
                    accumulate(grads, nodes, p, Tensor { shape: vp.shape.clone(), data: d });
                }
                offset += if *axis == 0 { pr } else { pc };
            }
        }
        Op::Reshape(a) => {
            let va = val(*a);
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: g.data.clone() });
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape[0], out.shape[1]);
            let d = transpose_raw(&g.data, r, c);
            accumulate(grads, nodes, *a, Tensor { shape: val(*a).shape.clone(), data: d });
        }
        Op::GatherRows(a, idx) => {
            let va = val(*a);
            let c = va.cols();
            let mut d = vec![0.0; va.numel()];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    d[i * c + j] += g.data[k * c + j];
                }
            }
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: d });
        }
        Op::SliceCols(a, start) => {
            let va = val(*a);
            let (r, c) = (va.shape[0], va.shape[1]);
            let w = out.shape[1];
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                d[i * c + start..i * c + start + w].copy_from_slice(&g.data[i * w..(i + 1) * w]);
            }
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: d });
        }
        Op::BroadcastRows(a) => {
            let va = val(*a);
            let c = va.shape[1];
            let mut d = vec![0.0; c];
            for row in g.data.chunks(c) {
                for (acc, v) in d.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(grads, nodes, *a, Tensor { shape: va.shape.clone(), data: d });
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Elementwise combine where either side may be a one-element scalar.
fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        zip(a, b, f)
    } else if b.numel() == 1 {
        let y = b.data[0];
        a.map(|x| f(x, y))
    } else {
        let x = a.data[0];
        b.map(|y| f(x, y))
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape == b.shape || a.is_scalar() || b.is_scalar() {
        Ok(())
    } else {
        Err(Error::shape(op, &a.shape, &b.shape))
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() == 2 {
        Ok((t.shape[0], t.shape[1]))
    } else {
        Err(Error::domain(op, format!("expected a matrix, got shape {:?}", t.shape)))
    }
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis < 2 {
        Ok(())
    } else {
        Err(Error::domain(op, format!("axis {axis} out of range for a matrix")))
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn item(self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        broadcast_shape(name, &a, &b)?;
        let mut out = zip_broadcast(&a, &b, f);
        if a.shape != b.shape && a.is_scalar() {
            out.shape = b.shape.clone();
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let v = self.value().map(|x| x * k);
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let v = self.value().map(|x| x + k);
        self.unary(v, Op::Shift(self.id))
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.neg().add_scalar(1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::Matmul(self.id, other.id), rg))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(bad) = x.data.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        let v = x.map(f64::ln);
        Ok(self.unary(v, Op::Log(self.id)))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(bad) = x.data.iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::domain("sqrt", format!("negative input {bad}")));
        }
        let v = x.map(f64::sqrt);
        Ok(self.unary(v, Op::Sqrt(self.id)))
    }

    /// Elementwise power with a constant exponent. Inputs must be non-negative
    /// unless the exponent is a whole number.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        let x = self.value();
        if p.fract() != 0.0 && x.data.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("powf", "negative base with fractional exponent"));
        }
        let v = x.map(|v| v.powf(p));
        Ok(self.unary(v, Op::Powf(self.id, p)))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        if lo > hi {
            return Err(Error::domain("clamp", format!("lo {lo} > hi {hi}")));
        }
        let v = self.value().map(|x| x.clamp(lo, hi));
        Ok(self.unary(v, Op::Clamp(self.id, lo, hi)))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.numel() as f64);
        self.unary(v, Op::MeanAll(self.id))
    }

    /// Sum along `axis` of a matrix, keeping the reduced dimension (extent 1).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        check_axis("sum_axis", axis)?;
        let x = self.value();
        let (r, c) = require_matrix("sum_axis", &x)?;
        let out = if axis == 0 {
            let mut d = vec![0.0; c];
            for row in x.data.chunks(c) {
                for (acc, v) in d.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            Tensor { shape: vec![1, c], data: d }
        } else {
            let d = x.data.chunks(c).map(|row| row.iter().sum()).collect();
            Tensor { shape: vec![r, 1], data: d }
        };
        Ok(self.unary(out, Op::SumAxis(self.id, axis)))
    }

    fn select_axis(self, axis: usize, name: &'static str, better: fn(f64, f64) -> bool) -> Result<Var<'t>> {
        check_axis(name, axis)?;
        let x = self.value();
        let (r, c) = require_matrix(name, &x)?;
        let (outer, inner) = if axis == 0 { (c, r) } else { (r, c) };
        let flat = |o: usize, i: usize| if axis == 0 { i * c + o } else { o * c + i };
        let mut data = Vec::with_capacity(outer);
        let mut witness = Vec::with_capacity(outer);
        for o in 0..outer {
            // First index wins ties.
            let mut best = flat(o, 0);
            for i in 1..inner {
                let k = flat(o, i);
                if better(x.data[k], x.data[best]) {
                    best = k;
                }
            }
            data.push(x.data[best]);
            witness.push(best);
        }
        let shape = if axis == 0 { vec![1, c] } else { vec![r, 1] };
        Ok(self.unary(Tensor { shape, data }, Op::Select(self.id, witness)))
    }

    /// Minimum along `axis`, keeping the reduced dimension. Gradient flows to
    /// the first minimal entry.
    pub fn min_axis(self, axis: usize) -> Result<Var<'t>> {
        self.select_axis(axis, "min_axis", |a, b| a < b)
    }

    /// Maximum along `axis`, keeping the reduced dimension. Gradient flows to
    /// the first maximal entry.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        self.select_axis(axis, "max_axis", |a, b| a > b)
    }

    /// Numerically stable softmax along `axis` of a matrix.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        check_axis("softmax", axis)?;
        let x = self.value();
        let (r, c) = require_matrix("softmax", &x)?;
        let mut d = x.data.clone();
        let (outer, inner) = if axis == 0 { (c, r) } else { (r, c) };
        let flat = |o: usize, i: usize| if axis == 0 { i * c + o } else { o * c + i };
        for o in 0..outer {
            let mut m = f64::NEG_INFINITY;
            for i in 0..inner {
                m = m.max(d[flat(o, i)]);
            }
            let mut z = 0.0;
            for i in 0..inner {
                let e = (d[flat(o, i)] - m).exp();
                d[flat(o, i)] = e;
                z += e;
            }
            for i in 0..inner {
                d[flat(o, i)] /= z;
            }
        }
        let out = Tensor { shape: x.shape.clone(), data: d };
        Ok(self.unary(out, Op::Softmax(self.id, axis)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = self.value().transpose()?;
        Ok(self.unary(out, Op::Transpose(self.id)))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let out = self.value().gather_rows(idx)?;
        Ok(self.unary(out, Op::GatherRows(self.id, idx.to_vec())))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = require_matrix("slice_cols", &x)?;
        if width == 0 || start + width > c {
            return Err(Error::domain(
                "slice_cols",
                format!("columns {start}..{} out of range for {c}", start + width),
            ));
        }
        let mut d = Vec::with_capacity(r * width);
        for row in x.data.chunks(c) {
            d.extend_from_slice(&row[start..start + width]);
        }
        let out = Tensor { shape: vec![r, width], data: d };
        Ok(self.unary(out, Op::SliceCols(self.id, start)))
    }

    /// Repeat a `1 × c` row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = require_matrix("broadcast_rows", &x)?;
        if r != 1 || n == 0 {
            return Err(Error::domain(
                "broadcast_rows",
                format!("need a single row and n > 0, got {:?} and n={n}", x.shape),
            ));
        }
        let mut d = Vec::with_capacity(n * c);
        for _ in 0..n {
            d.extend_from_slice(&x.data);
        }
        let out = Tensor { shape: vec![n, c], data: d };
        Ok(self.unary(out, Op::BroadcastRows(self.id)))
    }

    /// Concatenate matrices along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        check_axis("concat", axis)?;
        let Some(first) = parts.first() else {
            return Err(Error::EmptySet("concat"));
        };
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let (r0, c0) = require_matrix("concat", &values[0])?;
        for v in &values[1..] {
            let (r, c) = require_matrix("concat", v)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(Error::shape("concat", &values[0].shape, &v.shape));
            }
        }
        let out = if axis == 0 {
            let rows: usize = values.iter().map(|v| v.shape[0]).sum();
            let data = values.iter().flat_map(|v| v.data.iter().copied()).collect();
            Tensor { shape: vec![rows, c0], data }
        } else {
            let cols: usize = values.iter().map(|v| v.shape[1]).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for v in &values {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor { shape: vec![r0, cols], data }
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out, Op::Concat(ids, axis), rg))
    }
}

/// Overflow-safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
