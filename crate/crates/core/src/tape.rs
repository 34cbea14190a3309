//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] computes its value eagerly and appends a node
//! to the owning [`Tape`]. [`Tape::backward`] walks the nodes in reverse and
//! applies each node's vector-Jacobian product. A fresh tape is created per
//! training step; nothing is retained between steps.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{contract, Error, Result};
use crate::tensor::{gemm, Tensor};

/// Fixed sparsity pattern for [`Var::sparse_aggregate`].
///
/// Entry `k` routes input row `input[k]` into output row `output[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePattern {
    out_rows: usize,
    in_rows: usize,
    output: Vec<usize>,
    input: Vec<usize>,
}

impl SparsePattern {
    pub fn new(out_rows: usize, in_rows: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut output = Vec::with_capacity(entries.len());
        let mut input = Vec::with_capacity(entries.len());
        for &(o, i) in entries {
            if o >= out_rows || i >= in_rows {
                return contract(format!(
                    "sparse entry ({o}, {i}) outside {out_rows}x{in_rows}"
                ));
            }
            output.push(o);
            input.push(i);
        }
        Ok(Self {
            out_rows,
            in_rows,
            output,
            input,
        })
    }

    pub fn nnz(&self) -> usize {
        self.output.len()
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.output.iter().copied().zip(self.input.iter().copied())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    ScalarMul(usize, f64),
    AddScalar(usize),
    AddBias(usize, usize),
    ScaleRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    RowSum(usize),
    Sum(usize),
    Mean(usize),
    InnerProduct(usize, usize),
    Log(usize),
    Exp(usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Recip(usize),
    Clamp(usize, f64, f64),
    Transpose(usize),
    SliceRows(usize, usize),
    GatherRows(usize, Rc<[usize]>),
    Pick(usize, Rc<[usize]>),
    SparseAggregate {
        weights: usize,
        x: usize,
        pattern: Rc<SparsePattern>,
    },
    Softmax(usize, usize),
    LogSoftmax(usize),
    SegmentSoftmax(usize, Rc<[usize]>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

/// Record of the computation performed in one step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            name: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Anonymous input that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Named parameter leaf. Frozen parameters are recorded without a gradient.
    pub fn param(&self, name: &str, value: Tensor, trainable: bool) -> Var<'_> {
        let v = self.push(value, Op::Leaf, trainable);
        self.nodes.borrow_mut()[v.id].name = Some(name.to_string());
        v
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return contract("backward: loss belongs to another tape");
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return contract(format!(
                "backward expects a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut out = Vec::with_capacity(grads.len());
        let mut named = BTreeMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            let node = &nodes[id];
            let t = g.map(|data| Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"));
            if let (Some(name), Some(_)) = (&node.name, &t) {
                if node.requires_grad {
                    named.insert(name.clone(), id);
                }
            }
            out.push(t);
        }
        Ok(Gradients { grads: out, named })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    named: BTreeMap<String, usize>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name).and_then(|&id| self.grads[id].as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.named.keys().map(String::as_str)
    }

    /// Gradient per trainable named parameter.
    pub fn into_named(mut self) -> BTreeMap<String, Tensor> {
        let named = std::mem::take(&mut self.named);
        named
            .into_iter()
            .filter_map(|(name, id)| self.grads[id].take().map(|g| (name, g)))
            .collect()
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn ensure<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'a mut Vec<f64> {
    let n = nodes[id].value.len();
    grads[id].get_or_insert_with(|| vec![0.0; n])
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if rg(a) {
                let ga = ensure(grads, nodes, a);
                // dA = G * B^T
                gemm(m, n, k, g, false, bv.data(), true, 1.0, ga);
            }
            if rg(b) {
                let gb = ensure(grads, nodes, b);
                // dB = A^T * G
                gemm(k, m, n, av.data(), true, g, false, 1.0, gb);
            }
        }
        &Op::Add(a, b) => {
            add_into(grads, nodes, a, g);
            add_into(grads, nodes, b, g);
        }
        &Op::Sub(a, b) => {
            add_into(grads, nodes, a, g);
            if rg(b) {
                let gb = ensure(grads, nodes, b);
                gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        &Op::Hadamard(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            if rg(a) {
                let ga = ensure(grads, nodes, a);
                for i in 0..g.len() {
                    ga[i] += g[i] * bv.data()[i];
                }
            }
            if rg(b) {
                let gb = ensure(grads, nodes, b);
                for i in 0..g.len() {
                    gb[i] += g[i] * av.data()[i];
                }
            }
        }
        &Op::ScalarMul(a, c) => {
            let ga = ensure(grads, nodes, a);
            ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
        }
        &Op::AddScalar(a) => add_into(grads, nodes, a, g),
        &Op::AddBias(x, b) => {
            add_into(grads, nodes, x, g);
            if rg(b) {
                let cols = nodes[b].value.len();
                let gb = ensure(grads, nodes, b);
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
            }
        }
        &Op::ScaleRows(x, v) => {
            let (xv, vv) = (&nodes[x].value, &nodes[v].value);
            let cols = xv.cols();
            if rg(x) {
                let gx = ensure(grads, nodes, x);
                for (r, s) in vv.data().iter().enumerate() {
                    for c in 0..cols {
                        gx[r * cols + c] += g[r * cols + c] * s;
                    }
                }
            }
            if rg(v) {
                let gv = ensure(grads, nodes, v);
                for r in 0..gv.len() {
                    let row = r * cols..(r + 1) * cols;
                    gv[r] += g[row.clone()]
                        .iter()
                        .zip(&xv.data()[row])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                if rg(p) {
                    let gp = ensure(grads, nodes, p);
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + offset + c];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                add_into(grads, nodes, p, &g[offset..offset + n]);
                offset += n;
            }
        }
        &Op::RowSum(a) => {
            let cols = nodes[a].value.cols();
            let ga = ensure(grads, nodes, a);
            for (r, gr) in g.iter().enumerate() {
                ga[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x += gr);
            }
        }
        &Op::Sum(a) => {
            let ga = ensure(grads, nodes, a);
            ga.iter_mut().for_each(|x| *x += g[0]);
        }
        &Op::Mean(a) => {
            let n = nodes[a].value.len() as f64;
            let ga = ensure(grads, nodes, a);
            ga.iter_mut().for_each(|x| *x += g[0] / n);
        }
        &Op::InnerProduct(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            if rg(a) {
                let ga = ensure(grads, nodes, a);
                ga.iter_mut().zip(bv.data()).for_each(|(x, y)| *x += g[0] * y);
            }
            if rg(b) {
                let gb = ensure(grads, nodes, b);
                gb.iter_mut().zip(av.data()).for_each(|(x, y)| *x += g[0] * y);
            }
        }
        &Op::Log(a) => {
            let xv = Rc::clone(&nodes[a].value);
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                ga[i] += g[i] / xv.data()[i];
            }
        }
        &Op::Exp(a) => {
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                ga[i] += g[i] * out.data()[i];
            }
        }
        &Op::Sigmoid(a) => {
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                let y = out.data()[i];
                ga[i] += g[i] * y * (1.0 - y);
            }
        }
        &Op::Tanh(a) => {
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                let y = out.data()[i];
                ga[i] += g[i] * (1.0 - y * y);
            }
        }
        &Op::LeakyRelu(a, slope) => {
            let xv = Rc::clone(&nodes[a].value);
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                ga[i] += if xv.data()[i] > 0.0 { g[i] } else { slope * g[i] };
            }
        }
        &Op::Recip(a) => {
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                let y = out.data()[i];
                ga[i] -= g[i] * y * y;
            }
        }
        &Op::Clamp(a, lo, hi) => {
            let xv = Rc::clone(&nodes[a].value);
            let ga = ensure(grads, nodes, a);
            for i in 0..g.len() {
                let x = xv.data()[i];
                if x > lo && x < hi {
                    ga[i] += g[i];
                }
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = (out.rows(), out.cols());
            let ga = ensure(grads, nodes, a);
            // out is r x c, input is c x r
            for i in 0..r {
                for j in 0..c {
                    ga[j * r + i] += g[i * c + j];
                }
            }
        }
        &Op::SliceRows(a, start) => {
            let cols = out.cols();
            let ga = ensure(grads, nodes, a);
            let base = start * cols;
            ga[base..base + g.len()]
                .iter_mut()
                .zip(g)
                .for_each(|(x, y)| *x += y);
        }
        Op::GatherRows(a, idx) => {
            let cols = out.cols();
            let ga = ensure(grads, nodes, *a);
            for (r, &src) in idx.iter().enumerate() {
                for c in 0..cols {
                    ga[src * cols + c] += g[r * cols + c];
                }
            }
        }
        Op::Pick(a, idx) => {
            let cols = nodes[*a].value.cols();
            let ga = ensure(grads, nodes, *a);
            for (r, &c) in idx.iter().enumerate() {
                ga[r * cols + c] += g[r];
            }
        }
        Op::SparseAggregate { weights, x, pattern } => {
            let (w, x) = (*weights, *x);
            let (wv, xv) = (Rc::clone(&nodes[w].value), Rc::clone(&nodes[x].value));
            let cols = xv.cols();
            if rg(x) {
                let gx = ensure(grads, nodes, x);
                for (k, (o, i)) in pattern.entries().enumerate() {
                    let s = wv.data()[k];
                    let go = &g[o * cols..(o + 1) * cols];
                    gx[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(go)
                        .for_each(|(a, b)| *a += s * b);
                }
            }
            if rg(w) {
                let gw = ensure(grads, nodes, w);
                for (k, (o, i)) in pattern.entries().enumerate() {
                    gw[k] += g[o * cols..(o + 1) * cols]
                        .iter()
                        .zip(&xv.data()[i * cols..(i + 1) * cols])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        &Op::Softmax(a, axis) => {
            let (r, c) = (out.rows(), out.cols());
            let y = out.data();
            let ga = ensure(grads, nodes, a);
            let (outer, inner, stride_o, stride_i) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
            for o in 0..outer {
                let dot: f64 = (0..inner)
                    .map(|i| {
                        let k = o * stride_o + i * stride_i;
                        g[k] * y[k]
                    })
                    .sum();
                for i in 0..inner {
                    let k = o * stride_o + i * stride_i;
                    ga[k] += y[k] * (g[k] - dot);
                }
            }
        }
        &Op::LogSoftmax(a) => {
            let c = out.cols();
            let y = out.data();
            let ga = ensure(grads, nodes, a);
            for (r, gr) in g.chunks(c).enumerate() {
                let total: f64 = gr.iter().sum();
                for j in 0..c {
                    ga[r * c + j] += gr[j] - y[r * c + j].exp() * total;
                }
            }
        }
        Op::SegmentSoftmax(a, offsets) => {
            let y = out.data();
            let ga = ensure(grads, nodes, *a);
            for w in offsets.windows(2) {
                let (s, e) = (w[0], w[1]);
                let dot: f64 = (s..e).map(|k| g[k] * y[k]).sum();
                for k in s..e {
                    ga[k] += y[k] * (g[k] - dot);
                }
            }
        }
    }
}

fn softmax_slice(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    xs.iter_mut().for_each(|x| *x /= s);
}

fn check_nan(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|x| x.is_nan()) {
        return Err(Error::Domain {
            op,
            detail: "NaN input".into(),
        });
    }
    Ok(())
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

    /// Borrow the value without cloning the handle.
    pub fn with_value<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn rows(self) -> usize {
        self.with_value(Tensor::rows)
    }

    pub fn cols(self) -> usize {
        self.with_value(Tensor::cols)
    }

    pub fn item(self) -> Result<f64> {
        self.with_value(Tensor::item)
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(self, other: Var<'t>, op: &'static str) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return contract(format!("{op}: operands recorded on different tapes"));
        }
        Ok(())
    }

    fn emit(self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    fn map(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.emit(t, op, &[self.id])
    }

    fn zip(self, other: Var<'t>, op_name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(other, op_name)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: op_name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.emit(Tensor::new(a.shape().to_vec(), data)?, op, &[self.id, other.id]))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "matmul")?;
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.require_rank2("matmul")?;
        let (k2, n) = b.require_rank2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        Ok(self.emit(Tensor::matrix(m, n, c)?, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn hadamard(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "hadamard", Op::Hadamard(self.id, other.id), |a, b| a * b)
    }

    pub fn scalar_mul(self, c: f64) -> Var<'t> {
        self.map(Op::ScalarMul(self.id, c), |x| c * x)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.map(Op::AddScalar(self.id), |x| x + c)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(self) -> Var<'t> {
        self.scalar_mul(-1.0).add_scalar(1.0)
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias, "add_bias")?;
        let (x, b) = (self.value(), bias.value());
        let (_, c) = x.require_rank2("add_bias")?;
        if b.len() != c {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(b.data()).for_each(|(v, s)| *v += s);
        }
        Ok(self.emit(Tensor::new(x.shape().to_vec(), data)?, Op::AddBias(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Multiplies row `i` of an `r x c` matrix by `scale[i]` (`scale` is `r x 1`).
    pub fn scale_rows(self, scale: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(scale, "scale_rows")?;
        let (x, s) = (self.value(), scale.value());
        let (r, c) = x.require_rank2("scale_rows")?;
        if s.len() != r {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: x.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for (row, f) in data.chunks_mut(c.max(1)).zip(s.data()) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.emit(Tensor::new(x.shape().to_vec(), data)?, Op::ScaleRows(self.id, scale.id), &[self.id, scale.id]))
    }

    pub fn row_sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.require_rank2("row_sum")?;
        let data = (0..r).map(|i| x.data()[i * c..(i + 1) * c].iter().sum()).collect();
        Ok(self.emit(Tensor::matrix(r, 1, data)?, Op::RowSum(self.id), &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.with_value(|t| t.data().iter().sum());
        self.emit(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let (s, n) = self.with_value(|t| (t.data().iter().sum::<f64>(), t.len()));
        if n == 0 {
            return contract("mean of an empty tensor");
        }
        Ok(self.emit(Tensor::scalar(s / n as f64), Op::Mean(self.id), &[self.id]))
    }

    pub fn inner_product(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "inner_product")?;
        let (a, b) = (self.value(), other.value());
        if a.len() != b.len() {
            return Err(Error::Shape {
                op: "inner_product",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let s = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        Ok(self.emit(Tensor::scalar(s), Op::InnerProduct(self.id, other.id), &[self.id, other.id]))
    }

    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.with_value(|t| t.data().iter().copied().find(|x| !(*x > 0.0))) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        Ok(self.map(Op::Log(self.id), f64::ln))
    }

    pub fn exp(self) -> Var<'t> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.map(Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.map(Op::LeakyRelu(self.id, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn recip(self) -> Result<Var<'t>> {
        if self.with_value(|t| t.data().contains(&0.0)) {
            return Err(Error::Domain {
                op: "recip",
                detail: "division by zero".into(),
            });
        }
        Ok(self.map(Op::Recip(self.id), f64::recip))
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.map(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let t = self.value().transpose()?;
        Ok(self.emit(t, Op::Transpose(self.id), &[self.id]))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.require_rank2("slice_rows")?;
        if start + len > r {
            return contract(format!("slice_rows {start}..{} out of {r} rows", start + len));
        }
        let data = x.data()[start * c..(start + len) * c].to_vec();
        Ok(self.emit(Tensor::matrix(len, c, data)?, Op::SliceRows(self.id, start), &[self.id]))
    }

    /// Row `i` of the result is row `idx[i]` of `self`.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.require_rank2("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return contract(format!("gather_rows index {i} out of {r} rows"));
            }
            data.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        Ok(self.emit(
            Tensor::matrix(idx.len(), c, data)?,
            Op::GatherRows(self.id, idx.into()),
            &[self.id],
        ))
    }

    /// Column vector with element `i` equal to `self[i, idx[i]]`.
    pub fn pick(self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.require_rank2("pick")?;
        if idx.len() != r {
            return Err(Error::Shape {
                op: "pick",
                lhs: x.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(r);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return contract(format!("pick column {j} out of {c}"));
            }
            data.push(x.data()[i * c + j]);
        }
        Ok(self.emit(Tensor::column(data), Op::Pick(self.id, idx.into()), &[self.id]))
    }

    /// `out[o] = sum over entries (o, i, k) of weights[k] * self[i]`.
    pub fn sparse_aggregate(self, weights: Var<'t>, pattern: &Rc<SparsePattern>) -> Result<Var<'t>> {
        self.same_tape(weights, "sparse_aggregate")?;
        let (x, w) = (self.value(), weights.value());
        let (r, c) = x.require_rank2("sparse_aggregate")?;
        if r != pattern.in_rows || w.len() != pattern.nnz() {
            return Err(Error::Shape {
                op: "sparse_aggregate",
                lhs: x.shape().to_vec(),
                rhs: vec![pattern.in_rows, pattern.nnz(), w.len()],
            });
        }
        let mut data = vec![0.0; pattern.out_rows * c];
        for (k, (o, i)) in pattern.entries().enumerate() {
            let s = w.data()[k];
            let src = &x.data()[i * c..(i + 1) * c];
            data[o * c..(o + 1) * c]
                .iter_mut()
                .zip(src)
                .for_each(|(d, v)| *d += s * v);
        }
        Ok(self.emit(
            Tensor::matrix(pattern.out_rows, c, data)?,
            Op::SparseAggregate {
                weights: weights.id,
                x: self.id,
                pattern: Rc::clone(pattern),
            },
            &[self.id, weights.id],
        ))
    }

    /// Concatenate along the last dimension.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = parts.first() else {
            return contract("concat_cols of zero tensors");
        };
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(*p, "concat_cols")?;
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.emit(Tensor::matrix(rows, total, data)?, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Stack along the first dimension.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = parts.first() else {
            return contract("concat_rows of zero tensors");
        };
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(*p, "concat_rows")?;
            if v.shape().len() != 2 || v.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.emit(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Normalized exponential along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_nan("softmax", &x)?;
        let (r, c) = match x.shape().len() {
            1 => (1, x.len()),
            2 => (x.shape()[0], x.shape()[1]),
            _ => return contract(format!("softmax on rank-{} tensor", x.shape().len())),
        };
        if axis > 1 {
            return contract(format!("softmax axis {axis} on a matrix"));
        }
        let mut data = x.data().to_vec();
        if axis == 1 {
            data.chunks_mut(c.max(1)).for_each(softmax_slice);
        } else {
            let mut col = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    col[i] = data[i * c + j];
                }
                softmax_slice(&mut col);
                for i in 0..r {
                    data[i * c + j] = col[i];
                }
            }
        }
        Ok(self.emit(Tensor::new(x.shape().to_vec(), data)?, Op::Softmax(self.id, axis), &[self.id]))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let x = self.value();
        check_nan("log_softmax", &x)?;
        let (_, c) = x.require_rank2("log_softmax")?;
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(self.emit(Tensor::new(x.shape().to_vec(), data)?, Op::LogSoftmax(self.id), &[self.id]))
    }

    /// Softmax over contiguous segments `offsets[s]..offsets[s + 1]` of a flat vector.
    pub fn segment_softmax(self, offsets: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        check_nan("segment_softmax", &x)?;
        if offsets.first() != Some(&0) || offsets.last() != Some(&x.len()) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return contract(format!(
                "segment offsets must run from 0 to {} in nondecreasing order",
                x.len()
            ));
        }
        let mut data = x.data().to_vec();
        for w in offsets.windows(2) {
            softmax_slice(&mut data[w[0]..w[1]]);
        }
        Ok(self.emit(
            Tensor::new(x.shape().to_vec(), data)?,
            Op::SegmentSoftmax(self.id, offsets.into()),
            &[self.id],
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = t(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let i = tape.constant(Tensor::identity(3));
        let av = tape.constant(a.clone());
        assert_eq!(*i.matmul(av).unwrap().value(), a);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let err = a.matmul(a).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    }

    #[test]
    fn leaky_relu_piecewise() {
        let tape = Tape::new();
        let x = tape.constant(t(1, 2, &[-1.0, 2.0]));
        assert_eq!(x.leaky_relu(0.01).value().data(), &[-0.01, 2.0]);
    }

    #[test]
    fn inner_product_hand() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1., 2., 3.]));
        let b = tape.constant(Tensor::row(vec![4., 5., 6.]));
        assert_eq!(a.inner_product(b).unwrap().item().unwrap(), 32.0);
    }

    #[test]
    fn log_domain_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::row(vec![0.0; 3]));
        for v in z.softmax(1).unwrap().value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = tape.constant(Tensor::row(vec![1f64.ln(), 3f64.ln()]));
        let s = z.softmax(1).unwrap().value();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let z = tape.constant(Tensor::row(vec![f64::NAN, 1.0]));
        assert!(matches!(z.softmax(1), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_axis0_columns_normalized() {
        let tape = Tape::new();
        let z = tape.constant(t(2, 3, &[1., 2., 3., 0., -1., 5.]));
        let s = z.softmax(0).unwrap().value();
        for j in 0..3 {
            assert!((s.get(0, j) + s.get(1, j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_quadratic() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let loss = x.inner_product(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.0; 4]));
        let loss = x.sigmoid().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.0; 4]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let tape = Tape::new();
        let w = tape.param("w", Tensor::row(vec![1.0, 2.0]), false);
        let v = tape.param("v", Tensor::row(vec![3.0, 4.0]), true);
        let loss = w.inner_product(v).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.by_name("w").is_none());
        assert_eq!(g.by_name("v").unwrap().data(), &[1.0, 2.0]);
        let named = g.into_named();
        assert_eq!(named.len(), 1);
    }

    #[test]
    fn sparse_aggregate_forward() {
        let tape = Tape::new();
        let x = tape.constant(t(2, 2, &[1., 2., 3., 4.]));
        let p = Rc::new(SparsePattern::new(1, 2, &[(0, 0), (0, 1)]).unwrap());
        let w = tape.constant(Tensor::column(vec![0.5, 2.0]));
        assert_eq!(x.sparse_aggregate(w, &p).unwrap().value().data(), &[6.5, 9.0]);
    }
}
