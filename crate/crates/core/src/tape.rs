//! Tape-based reverse-mode differentiation over [`Tensor`]-shaped values.
//!
//! Every forward operation appends a node to the [`Tape`]; [`Tape::backward`]
//! replays the nodes in reverse order, so each recorded operation is visited
//! exactly once. Nodes are only ever appended, which keeps the tape in
//! topological order by construction.
//!
//! Every operation checks its output for NaN/Inf and reports
//! [`Error::NonFinite`] instead of letting it propagate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a[m,k] · b[k,n]`; `b` may be a length-`k` vector (`n == 1`).
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `a[m,k]ᵀ · v[m]`.
    MatVecT { a: Var, v: Var, m: usize, k: usize },
    Add(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Var, Var),
    Row { table: Var, index: usize },
    Sum(Var),
    Scale(Var, f64),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Deliberately wrong backward rules, used to show the gradient checker bites.
#[allow(dead_code)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Fault {
    /// Sigmoid backward uses `y` instead of `y (1 - y)`.
    SigmoidDerivative,
}

/// Ordered record of executed operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    fault: Option<Fault>,
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a plain slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Log-softmax of a plain slice via log-sum-exp.
pub fn log_softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(x.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
    x.iter().map(|&v| v - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[allow(dead_code)]
    pub(crate) fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        check_finite(op_name, &value)?;
        if self.backward_done {
            return Err(contract("tape already differentiated; start a new tape"));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a differentiable leaf (a parameter).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push("leaf", t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
            .expect("tensors are finite by construction")
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push("constant", t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
            .expect("tensors are finite by construction")
    }

    /// Records a constant vector from raw values.
    pub fn constant_vector(&mut self, data: Vec<f64>) -> Result<Var> {
        if data.is_empty() {
            return Err(shape_err("constant", "empty vector"));
        }
        self.push("constant", vec![data.len()], data, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(shape_err(op, format!("expected a vector, got {s:?}"))),
        }
    }

    /// Matrix product. `b` may be a matrix `k×n` or a vector of length `k`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = match self.shape(a) {
            [m, k] => (*m, *k),
            s => return Err(shape_err("matmul", format!("lhs must be a matrix, got {s:?}"))),
        };
        let (kb, n, out_shape) = match self.shape(b) {
            [kb] => (*kb, 1, vec![m]),
            [kb, n] => (*kb, *n, vec![m, *n]),
            s => return Err(shape_err("matmul", format!("rhs must be a matrix or vector, got {s:?}"))),
        };
        if kb != k {
            return Err(shape_err("matmul", format!("inner dimensions {k} and {kb} differ")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (o, arow) in out.iter_mut().zip(av.chunks_exact(k)) {
                *o = arow.iter().zip(bv).map(|(x, y)| x * y).sum();
            }
        } else {
            Self::matmul_into(av, bv, &mut out, m, k, n);
        }
        let rg = self.rg(&[a, b]);
        self.push("matmul", out_shape, out, Op::MatMul { a, b, m, k, n }, rg)
    }

    fn matmul_into(av: &[f64], bv: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
    }

    /// `aᵀ · v` for a matrix `a` of shape `m×k` and a vector `v` of length `m`.
    pub fn matvec_t(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, k) = match self.shape(a) {
            [m, k] => (*m, *k),
            s => return Err(shape_err("matvec_t", format!("lhs must be a matrix, got {s:?}"))),
        };
        let vm = self.vector_len("matvec_t", v)?;
        if vm != m {
            return Err(shape_err("matvec_t", format!("matrix has {m} rows, vector has {vm}")));
        }
        let (av, vv) = (self.value(a), self.value(v));
        let mut out = vec![0.0; k];
        for (i, &vi) in vv.iter().enumerate() {
            for (o, &aij) in out.iter_mut().zip(&av[i * k..(i + 1) * k]) {
                *o += aij * vi;
            }
        }
        let rg = self.rg(&[a, v]);
        self.push("matvec_t", vec![k], out, Op::MatVecT { a, v, m, k }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        self.push("hadamard", self.shape(a).to_vec(), out, Op::Hadamard(a, b), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| sigmoid_scalar(x)).collect();
        let rg = self.rg(&[a]);
        self.push("sigmoid", self.shape(a).to_vec(), out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| libm::tanh(x)).collect();
        let rg = self.rg(&[a]);
        self.push("tanh", self.shape(a).to_vec(), out, Op::Tanh(a), rg)
    }

    /// Softmax of a vector, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.vector_len("softmax", a)?;
        let out = softmax_values(self.value(a));
        let rg = self.rg(&[a]);
        self.push("softmax", vec![n], out, Op::Softmax(a), rg)
    }

    /// Concatenates two vectors, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.vector_len("concat", a)?;
        let q = self.vector_len("concat", b)?;
        let mut out = Vec::with_capacity(p + q);
        out.extend_from_slice(self.value(a));
        out.extend_from_slice(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push("concat", vec![p + q], out, Op::Concat(a, b), rg)
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let (r, c) = match self.shape(table) {
            [r, c] => (*r, *c),
            s => return Err(shape_err("row", format!("expected a matrix, got {s:?}"))),
        };
        if index >= r {
            return Err(contract(format!("row {index} out of range for {r} rows")));
        }
        let out = self.value(table)[index * c..(index + 1) * c].to_vec();
        let rg = self.rg(&[table]);
        self.push("row", vec![c], out, Op::Row { table, index }, rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let rg = self.rg(&[a]);
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, factor), rg)
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.vector_len("cross_entropy", logits)?;
        if target >= n {
            return Err(contract(format!("target {target} out of range for {n} classes")));
        }
        let x = self.value(logits);
        let probs = softmax_values(x);
        let loss = -log_softmax_values(x)[target];
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy",
            Vec::new(),
            vec![loss],
            Op::CrossEntropy { logits, target, probs },
            rg,
        )
    }

    /// Reverse accumulation from a scalar `loss`.
    ///
    /// Only one backward pass is allowed per tape; call [`Tape::zero_grad`]
    /// before running another.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract("backward already ran on this tape; call zero_grad first"));
        }
        if self.node(loss).value.len() != 1 || !self.node(loss).shape.is_empty() {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                propagate(&self.nodes, &mut self.grads, self.fault, i, &g);
            }
            self.grads[i] = Some(g);
        }
        for v in self.grads.iter().flatten() {
            check_finite("backward", v)?;
        }
        Ok(())
    }

    /// Clears all gradients so [`Tape::backward`] can run again.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn grad_buf<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Pushes the gradient `g` of node `i` into its inputs.
fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], fault: Option<Fault>, i: usize, g: &[f64]) {
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            let bv = &nodes[b.0].value;
            if let Some(ga) = grad_buf(nodes, grads, a) {
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            let av = &nodes[a.0].value;
            if let Some(gb) = grad_buf(nodes, grads, b) {
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let arp = av[r * k + p];
                        for (o, &gj) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += arp * gj;
                        }
                    }
                }
            }
        }
        &Op::MatVecT { a, v, m, k } => {
            let vv = &nodes[v.0].value;
            if let Some(ga) = grad_buf(nodes, grads, a) {
                for (r, &vr) in vv.iter().enumerate() {
                    for (o, &gj) in ga[r * k..(r + 1) * k].iter_mut().zip(g) {
                        *o += vr * gj;
                    }
                }
            }
            let av = &nodes[a.0].value;
            if let Some(gv) = grad_buf(nodes, grads, v) {
                for r in 0..m {
                    gv[r] += av[r * k..(r + 1) * k].iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        &Op::Add(a, b) => {
            for x in [a, b] {
                if let Some(gx) = grad_buf(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
            }
        }
        &Op::Hadamard(a, b) => {
            for (x, other) in [(a, b), (b, a)] {
                let ov = &nodes[other.0].value;
                if let Some(gx) = grad_buf(nodes, grads, x) {
                    for ((o, gi), oi) in gx.iter_mut().zip(g).zip(ov) {
                        *o += gi * oi;
                    }
                }
            }
        }
        &Op::Sigmoid(a) => {
            let y = &nodes[i].value;
            let faulty = fault == Some(Fault::SigmoidDerivative);
            if let Some(ga) = grad_buf(nodes, grads, a) {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    let d = if faulty { *yi } else { yi * (1.0 - yi) };
                    *o += gi * d;
                }
            }
        }
        &Op::Tanh(a) => {
            let y = &nodes[i].value;
            if let Some(ga) = grad_buf(nodes, grads, a) {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
        }
        &Op::Softmax(a) => {
            let y = &nodes[i].value;
            let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
            if let Some(ga) = grad_buf(nodes, grads, a) {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += yi * (gi - dot);
                }
            }
        }
        &Op::Concat(a, b) => {
            let p = nodes[a.0].value.len();
            if let Some(ga) = grad_buf(nodes, grads, a) {
                ga.iter_mut().zip(&g[..p]).for_each(|(o, gi)| *o += gi);
            }
            if let Some(gb) = grad_buf(nodes, grads, b) {
                gb.iter_mut().zip(&g[p..]).for_each(|(o, gi)| *o += gi);
            }
        }
        &Op::Row { table, index } => {
            let c = g.len();
            if let Some(gt) = grad_buf(nodes, grads, table) {
                gt[index * c..(index + 1) * c]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, gi)| *o += gi);
            }
        }
        &Op::Sum(a) => {
            if let Some(ga) = grad_buf(nodes, grads, a) {
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        &Op::Scale(a, factor) => {
            if let Some(ga) = grad_buf(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(o, gi)| *o += gi * factor);
            }
        }
        Op::CrossEntropy { logits, target, probs } => {
            if let Some(gl) = grad_buf(nodes, grads, *logits) {
                for (j, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *o += g[0] * (p - onehot);
                }
            }
        }
    }
}
