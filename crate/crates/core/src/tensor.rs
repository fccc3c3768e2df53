//! Dense f64 tensors and a tape-style reverse-mode differentiation graph.
//!
//! A [`Graph`] records every operation in insertion order, which is also a
//! topological order. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients additively, so a node consumed k times receives the
//! sum of k contributions. A graph is single-use: it is built for one step,
//! differentiated once and dropped.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero-sized dimension")]
    EmptyDim(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("leaky-relu slope {0} outside (0, 1)")]
    Slope(f64),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph was already differentiated; build a fresh graph per step")]
    StaleGraph,
    #[error("non-finite evaluation ({value}) when perturbing tensor {tensor} at element {index}")]
    NonFinite {
        tensor: usize,
        index: usize,
        value: f64,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::EmptyDim(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::Shape {
                op: "from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape.clone(),
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(*self.shape.last().unwrap_or(&1))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    AddRow(Var, Var),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Reduce {
        kind: Reduce,
        input: Var,
        axis: Option<usize>,
    },
    LogSoftmaxRows(Var),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    /// Leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, false)
    }

    pub fn constant_filled(&mut self, shape: &[usize], value: f64) -> Var {
        let n = shape.iter().product();
        self.push(shape.to_vec(), vec![value; n], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.clone(),
            grad: self.grad(v).map(<[f64]>::to_vec),
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradient of the last backward root w.r.t. `v`; `None` when `v` was not
    /// reached or does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `v`, zeros when unreached.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a), self.value(b), r, k, c);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(vec![r, c], out, Op::Matmul(a, b), rg))
    }

    /// `a[r×c] + bias[c]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let cols = sa[1];
        let bv = self.value(bias);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        let shape = sa.to_vec();
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(shape, out, Op::AddRow(a, bias), rg))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        if let UnaryOp::LeakyRelu(s) = op {
            if !(s > 0.0 && s < 1.0) {
                return Err(TensorError::Slope(s));
            }
        }
        let out: Vec<f64> = self.value(a).iter().map(|&x| unary_fwd(op, x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a);
        Ok(self.push(shape, out, Op::Unary(op, a), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op: "elementwise",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::Binary(op, a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Sum or mean over `axis`, or over every element when `axis` is `None`.
    /// Reducing away the last remaining axis yields shape `[1]`.
    pub fn reduce(&mut self, kind: Reduce, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (out_shape, out) = match axis {
            None => {
                let s: f64 = self.value(a).iter().sum();
                let v = match kind {
                    Reduce::Sum => s,
                    Reduce::Mean => s / shape.iter().product::<usize>() as f64,
                };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(TensorError::Axis {
                        axis: ax,
                        rank: shape.len(),
                    });
                }
                let (outer, n, inner) = split_axis(&shape, ax);
                let src = self.value(a);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let base = (o * n + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += src[base + i];
                        }
                    }
                }
                if kind == Reduce::Mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                let mut out_shape: Vec<usize> = shape
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != ax)
                    .map(|(_, &d)| d)
                    .collect();
                if out_shape.is_empty() {
                    out_shape.push(1);
                }
                (out_shape, out)
            }
        };
        let rg = self.needs(a);
        Ok(self.push(
            out_shape,
            out,
            Op::Reduce {
                kind,
                input: a,
                axis,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduce::Mean, a, axis)
    }

    /// Numerically stable row-wise log-softmax of a rank-2 tensor.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Shape {
                op: "log_softmax_rows",
                lhs: shape,
                rhs: vec![],
            });
        }
        let cols = shape[1];
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let rg = self.needs(a);
        Ok(self.push(shape, out, Op::LogSoftmaxRows(a), rg))
    }

    /// Reverse pass from a scalar `root`. Consumes the graph: a second call
    /// returns [`TensorError::StaleGraph`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::StaleGraph);
        }
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape.to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (r, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let c = self.nodes[b.0].shape[1];
                if self.needs(a) {
                    let da = matmul_a_bt(g, &self.nodes[b.0].value, r, c, k);
                    accumulate(grads, a, &da);
                }
                if self.needs(b) {
                    let db = matmul_at_b(&self.nodes[a.0].value, g, r, k, c);
                    accumulate(grads, b, &db);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(a) {
                    accumulate(grads, a, g);
                }
                if self.needs(bias) {
                    let cols = self.nodes[bias.0].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, bias, &db);
                }
            }
            Op::Unary(op, a) => {
                let x = &self.nodes[a.0].value;
                let y = &node.value;
                let da: Vec<f64> = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * unary_deriv(op, xi, yi))
                    .collect();
                accumulate(grads, a, &da);
            }
            Op::Binary(op, a, b) => {
                let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.needs(a) {
                    let da: Vec<f64> = match op {
                        BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                        BinaryOp::Mul => g.iter().zip(xb).map(|(gi, y)| gi * y).collect(),
                    };
                    accumulate(grads, a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = match op {
                        BinaryOp::Add => g.to_vec(),
                        BinaryOp::Sub => g.iter().map(|gi| -gi).collect(),
                        BinaryOp::Mul => g.iter().zip(xa).map(|(gi, x)| gi * x).collect(),
                    };
                    accumulate(grads, b, &db);
                }
            }
            Op::Reduce { kind, input, axis } => {
                let in_shape = &self.nodes[input.0].shape;
                let total: usize = in_shape.iter().product();
                let da = match axis {
                    None => {
                        let scale = match kind {
                            Reduce::Sum => 1.0,
                            Reduce::Mean => 1.0 / total as f64,
                        };
                        vec![g[0] * scale; total]
                    }
                    Some(ax) => {
                        let (outer, n, inner) = split_axis(in_shape, ax);
                        let scale = match kind {
                            Reduce::Sum => 1.0,
                            Reduce::Mean => 1.0 / n as f64,
                        };
                        let mut da = vec![0.0; total];
                        for o in 0..outer {
                            for j in 0..n {
                                let base = (o * n + j) * inner;
                                for i in 0..inner {
                                    da[base + i] = g[o * inner + i] * scale;
                                }
                            }
                        }
                        da
                    }
                };
                accumulate(grads, input, &da);
            }
            Op::LogSoftmaxRows(a) => {
                let cols = node.shape[1];
                let mut da = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(cols).zip(node.value.chunks(cols)) {
                    let gsum: f64 = grow.iter().sum();
                    da.extend(grow.iter().zip(yrow).map(|(gi, yi)| gi - yi.exp() * gsum));
                }
                accumulate(grads, a, &da);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc
            .iter_mut()
            .zip(contribution)
            .for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn unary_fwd(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        UnaryOp::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Square => x * x,
    }
}

// Kinks at exactly 0 take the negative-branch slope.
fn unary_deriv(op: UnaryOp, x: f64, y: f64) -> f64 {
    match op {
        UnaryOp::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryOp::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        UnaryOp::Sigmoid => y * (1.0 - y),
        UnaryOp::Tanh => 1.0 - y * y,
        UnaryOp::Square => 2.0 * x,
    }
}

/// `a[r×k] · b[k×c]`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * c..(p + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g[r×c] · bᵀ` with `b[k×c]`.
fn matmul_a_bt(g: &[f64], b: &[f64], r: usize, c: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let brow = &b[p * c..(p + 1) * c];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` with `a[r×k]`, `g[r×c]`.
fn matmul_at_b(a: &[f64], g: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Maximum over coordinates of `|analytic - numeric| / max(1, |analytic|)`,
/// where `numeric` is the central difference with step `h`.
///
/// `f` builds a scalar from the parameter leaves it is handed; it is called
/// once for the analytic gradient and twice per coordinate on fresh graphs.
pub fn gradcheck<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t)).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |params: &[Tensor], tensor: usize, index: usize| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.constant(t)).collect();
        let root = f(&mut g, &vars)?;
        let value = g.scalar(root);
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                tensor,
                index,
                value,
            });
        }
        Ok(value)
    };

    let mut params = point.to_vec();
    let mut worst = 0.0_f64;
    for t in 0..params.len() {
        for i in 0..params[t].len() {
            let orig = params[t].data[i];
            params[t].data[i] = orig + h;
            let plus = eval(&params, t, i)?;
            params[t].data[i] = orig - h;
            let minus = eval(&params, t, i)?;
            params[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![0, 2], vec![]),
            Err(TensorError::EmptyDim(_))
        ));
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut g = Graph::new();
        let i2 = g.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(out), &[1.0, 2.0, 3.0, 4.0]);

        let p = g.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let m = g.constant(&t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let out = g.matmul(p, m).unwrap();
        assert_eq!(g.value(out), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(vec![2, 3]).unwrap());
        let b = g.constant(&Tensor::zeros(vec![2, 3]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);

        let z = g.constant(&t(&[1], &[0.0]));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);

        let n = g.constant(&t(&[1], &[-5.0]));
        let l = g.leaky_relu(n, 0.2).unwrap();
        assert_eq!(g.value(l), &[-1.0]);

        assert_eq!(g.leaky_relu(n, 1.5), Err(TensorError::Slope(1.5)));
        let other = g.constant(&t(&[2], &[0.0, 0.0]));
        assert!(matches!(g.add(x, other), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn kink_derivatives_take_negative_branch() {
        let mut g = Graph::new();
        let x = g.param(&t(&[1], &[0.0]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        let s = g.sum(y, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.2]);

        let mut g = Graph::new();
        let x = g.param(&t(&[1], &[0.0]));
        let y = g.relu(x).unwrap();
        let s = g.sum(y, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn reduce_examples() {
        let mut g = Graph::new();
        let v = g.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let m = g.mean(v, None).unwrap();
        assert_eq!(g.value(m), &[2.0]);

        let a = g.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let s0 = g.sum(a, Some(0)).unwrap();
        assert_eq!(g.value(s0), &[4.0, 6.0]);
        let s1 = g.sum(a, Some(1)).unwrap();
        assert_eq!(g.value(s1), &[3.0, 7.0]);
        assert_eq!(
            g.sum(a, Some(2)),
            Err(TensorError::Axis { axis: 2, rank: 2 })
        );
    }

    #[test]
    fn mean_of_square_gradient() {
        let mut g = Graph::new();
        let w = g.param(&t(&[2], &[1.0, 2.0]));
        let sq = g.square(w).unwrap();
        let m = g.mean(sq, None).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let w = g.param(&t(&[3], &[0.3, -1.0, 4.0]));
        let s = g.sum(w, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let w = g.param(&t(&[2], &[2.0, 3.0]));
        let ww = g.mul(w, w).unwrap();
        let s = g.sum(ww, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut g = Graph::new();
        let w = g.param(&t(&[2], &[1.0, 2.0]));
        assert_eq!(g.backward(w), Err(TensorError::NonScalarRoot(vec![2])));
        let s = g.sum(w, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(TensorError::StaleGraph));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(&t(&[2], &[1.0, 2.0]));
        let c = g.constant(&t(&[2], &[3.0, 4.0]));
        let p = g.mul(w, c).unwrap();
        let s = g.sum(p, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn accumulation_doubles_for_repeated_use() {
        let build = |g: &mut Graph, w: Var| {
            let t = g.tanh(w).unwrap();
            let sq = g.square(t).unwrap();
            g.sum(sq, None).unwrap()
        };
        let w0 = t(&[3], &[0.1, -0.7, 1.3]);
        let mut g = Graph::new();
        let w = g.param(&w0);
        let r = build(&mut g, w);
        g.backward(r).unwrap();
        let single = g.grad(w).unwrap().to_vec();

        let mut g = Graph::new();
        let w = g.param(&w0);
        let a = build(&mut g, w);
        let b = build(&mut g, w);
        let r = g.add(a, b).unwrap();
        g.backward(r).unwrap();
        let double = g.grad(w).unwrap();
        for (d, s) in double.iter().zip(&single) {
            assert_eq!(*d, 2.0 * s);
        }
    }

    #[test]
    fn gradcheck_quadratic_and_relu() {
        let w = t(&[4], &[0.5, -1.5, 2.0, 3.0]);
        let err = gradcheck(
            |g, v| {
                let sq = g.square(v[0])?;
                g.sum(sq, None)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");

        let err = gradcheck(
            |g, v| {
                let r = g.relu(v[0])?;
                g.sum(r, None)
            },
            &[t(&[1], &[1.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn gradcheck_reports_non_finite_coordinate() {
        let err = gradcheck(
            |g, v| {
                let s = g.sum(v[0], None)?;
                let c = g.constant(&Tensor::scalar(f64::MAX));
                let big = g.mul(s, c)?;
                g.mul(big, c)
            },
            &[t(&[2], &[1.0, 1.0])],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { tensor: 0, index: 0, .. }));
    }

    #[test]
    fn log_softmax_rows_normalizes() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]));
        let y = g.log_softmax_rows(x).unwrap();
        for row in g.value(y).chunks(3) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
