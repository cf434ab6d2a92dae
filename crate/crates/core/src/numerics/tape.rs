//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one node holding its output value. Node ids are
//! handed out in increasing order, so the tape is topologically sorted by
//! construction and `backward` only needs a single reverse sweep.

use super::functions::{cosine_parts, log_softmax_slice, softmax_slice};
use super::{NumericsError, Tensor};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: Var, x: Var },
    MatMulT { x: Var, w: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRows { m: Var, v: Var },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Pick { a: Var, index: usize },
    Dot(Var, Var),
    Sum(Var),
    Row { m: Var, index: usize },
    WeightedRowSum { weights: Var, m: Var },
    StackRows(Vec<Var>),
    Conv1d { x: Var, kernel: Var },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Cosine(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatVec { w, x } => vec![*w, *x],
            MatMulT { x, w } => vec![*x, *w],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Dot(a, b) | Cosine(a, b) => vec![*a, *b],
            AddRows { m, v } => vec![*m, *v],
            Scale(a, _) | Sigmoid(a) | Tanh(a) | Exp(a) | Log(a) | Softmax(a) | LogSoftmax(a) | Sum(a) => vec![*a],
            Slice { a, .. } | Pick { a, .. } => vec![*a],
            Row { m, .. } => vec![*m],
            WeightedRowSum { weights, m } => vec![*weights, *m],
            Concat(vs) | StackRows(vs) => vs.clone(),
            Conv1d { x, kernel } => vec![*x, *kernel],
            LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    requires_grad: bool,
}

/// Record of primitive applications for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` was not reached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let len = nodes[v.0].value.len();
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// The scalar held by a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite and well-shaped")
    }

    /// Registers a tensor as a leaf. Trainable iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.leaf_as(t, t.requires_grad())
    }

    /// Registers a tensor as a leaf, overriding its trainable flag.
    pub fn leaf_as(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            needs_grad: requires_grad,
            requires_grad,
        });
        Var(id)
    }

    /// Non-trainable leaf from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var, NumericsError> {
        let t = Tensor::new(shape, value)?;
        Ok(self.leaf(&t))
    }

    pub fn constant_vec(&mut self, value: Vec<f64>) -> Result<Var, NumericsError> {
        let n = value.len();
        self.constant(vec![n], value)
    }

    fn push(&mut self, name: &'static str, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Result<Var, NumericsError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { op: name });
        }
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node { shape, value, op, needs_grad, requires_grad: false });
        Ok(Var(id))
    }

    fn vec_len(&self, op: &'static str, v: Var) -> Result<usize, NumericsError> {
        match self.nodes[v.0].shape.as_slice() {
            [n] => Ok(*n),
            other => Err(shape_err(op, &[self.nodes[v.0].value.len()], other)),
        }
    }

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), NumericsError> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(shape_err(op, &[0, 0], other)),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, NumericsError> {
        let shape = self.nodes[a.0].shape.clone();
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(name, op, shape, value)
    }

    /// `w · x` for `w: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.mat_dims("matvec", w)?;
        let xn = self.vec_len("matvec", x)?;
        if xn != n {
            return Err(shape_err("matvec", &[n], &[xn]));
        }
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out = wv.chunks_exact(n).map(|row| dot(row, xv)).collect();
        self.push("matvec", Op::MatVec { w, x }, vec![m], out)
    }

    /// `x · wᵀ` for `x: [t, n]`, `w: [m, n]`, giving `[t, m]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (t, n) = self.mat_dims("matmul_t", x)?;
        let (m, wn) = self.mat_dims("matmul_t", w)?;
        if wn != n {
            return Err(shape_err("matmul_t", &[m, n], &[m, wn]));
        }
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = Vec::with_capacity(t * m);
        for xr in xv.chunks_exact(n) {
            out.extend(wv.chunks_exact(n).map(|wr| dot(xr, wr)));
        }
        self.push("matmul_t", Op::MatMulT { x, w }, vec![t, m], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push("add", Op::Add(a, b), self.nodes[a.0].shape.clone(), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push("sub", Op::Sub(a, b), self.nodes[a.0].shape.clone(), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push("mul", Op::Mul(a, b), self.nodes[a.0].shape.clone(), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.unary("scale", a, Op::Scale(a, s), |x| s * x)
    }

    /// Adds vector `v: [c]` to every row of `m: [t, c]`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (t, c) = self.mat_dims("add_rows", m)?;
        let vn = self.vec_len("add_rows", v)?;
        if vn != c {
            return Err(shape_err("add_rows", &[c], &[vn]));
        }
        let vv = &self.nodes[v.0].value;
        let out =
            self.nodes[m.0].value.chunks_exact(c).flat_map(|row| row.iter().zip(vv).map(|(a, b)| a + b)).collect();
        self.push("add_rows", Op::AddRows { m, v }, vec![t, c], out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.vec_len("softmax", a)?;
        let out = softmax_slice(&self.nodes[a.0].value)?;
        self.push("softmax", Op::Softmax(a), self.nodes[a.0].shape.clone(), out)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.vec_len("log_softmax", a)?;
        let out = log_softmax_slice(&self.nodes[a.0].value)?;
        self.push("log_softmax", Op::LogSoftmax(a), self.nodes[a.0].shape.clone(), out)
    }

    /// Flattening concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Empty { op: "concat" });
        }
        let out: Vec<f64> = parts.iter().flat_map(|v| self.nodes[v.0].value.iter().copied()).collect();
        let n = out.len();
        self.push("concat", Op::Concat(parts.to_vec()), vec![n], out)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let n = self.vec_len("slice", a)?;
        if start + len > n || len == 0 {
            return Err(NumericsError::IndexOutOfRange { op: "slice", index: start + len, len: n });
        }
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        self.push("slice", Op::Slice { a, start }, vec![len], out)
    }

    /// Element `index` of a vector as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, NumericsError> {
        let n = self.nodes[a.0].value.len();
        if index >= n {
            return Err(NumericsError::IndexOutOfRange { op: "pick", index, len: n });
        }
        let out = vec![self.nodes[a.0].value[index]];
        self.push("pick", Op::Pick { a, index }, Vec::new(), out)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("dot", a, b)?;
        let out = vec![dot(&self.nodes[a.0].value, &self.nodes[b.0].value)];
        self.push("dot", Op::Dot(a, b), Vec::new(), out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = vec![self.nodes[a.0].value.iter().sum()];
        self.push("sum", Op::Sum(a), Vec::new(), out)
    }

    /// Row `index` of a matrix.
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var, NumericsError> {
        let (t, c) = self.mat_dims("row", m)?;
        if index >= t {
            return Err(NumericsError::IndexOutOfRange { op: "row", index, len: t });
        }
        let out = self.nodes[m.0].value[index * c..(index + 1) * c].to_vec();
        self.push("row", Op::Row { m, index }, vec![c], out)
    }

    /// `Σ_r weights[r] · m[r, :]` for `weights: [t]`, `m: [t, c]`.
    pub fn weighted_row_sum(&mut self, weights: Var, m: Var) -> Result<Var, NumericsError> {
        let (t, c) = self.mat_dims("weighted_row_sum", m)?;
        let wn = self.vec_len("weighted_row_sum", weights)?;
        if wn != t {
            return Err(shape_err("weighted_row_sum", &[t], &[wn]));
        }
        let mut out = vec![0.0; c];
        for (w, row) in self.nodes[weights.0].value.iter().zip(self.nodes[m.0].value.chunks_exact(c)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        self.push("weighted_row_sum", Op::WeightedRowSum { weights, m }, vec![c], out)
    }

    /// Stacks equal-length vectors into a `[rows, c]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, NumericsError> {
        let first = *rows.first().ok_or(NumericsError::Empty { op: "stack_rows" })?;
        let c = self.vec_len("stack_rows", first)?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let n = self.vec_len("stack_rows", r)?;
            if n != c {
                return Err(shape_err("stack_rows", &[c], &[n]));
            }
            out.extend_from_slice(&self.nodes[r.0].value);
        }
        self.push("stack_rows", Op::StackRows(rows.to_vec()), vec![rows.len(), c], out)
    }

    /// Same-padded 1-D convolution of `x: [t]` with `kernel: [channels, width]`,
    /// giving `[t, channels]`. Tap `j` reads `x[r + j - width / 2]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var) -> Result<Var, NumericsError> {
        let t = self.vec_len("conv1d", x)?;
        let (ch, width) = self.mat_dims("conv1d", kernel)?;
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let half = width / 2;
        let mut out = vec![0.0; t * ch];
        for r in 0..t {
            for c in 0..ch {
                let mut s = 0.0;
                for j in 0..width {
                    if let Some(src) = (r + j).checked_sub(half).filter(|&i| i < t) {
                        s += kv[c * width + j] * xv[src];
                    }
                }
                out[r * ch + c] = s;
            }
        }
        self.push("conv1d", Op::Conv1d { x, kernel }, vec![t, ch], out)
    }

    /// Row-wise layer normalization with learned gain and bias. Vectors are
    /// treated as a single row.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let shape = self.nodes[x.0].shape.clone();
        let c = *shape.last().ok_or(NumericsError::Empty { op: "layer_norm" })?;
        if shape.len() > 2 {
            return Err(shape_err("layer_norm", &[0, c], &shape));
        }
        for p in [gain, bias] {
            let n = self.vec_len("layer_norm", p)?;
            if n != c {
                return Err(shape_err("layer_norm", &[c], &[n]));
            }
        }
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut out = Vec::with_capacity(self.nodes[x.0].value.len());
        for row in self.nodes[x.0].value.chunks_exact(c) {
            let (mean, inv) = norm_stats(row);
            out.extend(row.iter().zip(gv.iter().zip(bv)).map(|(v, (g, b))| (v - mean) * inv * g + b));
        }
        self.push("layer_norm", Op::LayerNorm { x, gain, bias }, shape, out)
    }

    /// Cosine similarity of two vectors, clamped to [-1, 1].
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("cosine", a, b)?;
        let (c, _, _) = cosine_parts(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        self.push("cosine", Op::Cosine(a, b), Vec::new(), vec![c.clamp(-1.0, 1.0)])
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let root = self.nodes.get(loss.0).ok_or(NumericsError::IndexOutOfRange {
            op: "backward",
            index: loss.0,
            len: self.nodes.len(),
        })?;
        if root.value.len() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: root.shape.clone() });
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if root.needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.op.inputs().iter().any(|v| v.0 >= i) {
                return Err(NumericsError::Cycle { node: i });
            }
            self.backprop_node(node, &g, &mut grads);
        }
        for (i, node) in nodes.iter().enumerate().take(loss.0 + 1) {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatVec { w, x } => {
                let xv = val(*x);
                let n = xv.len();
                acc(grads, nodes, *w, |gw| {
                    for (row, gi) in gw.chunks_exact_mut(n).zip(g) {
                        if *gi != 0.0 {
                            for (r, xj) in row.iter_mut().zip(xv) {
                                *r += gi * xj;
                            }
                        }
                    }
                });
                let wv = val(*w);
                acc(grads, nodes, *x, |gx| {
                    for (row, gi) in wv.chunks_exact(n).zip(g) {
                        for (o, wij) in gx.iter_mut().zip(row) {
                            *o += gi * wij;
                        }
                    }
                });
            }
            Op::MatMulT { x, w } => {
                let xv = val(*x);
                let wv = val(*w);
                let n = nodes[x.0].shape[1];
                let m = nodes[w.0].shape[0];
                acc(grads, nodes, *x, |gx| {
                    for (gxr, gr) in gx.chunks_exact_mut(n).zip(g.chunks_exact(m)) {
                        for (wr, gi) in wv.chunks_exact(n).zip(gr) {
                            for (o, wij) in gxr.iter_mut().zip(wr) {
                                *o += gi * wij;
                            }
                        }
                    }
                });
                acc(grads, nodes, *w, |gw| {
                    for (xr, gr) in xv.chunks_exact(n).zip(g.chunks_exact(m)) {
                        for (gwr, gi) in gw.chunks_exact_mut(n).zip(gr) {
                            for (o, xj) in gwr.iter_mut().zip(xr) {
                                *o += gi * xj;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(grads, nodes, *a, |ga| add_into(ga, g));
                acc(grads, nodes, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(grads, nodes, *a, |ga| add_into(ga, g));
                acc(grads, nodes, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(o, (gi, y))| *o += gi * y));
                acc(grads, nodes, *b, |gb| gb.iter_mut().zip(g.iter().zip(av)).for_each(|(o, (gi, x))| *o += gi * x));
            }
            Op::Scale(a, s) => {
                acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, gi)| *o += s * gi));
            }
            Op::AddRows { m, v } => {
                let c = nodes[v.0].value.len();
                acc(grads, nodes, *m, |gm| add_into(gm, g));
                acc(grads, nodes, *v, |gv| {
                    for row in g.chunks_exact(c) {
                        add_into(gv, row);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(grads, nodes, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gi, yi))| *o += gi * yi * (1.0 - yi))
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(grads, nodes, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gi, yi))| *o += gi * (1.0 - yi * yi))
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gi, yi))| *o += gi * yi));
            }
            Op::Log(a) => {
                let x = val(*a);
                acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g.iter().zip(x)).for_each(|(o, (gi, xi))| *o += gi / xi));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = dot(g, y);
                acc(grads, nodes, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gi, yi))| *o += yi * (gi - gy))
                });
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let gs: f64 = g.iter().sum();
                acc(grads, nodes, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gi, yi))| *o += gi - yi.exp() * gs)
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    acc(grads, nodes, *p, |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { a, start } => {
                let n = g.len();
                acc(grads, nodes, *a, |ga| add_into(&mut ga[*start..start + n], g));
            }
            Op::Pick { a, index } => {
                acc(grads, nodes, *a, |ga| ga[*index] += g[0]);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(grads, nodes, *a, |ga| ga.iter_mut().zip(bv).for_each(|(o, y)| *o += g[0] * y));
                acc(grads, nodes, *b, |gb| gb.iter_mut().zip(av).for_each(|(o, x)| *o += g[0] * x));
            }
            Op::Sum(a) => {
                acc(grads, nodes, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Row { m, index } => {
                let c = g.len();
                acc(grads, nodes, *m, |gm| add_into(&mut gm[index * c..(index + 1) * c], g));
            }
            Op::WeightedRowSum { weights, m } => {
                let c = g.len();
                let (wv, mv) = (val(*weights), val(*m));
                acc(grads, nodes, *weights, |gw| {
                    for (o, row) in gw.iter_mut().zip(mv.chunks_exact(c)) {
                        *o += dot(row, g);
                    }
                });
                acc(grads, nodes, *m, |gm| {
                    for (row, w) in gm.chunks_exact_mut(c).zip(wv) {
                        row.iter_mut().zip(g).for_each(|(o, gi)| *o += w * gi);
                    }
                });
            }
            Op::StackRows(rows) => {
                let c = node.shape[1];
                for (r, v) in rows.iter().enumerate() {
                    acc(grads, nodes, *v, |gv| add_into(gv, &g[r * c..(r + 1) * c]));
                }
            }
            Op::Conv1d { x, kernel } => {
                let (xv, kv) = (val(*x), val(*kernel));
                let t = xv.len();
                let (ch, width) = (nodes[kernel.0].shape[0], nodes[kernel.0].shape[1]);
                let half = width / 2;
                let taps = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for r in 0..t {
                        for c in 0..ch {
                            for j in 0..width {
                                if let Some(src) = (r + j).checked_sub(half).filter(|&i| i < t) {
                                    f(r, c, j, src);
                                }
                            }
                        }
                    }
                };
                acc(grads, nodes, *x, |gx| {
                    taps(&mut |r, c, j, src| gx[src] += g[r * ch + c] * kv[c * width + j]);
                });
                acc(grads, nodes, *kernel, |gk| {
                    taps(&mut |r, c, j, src| gk[c * width + j] += g[r * ch + c] * xv[src]);
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = val(*x);
                let gv = val(*gain);
                let c = gv.len();
                let mut gx_all = vec![0.0; xv.len()];
                let mut ggain = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for ((row, grow), gxr) in xv.chunks_exact(c).zip(g.chunks_exact(c)).zip(gx_all.chunks_exact_mut(c)) {
                    let (mean, inv) = norm_stats(row);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let gxhat: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                    for j in 0..c {
                        ggain[j] += grow[j] * xhat[j];
                        gbias[j] += grow[j];
                    }
                    let m1 = gxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dot(&gxhat, &xhat) / c as f64;
                    for j in 0..c {
                        gxr[j] = inv * (gxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                acc(grads, nodes, *x, |o| add_into(o, &gx_all));
                acc(grads, nodes, *gain, |o| add_into(o, &ggain));
                acc(grads, nodes, *bias, |o| add_into(o, &gbias));
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (c, na, nb) = cosine_parts(av, bv).expect("validated in forward");
                let g0 = g[0];
                acc(grads, nodes, *a, |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *o += g0 * (y / (na * nb) - c * x / (na * na));
                    }
                });
                acc(grads, nodes, *b, |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *o += g0 * (x / (na * nb) - c * y / (nb * nb));
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}
