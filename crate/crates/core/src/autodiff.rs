//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node on a tape. Calling [`Graph::backward`] on a scalar (1×1) node walks
//! the tape in reverse and produces a [`Gradients`] value holding the
//! gradient of that scalar with respect to every node and every parameter
//! of the [`ParamStore`] the graph reads from.
//!
//! Everything is two-dimensional; vectors are 1×d rows and scalars are 1×1.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a learnable matrix inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable matrices.
///
/// Names are dotted paths (`backbone.block0.w_in.w`); the first segment is
/// the parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Panics on duplicate names; parameter
    /// layouts are fixed by model construction code.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Registers a parameter drawn uniformly from ±1/sqrt(fan_in), rounded
    /// to single precision so checkpoints store it losslessly.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Mat::from_shape_simple_fn((rows, cols), || {
            round_f32(rng.gen_range(-bound..=bound))
        });
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> + '_ {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Parameter group of `id`: the first dotted segment of its name.
    pub fn group(&self, id: ParamId) -> &str {
        let name = self.name(id);
        name.split('.').next().unwrap_or(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddScalarVar(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var, usize),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    LogEps(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    Transpose(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    BroadcastRows(Var),
    RowMax(Var, Vec<usize>),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    Scan(Var, Var),
    RowNormalize(Var, f64),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Forward tape. Borrows the parameter store immutably for its lifetime.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Constant input (no gradient is propagated into it).
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that receives a gradient, for probing derivatives with respect
    /// to data rather than parameters.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf; repeated reads of the same parameter share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a 1×d row to every row of an n×d matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row: shape mismatch");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of an n×d matrix by a 1×d row, elementwise.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "mul_row: shape mismatch");
        let value = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// Adds a 1×1 node to every entry.
    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let c = self.value(s)[[0, 0]];
        let value = self.value(a) + c;
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::AddScalarVar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Multiplies `a` by the scalar stored at column `col` of the 1×k node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var, col: usize) -> Var {
        let c = self.value(s)[[0, col]];
        let value = self.value(a) * c;
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::ScaleBy(a, s, col), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    /// `ln(a + eps)`
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).mapv(|v| (v + eps).ln());
        let rg = self.rg(a);
        self.push(value, Op::LogEps(a, eps), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Per-row standardization (zero mean, unit variance), no affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, d) = x.dim();
        let mut value = Mat::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                value[[i, j]] = (v - mean) * is;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNorm(a, inv_std), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, end), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Column means: n×d → 1×d.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows: empty")
            .insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Repeats a 1×d row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1);
        let value = row
            .broadcast((n, row.ncols()))
            .expect("broadcast_rows")
            .to_owned();
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    /// Row maxima: n×d → n×1. The gradient flows to the first maximizer.
    pub fn row_max(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        let mut value = Mat::zeros((n, 1));
        let mut arg = Vec::with_capacity(n);
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            arg.push(best);
            value[[i, 0]] = row[best];
        }
        let rg = self.rg(a);
        self.push(value, Op::RowMax(a, arg), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, rows.to_vec()), rg)
    }

    /// Causal linear recurrence along the row (sequence) axis:
    /// `s_t = λ ⊙ s_{t-1} + u_t`, with per-channel `λ = sigmoid(decay_logit)`.
    pub fn scan(&mut self, u: Var, decay_logit: Var) -> Var {
        let (n, d) = self.shape(u);
        assert_eq!(self.shape(decay_logit), (1, d), "scan: decay shape");
        let lambda = self.value(decay_logit).mapv(sigmoid);
        let uu = self.value(u);
        let mut value = Mat::zeros((n, d));
        for t in 0..n {
            for c in 0..d {
                let prev = if t > 0 { value[[t - 1, c]] } else { 0.0 };
                value[[t, c]] = lambda[[0, c]] * prev + uu[[t, c]];
            }
        }
        let rg = self.rg(u) || self.rg(decay_logit);
        self.push(value, Op::Scan(u, decay_logit), rg)
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt().max(eps);
            row.mapv_inplace(|v| v / norm);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowNormalize(a, eps), rg)
    }

    /// Reverse sweep from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar node");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let mut params = vec![None; self.params.len()];
        for (&id, &v) in &self.param_nodes {
            params[id.0] = grads[v.0].clone();
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.rg(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g * self.value(*row));
                }
                if self.rg(*row) {
                    let d = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *row, d);
                }
            }
            Op::AddScalarVar(a, s) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *s, Mat::from_elem((1, 1), g.sum()));
            }
            Op::Scale(a, c) => self.acc(grads, *a, g * *c),
            Op::ScaleBy(a, s, col) => {
                let c = self.value(*s)[[0, *col]];
                if self.rg(*a) {
                    self.acc(grads, *a, g * c);
                }
                if self.rg(*s) {
                    let mut d = Mat::zeros(self.value(*s).dim());
                    d[[0, *col]] = (g * self.value(*a)).sum();
                    self.acc(grads, *s, d);
                }
            }
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = Zip::from(g).and(y).map_collect(|&g, &y| g * y * (1.0 - y));
                self.acc(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| g * sigmoid(x));
                self.acc(grads, *a, d);
            }
            Op::LogEps(a, eps) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| g / (x + eps));
                self.acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= s * yv);
                }
                self.acc(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let p = node.value.mapv(f64::exp);
                let mut d = g.clone();
                for ((mut drow, grow), prow) in d.rows_mut().into_iter().zip(g.rows()).zip(p.rows()) {
                    let s = grow.sum();
                    Zip::from(&mut drow).and(&prow).for_each(|dv, &pv| *dv -= s * pv);
                }
                self.acc(grads, *a, d);
            }
            Op::LayerNorm(a, inv_std) => {
                let xhat = &node.value;
                let (n, dim) = xhat.dim();
                let mut d = Mat::zeros((n, dim));
                for i in 0..n {
                    let grow = g.row(i);
                    let xrow = xhat.row(i);
                    let mean_g = grow.sum() / dim as f64;
                    let mean_gx = grow.dot(&xrow) / dim as f64;
                    for j in 0..dim {
                        d[[i, j]] = inv_std[i] * (grow[j] - mean_g - xrow[j] * mean_gx);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.t().to_owned()),
            Op::SliceCols(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        self.acc(grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let d = g.broadcast(self.value(*a).dim()).unwrap().mapv(|v| v / n as f64);
                self.acc(grads, *a, d);
            }
            Op::BroadcastRows(a) => {
                self.acc(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::RowMax(a, arg) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (i, &j) in arg.iter().enumerate() {
                    d[[i, j]] = g[[i, 0]];
                }
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.acc(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                self.acc(grads, *a, d);
            }
            Op::Scan(u, logit) => {
                let (n, dim) = node.value.dim();
                let lambda = self.value(*logit).mapv(sigmoid);
                let states = &node.value;
                // carry_t = ds_t + λ ⊙ carry_{t+1}
                let mut carry = Mat::zeros((n, dim));
                for t in (0..n).rev() {
                    for c in 0..dim {
                        let next = if t + 1 < n { carry[[t + 1, c]] } else { 0.0 };
                        carry[[t, c]] = g[[t, c]] + lambda[[0, c]] * next;
                    }
                }
                if self.rg(*logit) {
                    let mut dl = Mat::zeros((1, dim));
                    for t in 1..n {
                        for c in 0..dim {
                            dl[[0, c]] += carry[[t, c]] * states[[t - 1, c]];
                        }
                    }
                    Zip::from(&mut dl)
                        .and(&lambda)
                        .for_each(|d, &l| *d *= l * (1.0 - l));
                    self.acc(grads, *logit, dl);
                }
                self.acc(grads, *u, carry);
            }
            Op::RowNormalize(a, eps) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut d = Mat::zeros(x.dim());
                for i in 0..x.nrows() {
                    let xr = x.row(i);
                    let norm = xr.dot(&xr).sqrt();
                    let gr = g.row(i);
                    if norm > *eps {
                        let yr = y.row(i);
                        let proj = gr.dot(&yr);
                        for j in 0..x.ncols() {
                            d[[i, j]] = (gr[j] - yr[j] * proj) / norm;
                        }
                    } else {
                        for j in 0..x.ncols() {
                            d[[i, j]] = gr[j] / eps;
                        }
                    }
                }
                self.acc(grads, *a, d);
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to a node, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn into_params(self) -> Vec<Option<Mat>> {
        self.params
    }
}
