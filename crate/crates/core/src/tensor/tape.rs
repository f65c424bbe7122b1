//! Reverse-mode automatic differentiation over a flat op list.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes once in reverse, accumulating vector-Jacobian products.

use std::collections::HashMap;
use std::sync::Arc;

use super::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};
use crate::error::{Error, Result};

/// Row indices shared between ops without copying.
pub type Index = Arc<[usize]>;
/// Row groups: output row `i` reduces input rows `groups[i]`.
pub type Groups = Arc<[Vec<usize>]>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
            return i;
        }
        let i = self.tensors.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.tensors.push(value);
        i
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    GatherRows(Var, Index),
    SumRows { x: Var, groups: Groups, mean: bool },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
    SumAll(Var),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, Var)>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    checked: bool,
    ln_eps: T,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Stabilizer added to the variance in [`Tape::layer_norm`].
pub const DEFAULT_LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            checked: false,
            ln_eps: T::lit(DEFAULT_LN_EPS),
        }
    }

    /// Enables NaN/Inf checks after every op.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn with_ln_eps(mut self, eps: f64) -> Self {
        self.ln_eps = T::lit(eps);
        self
    }

    /// Clears all nodes and gradients so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers parameter `id` of `store` as a leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: usize) -> Var {
        let v = self.constant(store.tensor(id).clone());
        self.params.push((id, v));
        v
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.require_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, k) = self.matrix(a, "matmul")?;
        let (k2, _) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul(self.value(a), self.value(b));
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.matrix(a, "add_row")?;
        if self.shape(row) != [1, n] {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(&r) {
                *o = *o + b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let (m, _) = self.matrix(first, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat")?;
            if r != m {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_rows(m, total, data)?;
        self.push("concat", out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.matrix(a, "slice_cols")?;
        if start + width > n {
            return Err(Error::shape("slice_cols", self.shape(a), &[start, width]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + width]);
        }
        let out = Tensor::from_rows(m, width, data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x < T::zero() { T::zero() } else { x });
        self.push("relu", out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.tanh());
        self.push("tanh", out, Op::Tanh(a))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: &Index) -> Result<Var> {
        let (m, n) = self.matrix(a, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidId {
                kind: "row",
                id: bad,
                size: m,
            });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::from_rows(index.len(), n, data)?;
        self.push("gather_rows", out, Op::GatherRows(a, index.clone()))
    }

    fn reduce_rows(&mut self, a: Var, groups: &Groups, mean: bool) -> Result<Var> {
        let name = if mean { "mean_rows" } else { "sum_rows" };
        let (m, n) = self.matrix(a, name)?;
        let src = self.value(a);
        let mut out = Tensor::zeros(&[groups.len(), n]);
        for (i, g) in groups.iter().enumerate() {
            let orow = out.row_mut(i);
            for &k in g {
                if k >= m {
                    return Err(Error::InvalidId {
                        kind: "row",
                        id: k,
                        size: m,
                    });
                }
                for (o, &x) in orow.iter_mut().zip(src.row(k)) {
                    *o = *o + x;
                }
            }
            if mean && g.len() > 1 {
                let inv = T::one() / T::lit(g.len() as f64);
                orow.iter_mut().for_each(|o| *o = *o * inv);
            }
        }
        self.push(
            name,
            out,
            Op::SumRows {
                x: a,
                groups: groups.clone(),
                mean,
            },
        )
    }

    /// Output row `i` is the sum of input rows `groups[i]` (zero when empty).
    pub fn sum_rows(&mut self, a: Var, groups: &Groups) -> Result<Var> {
        self.reduce_rows(a, groups, false)
    }

    /// Output row `i` is the mean of input rows `groups[i]` (zero when empty).
    pub fn mean_rows(&mut self, a: Var, groups: &Groups) -> Result<Var> {
        self.reduce_rows(a, groups, true)
    }

    /// Normalizes each row to zero mean and unit variance, then applies a
    /// learned `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "layer_norm")?;
        for p in [gain, bias] {
            if self.shape(p) != [1, n] {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let nf = T::lit(n as f64);
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = src.row(i);
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let is = T::one() / (var + self.ln_eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::from_rows(m, n, out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Mean over rows of `-log softmax(logits)[label]`. `labels` must be one-hot.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &Tensor<T>) -> Result<Var> {
        if self.shape(logits) != labels.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                self.shape(logits),
                labels.shape(),
            ));
        }
        let mut classes = Vec::with_capacity(labels.rows());
        for i in 0..labels.rows() {
            let row = labels.row(i);
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidArgument(format!(
                    "label row {i} is not one-hot"
                )));
            }
            classes.push(row.iter().position(|&v| v == T::one()).unwrap());
        }
        self.softmax_cross_entropy_classes(logits, &classes)
    }

    /// Same as [`Tape::softmax_cross_entropy`] with labels given as class indices.
    pub fn softmax_cross_entropy_classes(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.matrix(logits, "softmax_cross_entropy")?;
        if labels.len() != b || b == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                self.shape(logits),
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidId {
                kind: "class",
                id: bad,
                size: c,
            });
        }
        let z = self.value(logits);
        let mut probs = Tensor::zeros(&[b, c]);
        let mut total = T::zero();
        for i in 0..b {
            let row = z.row(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            total = total + (log_sum - (row[labels[i]] - max));
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - max).exp() / sum;
            }
        }
        let loss = Tensor::scalar(total / T::lit(b as f64));
        self.push(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    /// Sum of all elements as a `1×1` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum_all", out, Op::SumAll(a))
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1, 1]));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, val(*b));
                    let gb = matmul_tn(val(*a), &g);
                    Self::accumulate(&mut grads, *a, ga);
                    Self::accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    Self::accumulate(&mut grads, *a, g.clone());
                    Self::accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(*b), |x, y| x * y);
                    let gb = g.zip_map(val(*a), |x, y| x * y);
                    Self::accumulate(&mut grads, *a, ga);
                    Self::accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut gr = Tensor::zeros(&[1, n]);
                    for i in 0..g.rows() {
                        for (o, &x) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o = *o + x;
                        }
                    }
                    Self::accumulate(&mut grads, *a, g.clone());
                    Self::accumulate(&mut grads, *row, gr);
                }
                Op::AddScalar(a) | Op::SumAll(a) => {
                    let ga = if matches!(node.op, Op::SumAll(_)) {
                        Tensor::filled(val(*a).shape(), g.data()[0])
                    } else {
                        g.clone()
                    };
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for i in 0..g.rows() {
                            data.extend_from_slice(&g.row(i)[start..start + w]);
                        }
                        start += w;
                        let gp = Tensor::new(val(p).shape().to_vec(), data)?;
                        Self::accumulate(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = val(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    let w = g.cols();
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&node.value, |x, y| if y > T::zero() { x } else { T::zero() });
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, s| x * s * (T::one() - s));
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, t| x * (T::one() - t * t));
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Tensor::zeros(val(*a).shape());
                    for (r, &i) in index.iter().enumerate() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::SumRows { x, groups, mean } => {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    for (i, grp) in groups.iter().enumerate() {
                        let scale = if *mean && grp.len() > 1 {
                            T::one() / T::lit(grp.len() as f64)
                        } else {
                            T::one()
                        };
                        for &k in grp {
                            for (o, &v) in gx.row_mut(k).iter_mut().zip(g.row(i)) {
                                *o = *o + v * scale;
                            }
                        }
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (m, n) = (g.rows(), g.cols());
                    let gv = val(*gain).data();
                    let nf = T::lit(n as f64);
                    let mut gx = Tensor::zeros(&[m, n]);
                    let mut ggain = Tensor::zeros(&[1, n]);
                    let mut gbias = Tensor::zeros(&[1, n]);
                    for i in 0..m {
                        let gr = g.row(i);
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xh[j];
                            ggain.data_mut()[j] = ggain.data()[j] + gr[j] * xh[j];
                            gbias.data_mut()[j] = gbias.data()[j] + gr[j];
                        }
                        let scale = inv_std[i] / nf;
                        let out = gx.row_mut(i);
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            out[j] = scale * (nf * d - sum_d - xh[j] * sum_dx);
                        }
                    }
                    Self::accumulate(&mut grads, *x, gx);
                    Self::accumulate(&mut grads, *gain, ggain);
                    Self::accumulate(&mut grads, *bias, gbias);
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    labels,
                } => {
                    let b = T::lit(labels.len() as f64);
                    let scale = g.data()[0] / b;
                    let mut gl = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        let row = gl.row_mut(i);
                        row[l] = row[l] - T::one();
                        row.iter_mut().for_each(|v| *v = *v * scale);
                    }
                    Self::accumulate(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter of `store`; unreached parameters get zeros.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = (0..store.len())
            .map(|i| Tensor::zeros(store.tensor(i).shape()))
            .collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.grad(v) {
                out[id].add_assign(g);
            }
        }
        out
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
