use std::borrow::Cow;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};

/// Logit assigned to masked attention positions.
pub const MASKED_LOGIT: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean attention mask, `true` meaning the query may attend to the key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self { rows, cols, allowed }
    }

    /// `mask[i][j] = j <= i`
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn row_allowed(&self, i: usize) -> usize {
        self.allowed[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&a| a)
            .count()
    }

    /// Additive bias: 0 where allowed, [`MASKED_LOGIT`] elsewhere. Fails if some
    /// query row has nothing to attend to.
    pub fn additive(&self) -> Result<Tensor> {
        if let Some(i) = (0..self.rows).find(|&i| self.row_allowed(i) == 0) {
            return Err(Error::contract(format!(
                "attention mask row {i} has no allowed positions"
            )));
        }
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASKED_LOGIT })
            .collect();
        Tensor::new(vec![self.rows, self.cols], data)
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Softmax {
        x: Var,
        outer: usize,
        size: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    /// Softmax cross-entropy over selected rows: `(row, target)` pairs, cached
    /// probabilities for each selected row, and the divisor of the mean.
    CrossEntropy {
        logits: Var,
        picks: Vec<(usize, usize)>,
        probs: Vec<f64>,
        denom: f64,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Parameters are borrowed from a [`ParamStore`] without copying; frozen
/// parameters enter the tape as constants and never receive gradient storage.
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::with_capacity(512),
            param_vars: vec![None; store.len()],
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Brings a stored parameter onto the tape; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let p = store.get(id);
        let v = self.push(Cow::Borrowed(&p.tensor), Op::Param, !p.frozen);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul_nt")?;
        let (n, k2) = self.mat_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_owned(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector to every last-axis slice of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).numel() != c || self.value(b).rank() != 1 {
            return Err(self.shape_err("add_row", x, b));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_owned(t, Op::AddRow(x, b), &[x, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_owned(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push_owned(t, Op::Scale(x, s), &[x])
    }

    /// Adds a constant (non-differentiable) tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::Shape {
                op: "add_const",
                lhs: self.shape(x).to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a + b)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_owned(t, Op::AddConst(x), &[x]))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                op: "softmax",
                index: axis,
                bound: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let size = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = src.to_vec();
        if inner == 1 {
            out.chunks_mut(size).for_each(kernels::softmax_slice);
        } else {
            let mut buf = vec![0.0; size];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * size * inner + i;
                    for a in 0..size {
                        buf[a] = src[base + a * inner];
                    }
                    kernels::softmax_slice(&mut buf);
                    for a in 0..size {
                        out[base + a * inner] = buf[a];
                    }
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push_owned(
            t,
            Op::Softmax {
                x,
                outer,
                size,
                inner,
            },
            &[x],
        ))
    }

    /// Standardizes each last-axis slice, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(gamma).numel() != c {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.value(beta).numel() != c {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let rows = self.value(x).rows();
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push_owned(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push_owned(t, Op::Gelu(x), &[x])
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat_dims(table, "embedding")?;
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push_owned(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::Index {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(vec![r, len], out)?;
        Ok(self.push_owned(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::Index {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::new(vec![len, c], data)?;
        Ok(self.push_owned(t, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (r, _) = self.mat_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.mat_dims(p, "concat_cols")?;
            if pr != r {
                return Err(self.shape_err("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![r, total], out)?;
        Ok(self.push_owned(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let (_, c) = self.mat_dims(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.mat_dims(p, "concat_rows")?;
            if pc != c {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += pr;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, c], out)?;
        Ok(self.push_owned(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push_owned(t, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    fn cross_entropy_picks(
        &mut self,
        logits: Var,
        picks: Vec<(usize, usize)>,
        denom: f64,
        what: &str,
    ) -> Result<Var> {
        let t = self.value(logits);
        let v = t.cols();
        let mut probs = Vec::with_capacity(picks.len() * v);
        let mut total = 0.0;
        for &(row, target) in &picks {
            if target >= v {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: target,
                    bound: v,
                });
            }
            let z = t.row(row);
            let lse = kernels::log_sum_exp(z);
            total += lse - z[target];
            probs.extend(z.iter().map(|&zi| (zi - lse).exp()));
        }
        let loss = total / denom;
        if !loss.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(self.push_owned(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                picks,
                probs,
                denom,
            },
            &[logits],
        ))
    }

    /// Mean over the batch of `-log softmax(logits[i, len_i - 1])[targets[i][len_i - 1]]`
    /// for `logits[batch×seq×V]`. No other position contributes to the loss or its gradient.
    pub fn cross_entropy_last_token(
        &mut self,
        logits: Var,
        targets: &[Vec<usize>],
        lengths: &[usize],
    ) -> Result<Var> {
        let (b, s) = match *self.shape(logits) {
            [b, s, _] => (b, s),
            ref other => {
                return Err(Error::Shape {
                    op: "cross_entropy_last_token",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if targets.len() != b || lengths.len() != b {
            return Err(Error::contract(format!(
                "cross_entropy_last_token: batch {b} but {} target rows and {} lengths",
                targets.len(),
                lengths.len()
            )));
        }
        let mut picks = Vec::with_capacity(b);
        for (i, (&len, row)) in lengths.iter().zip(targets).enumerate() {
            if len == 0 || len > s {
                return Err(Error::contract(format!(
                    "example {i}: length {len} outside 1..={s}"
                )));
            }
            let target = *row.get(len - 1).ok_or_else(|| {
                Error::contract(format!("example {i}: no target at position {}", len - 1))
            })?;
            picks.push((i * s + len - 1, target));
        }
        self.cross_entropy_picks(logits, picks, b as f64, "cross_entropy_last_token")
    }

    /// Mean cross-entropy over the rows of `logits[N×V]`; `None` targets are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, _) = self.mat_dims(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::contract(format!(
                "cross_entropy: {n} rows but {} targets",
                targets.len()
            )));
        }
        let picks: Vec<_> = targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
            .collect();
        if picks.is_empty() {
            return Err(Error::Empty("cross_entropy targets"));
        }
        let denom = picks.len() as f64;
        self.cross_entropy_picks(logits, picks, denom, "cross_entropy")
    }

    /// Reverse pass from a scalar. Only nodes that require grad get storage.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::new(i), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).cols();
                self.accumulate(grads, *a, |ga| {
                    kernels::gemm_nt(g, self.value(*b).data(), ga, m, n, k)
                });
                self.accumulate(grads, *b, |gb| {
                    kernels::gemm_tn(self.value(*a).data(), g, gb, k, m, n)
                });
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).shape()[0];
                self.accumulate(grads, *a, |ga| {
                    kernels::gemm_nn(g, self.value(*b).data(), ga, m, n, k)
                });
                self.accumulate(grads, *b, |gb| {
                    kernels::gemm_tn(g, self.value(*a).data(), gb, n, m, k)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks(gb.len()) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gi), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, |gx| {
                    for (o, gi) in gx.iter_mut().zip(g) {
                        *o += gi * s;
                    }
                });
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
            }
            Op::Softmax {
                x,
                outer,
                size,
                inner,
            } => {
                let y = node.value.data();
                let (outer, size, inner) = (*outer, *size, *inner);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * size * inner + k;
                            let mut dot = 0.0;
                            for a in 0..size {
                                let idx = base + a * inner;
                                dot += g[idx] * y[idx];
                            }
                            for a in 0..size {
                                let idx = base + a * inner;
                                gx[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *x, |gx| {
                    let inv_c = 1.0 / c as f64;
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d *= inv_c;
                        mean_dh *= inv_c;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            gx[r * c + j] += rs * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for gr in g.chunks(c) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gi * kernels::gelu_grad(v);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.accumulate(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = node.value.cols();
                self.accumulate(grads, *x, |gx| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + len], gr);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                self.accumulate(grads, *x, |gx| {
                    add_into(&mut gx[start * c..start * c + g.len()], g)
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |gp| {
                        for (r, gr) in gp.chunks_mut(w).enumerate() {
                            add_into(gr, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += s));
            }
            Op::CrossEntropy {
                logits,
                picks,
                probs,
                denom,
            } => {
                let v = self.value(*logits).cols();
                let scale = g[0] / denom;
                self.accumulate(grads, *logits, |gl| {
                    for (k, &(row, target)) in picks.iter().enumerate() {
                        let p = &probs[k * v..(k + 1) * v];
                        let dst = &mut gl[row * v..(row + 1) * v];
                        for j in 0..v {
                            dst[j] += scale * p[j];
                        }
                        dst[target] -= scale;
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(slot);
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a recorded value; `None` when it does not require grad.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Gradients of every trainable parameter touched by the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}
