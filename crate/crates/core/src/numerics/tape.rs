//! Operation tape for reverse-mode differentiation over [`Matrix`] values.
//!
//! Every differentiable operation appends one node holding its output and
//! whatever it needs for the backward pass. [`Tape::backward`] walks the nodes
//! in exact reverse order of recording and returns parameter gradients.

use super::matrix::dot;
use super::{Matrix, ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Floor inside the square root of the pooled standard deviation.
pub const STAT_POOL_EPS: f64 = 1e-9;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    RowDot {
        a: Var,
        b: Var,
        scale: f64,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    StatPool {
        x: Var,
        valid: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::RowDot { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::SoftmaxRows(a) | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(parts) => parts.clone(),
            Op::SliceCols { x, .. } | Op::StatPool { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Matrix>,
    /// Whether any parameter lies upstream of this node.
    needs_grad: bool,
}

/// Records differentiable operations over parameters borrowed from a [`ParamStore`].
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            (None, _) => unreachable!("only parameter leaves borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf for a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds the `1 × cols` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::shape("add_row", am.shape(), rm.shape()));
        }
        let mut out = am.clone();
        let bias = rm.row(0);
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Op::Scale(a, s), out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Row-wise softmax. Columns whose `key_mask` entry is `false` get
    /// probability exactly zero; every row must keep at least one column.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(mask) = key_mask {
            if mask.len() != x.cols() {
                return Err(Error::shape("softmax_rows mask", x.shape(), (1, mask.len())));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::Invalid("softmax over an all-masked row".into()));
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| keep(j))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    o[j] = (v - max).exp();
                    total += o[j];
                }
            }
            o.iter_mut().for_each(|p| *p /= total);
        }
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    /// Per-row normalization to zero mean and unit variance followed by the
    /// affine map `gain ⊙ x̂ + bias`; `gain` and `bias` are `1 × cols`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = x.cols();
        for v in [gain, bias] {
            if self.value(v).shape() != (1, cols) {
                return Err(Error::shape("layer_norm", x.shape(), self.value(v).shape()));
            }
        }
        let mut normalized = Matrix::zeros(x.rows(), cols);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            out,
        ))
    }

    /// `out[t] = (a[t] · b[t]) / √d_k`, a `T × 1` column.
    pub fn rowwise_scaled_dot(&mut self, a: Var, b: Var, d_k: f64) -> Result<Var> {
        if d_k.is_nan() || d_k <= 0.0 {
            return Err(Error::Config(format!("scale d_k must be positive, got {d_k}")));
        }
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(Error::shape("rowwise_scaled_dot", am.shape(), bm.shape()));
        }
        let scale = 1.0 / d_k.sqrt();
        let data = (0..am.rows()).map(|t| dot(am.row(t), bm.row(t)) * scale).collect();
        let out = Matrix::from_vec(am.rows(), 1, data)?;
        Ok(self.push(Op::RowDot { a, b, scale }, out))
    }

    /// Column-wise concatenation in the given order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_cols of an empty list".into()))?;
        let rows = self.value(*first).rows();
        let mut width = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), m.shape()));
            }
            width += m.cols();
        }
        let mut out = Matrix::zeros(rows, width);
        for r in 0..rows {
            let mut offset = 0;
            let o = out.row_mut(r);
            for &p in parts {
                let src = self.value(p).row(r);
                o[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        if start + width > x.cols() {
            return Err(Error::shape("slice_cols", x.shape(), (start, width)));
        }
        let mut out = Matrix::zeros(x.rows(), width);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + width]);
        }
        Ok(self.push(Op::SliceCols { x: a, start }, out))
    }

    /// Mean ⊕ population standard deviation over the valid rows, as a
    /// `1 × 2·cols` row. `STAT_POOL_EPS` is added inside the square root.
    pub fn stat_pool(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.len() != x.rows() {
                return Err(Error::shape("stat_pool mask", x.shape(), (m.len(), 1)));
            }
        }
        let valid: Vec<usize> = (0..x.rows()).filter(|&t| mask.is_none_or(|m| m[t])).collect();
        if valid.is_empty() {
            return Err(Error::Invalid("statistical pooling over zero valid frames".into()));
        }
        let (n, d) = (valid.len() as f64, x.cols());
        let mut out = Matrix::zeros(1, 2 * d);
        for &t in &valid {
            for (o, v) in out.row_mut(0)[..d].iter_mut().zip(x.row(t)) {
                *o += v;
            }
        }
        for j in 0..d {
            let mean = out.get(0, j) / n;
            out.set(0, j, mean);
            let var = valid.iter().map(|&t| (x.get(t, j) - mean).powi(2)).sum::<f64>() / n;
            out.set(0, d + j, (var + STAT_POOL_EPS).sqrt());
        }
        Ok(self.push(Op::StatPool { x: a, valid }, out))
    }

    /// `−log softmax(logits)[label]` for a `1 × K` logit row; returns `1 × 1`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(Error::shape("cross_entropy", z.shape(), (1, z.cols())));
        }
        if label >= z.cols() {
            return Err(Error::Invalid(format!(
                "label {label} out of range for {} classes",
                z.cols()
            )));
        }
        let probs = softmax(z.row(0));
        let max = z.row(0).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.row(0).iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z.get(0, label);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            Matrix::filled(1, 1, loss),
        ))
    }

    /// Sum of all entries as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Matrix::filled(1, 1, s))
    }

    /// Backpropagates from the scalar `loss` (seed gradient 1).
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::shape("backward (scalar loss required)", shape, (1, 1)));
        }
        self.backward_from(&[(loss, Matrix::filled(1, 1, 1.0))])
    }

    /// Backpropagates arbitrary seed gradients. With no seeds, or on an empty
    /// tape, nothing is visited and all parameter gradients are absent.
    pub fn backward_from(&self, seeds: &[(Var, Matrix)]) -> Result<ParamGrads> {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::shape("backward seed", self.shape(*v), g.shape()));
            }
            accumulate(&mut grads[v.0], g.clone());
            last = last.max(v.0 + 1);
        }
        let mut out = ParamGrads {
            grads: vec![None; self.params.len()],
        };
        for idx in (0..last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.backprop_node(idx, g, &mut grads, &mut out)?;
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: Matrix,
        grads: &mut [Option<Matrix>],
        out: &mut ParamGrads,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let out_value = || node.value.as_ref().expect("non-leaf nodes own their value");
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => accumulate(&mut out.grads[id.0], g),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.matmul_nt(self.value(*b))?);
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], self.value(*a).matmul_tn(&g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.matmul(self.value(*b))?);
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.matmul_tn(self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[b.0], g.clone());
                accumulate(&mut grads[a.0], g);
            }
            Op::AddRow(a, row) => {
                accumulate(&mut grads[row.0], g.col_sums());
                accumulate(&mut grads[a.0], g);
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s)),
            Op::Mul(a, b) => {
                let da = g.hadamard(self.value(*b))?;
                let db = g.hadamard(self.value(*a))?;
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g;
                for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::SoftmaxRows(a) => {
                let p = out_value();
                let mut d = g;
                for r in 0..p.rows() {
                    let pr = p.row(r);
                    let inner = dot(d.row(r), pr);
                    for (dv, &pv) in d.row_mut(r).iter_mut().zip(pr) {
                        *dv = pv * (*dv - inner);
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain).row(0);
                let cols = normalized.cols() as f64;
                let mut dgain = Matrix::zeros(1, normalized.cols());
                let dbias = g.col_sums();
                let mut dx = Matrix::zeros(normalized.rows(), normalized.cols());
                for (r, &is) in inv_std.iter().enumerate() {
                    let (gr, xh) = (g.row(r), normalized.row(r));
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..xh.len() {
                        dgain.data_mut()[j] += gr[j] * xh[j];
                        let dxh = gr[j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                        let dxh = gr[j] * gv[j];
                        *o = is / cols * (cols * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                accumulate(&mut grads[gain.0], dgain);
                accumulate(&mut grads[bias.0], dbias);
                accumulate(&mut grads[x.0], dx);
            }
            Op::RowDot { a, b, scale } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(am.rows(), am.cols());
                let mut db = Matrix::zeros(bm.rows(), bm.cols());
                for t in 0..am.rows() {
                    let gt = g.get(t, 0) * scale;
                    for (o, v) in da.row_mut(t).iter_mut().zip(bm.row(t)) {
                        *o = gt * v;
                    }
                    for (o, v) in db.row_mut(t).iter_mut().zip(am.row(t)) {
                        *o = gt * v;
                    }
                }
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    let mut d = Matrix::zeros(g.rows(), width);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + width]);
                    }
                    offset += width;
                    accumulate(&mut grads[p.0], d);
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.shape(*x);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[x.0], d);
            }
            Op::StatPool { x, valid } => {
                let xm = self.value(*x);
                let pooled = out_value();
                let d = xm.cols();
                let n = valid.len() as f64;
                let mut dx = Matrix::zeros(xm.rows(), d);
                for &t in valid {
                    for j in 0..d {
                        let (mean, std) = (pooled.get(0, j), pooled.get(0, d + j));
                        let v = g.get(0, j) / n + g.get(0, d + j) * (xm.get(t, j) - mean) / (n * std);
                        dx.set(t, j, v);
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let scale = g.get(0, 0);
                let mut d = Matrix::row_vector(probs);
                d.data_mut()[*label] -= 1.0;
                accumulate(&mut grads[logits.0], d.scale(scale));
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(&mut grads[a.0], Matrix::filled(rows, cols, g.get(0, 0)));
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches its node"),
        None => *slot = Some(g),
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
