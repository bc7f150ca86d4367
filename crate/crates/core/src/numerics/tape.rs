//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse creation order, which is a reverse
//! topological order because a node can only refer to earlier nodes.
//! Gradients from fan-out are summed.

use std::collections::HashMap;
use std::sync::Arc;

use super::ops::{self, LayerNormCache};
use super::params::{ParamGrads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Result, SomoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Square matrix of small integer bucket indices shared between tape ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketMatrix {
    pub size: usize,
    pub index: Vec<usize>,
}

impl BucketMatrix {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.index[i * self.size + j]
    }

    pub fn max_bucket(&self) -> usize {
        self.index.iter().copied().max().unwrap_or(0)
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        cache: LayerNormCache,
    },
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherBucket {
        table: Var,
        buckets: Arc<BucketMatrix>,
        by_column: bool,
    },
    BucketSum {
        weights: Var,
        buckets: Arc<BucketMatrix>,
    },
    SumSquares(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            nodes: Vec::new(),
            params: Some(params),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self
            .params
            .expect("Tape::param called on a tape without a parameter store");
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::MatMulNt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Sub(a, b), ng))
    }

    /// Adds a length-`m` bias to every row of an `n×m` value.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let mut y = self.value(x).clone();
        ops::add_row_bias(&mut y, self.value(bias))?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(y, Op::AddBias(x, bias), ng))
    }

    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, bias)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let ng = self.ng(x);
        self.push(y, Op::Scale(x, factor), ng)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let y = self.value(x).zip_map(&c, |a, b| a * b)?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::MulConst(x, c), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = ops::tanh(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::Tanh(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = ops::leaky_relu(self.value(x), slope);
        let ng = self.ng(x);
        self.push(y, Op::LeakyRelu(x, slope), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::Relu(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_rows(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::SoftmaxRows(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (y, cache) =
            ops::layer_norm_cached(self.value(x), self.value(gain), self.value(shift), eps)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(shift);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                shift,
                cache,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::Reshape(x), ng))
    }

    /// Rows `start..start+len` of a 2-D value.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if src.shape().len() != 2 || len == 0 || start + len > src.rows() {
            return Err(SomoError::dim("slice_rows", src.shape(), &[start, len]));
        }
        let c = src.cols();
        let y = Tensor::new(
            vec![len, c],
            src.data()[start * c..(start + len) * c].to_vec(),
        )?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::SliceRows { x, start }, ng))
    }

    /// Columns `start..start+len` of a 2-D value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if src.shape().len() != 2 || len == 0 || start + len > src.cols() {
            return Err(SomoError::dim("slice_cols", src.shape(), &[start, len]));
        }
        let n = src.rows();
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let y = Tensor::new(vec![n, len], data)?;
        let ng = self.ng(x);
        Ok(self.push(y, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| SomoError::Input("concat_rows of nothing".into()))?;
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != c {
                return Err(SomoError::dim("concat_rows", self.shape(first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let y = Tensor::new(vec![rows, c], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(y, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| SomoError::Input("concat_cols of nothing".into()))?;
        let n = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != n {
                return Err(SomoError::dim("concat_cols", self.shape(first), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let y = Tensor::new(vec![n, total], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(y, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// `out[i][j] = table[i][b(i,j)]`, or `table[j][b(i,j)]` when `by_column`.
    /// `table` is `L×K` for an `L×L` bucket matrix with entries below `K`.
    pub fn gather_bucket(
        &mut self,
        table: Var,
        buckets: &Arc<BucketMatrix>,
        by_column: bool,
    ) -> Result<Var> {
        let t = self.value(table);
        let l = buckets.size;
        if t.shape().len() != 2 || t.rows() != l || buckets.max_bucket() >= t.cols() {
            return Err(SomoError::dim("gather_bucket", t.shape(), &[l, l]));
        }
        let mut y = Tensor::zeros(&[l, l]);
        {
            let out = y.data_mut();
            for i in 0..l {
                for j in 0..l {
                    let src = if by_column { j } else { i };
                    out[i * l + j] = t.row(src)[buckets.get(i, j)];
                }
            }
        }
        let ng = self.ng(table);
        Ok(self.push(
            y,
            Op::GatherBucket {
                table,
                buckets: Arc::clone(buckets),
                by_column,
            },
            ng,
        ))
    }

    /// `out[i][k] = Σ_{j : b(i,j) = k} weights[i][j]` for `k < num_buckets`.
    pub fn bucket_sum(
        &mut self,
        weights: Var,
        buckets: &Arc<BucketMatrix>,
        num_buckets: usize,
    ) -> Result<Var> {
        let w = self.value(weights);
        let l = buckets.size;
        if w.shape() != [l, l] || buckets.max_bucket() >= num_buckets {
            return Err(SomoError::dim("bucket_sum", w.shape(), &[l, l]));
        }
        let mut y = Tensor::zeros(&[l, num_buckets]);
        {
            let out = y.data_mut();
            for i in 0..l {
                for j in 0..l {
                    out[i * num_buckets + buckets.get(i, j)] += w.data()[i * l + j];
                }
            }
        }
        let ng = self.ng(weights);
        Ok(self.push(
            y,
            Op::BucketSum {
                weights,
                buckets: Arc::clone(buckets),
            },
            ng,
        ))
    }

    /// Sum of squared entries, as a one-element value.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), ng)
    }

    /// Gradients of a one-element `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(SomoError::dim("backward", self.shape(root), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.iter().map(|(&k, &v)| (k, v)).collect(),
        })
    }

    /// Gradient buffer of `v`, zero-initialized on first use; `None` when
    /// `v` needs no gradient.
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v))))
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                // y = a·b: da = g·bᵀ, db = aᵀ·g
                if self.ng(*a) {
                    acc(*a, ops::matmul_nt(g, self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, ops::matmul_tn(self.value(*a), g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a·bᵀ: da = g·b, db = gᵀ·a
                if self.ng(*a) {
                    acc(*a, ops::matmul(g, self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, ops::matmul_tn(g, self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                if self.ng(*bias) {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    let shape = self.shape(*bias).to_vec();
                    acc(*bias, Tensor::new(shape, db)?);
                }
            }
            Op::Scale(x, f) => acc(*x, g.map(|v| v * f)),
            Op::MulConst(x, c) => acc(*x, g.zip_map(c, |a, b| a * b)?),
            Op::Tanh(x) => acc(*x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))?),
            Op::LeakyRelu(x, slope) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| if xv >= 0.0 { gv } else { gv * slope })?;
                acc(*x, dx);
            }
            Op::Relu(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                acc(*x, dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = g.clone();
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(y).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                cache,
            } => {
                let gain_v = self.value(*gain).data();
                let (n, m) = (g.rows(), g.cols());
                if self.ng(*gain) || self.ng(*shift) {
                    let mut dgain = vec![0.0; m];
                    let mut dshift = vec![0.0; m];
                    for i in 0..n {
                        let xh = cache.normalized.row(i);
                        for j in 0..m {
                            dgain[j] += g.row(i)[j] * xh[j];
                            dshift[j] += g.row(i)[j];
                        }
                    }
                    acc(*gain, Tensor::new(self.shape(*gain).to_vec(), dgain)?);
                    acc(*shift, Tensor::new(self.shape(*shift).to_vec(), dshift)?);
                }
                if self.ng(*x) {
                    let mut dx = Tensor::zeros(g.shape());
                    for i in 0..n {
                        let xh = cache.normalized.row(i);
                        let gh: Vec<f64> = g.row(i).iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let mean_g = gh.iter().sum::<f64>() / m as f64;
                        let mean_gx =
                            gh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        let r = cache.inv_std[i];
                        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                            *d = r * (gh[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x))?),
            Op::SliceRows { x, start } => {
                // accumulate straight into the source gradient; slices of one
                // tensor are frequent and mostly small
                if let Some(dx) = self.grad_slot(grads, *x) {
                    let c = g.cols();
                    for (d, v) in dx.data_mut()[start * c..start * c + g.len()].iter_mut().zip(g.data()) {
                        *d += v;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    let len = g.cols();
                    for i in 0..g.rows() {
                        for (d, v) in dx.row_mut(i)[*start..start + len].iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let piece = g.data()[offset * c..(offset + rows) * c].to_vec();
                    offset += rows;
                    if self.ng(p) {
                        acc(p, Tensor::new(vec![rows, c], piece)?);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.ng(p) {
                        let mut piece = Vec::with_capacity(g.rows() * cols);
                        for i in 0..g.rows() {
                            piece.extend_from_slice(&g.row(i)[offset..offset + cols]);
                        }
                        acc(p, Tensor::new(vec![g.rows(), cols], piece)?);
                    }
                    offset += cols;
                }
            }
            Op::GatherBucket {
                table,
                buckets,
                by_column,
            } => {
                let mut dt = Tensor::zeros(self.shape(*table));
                let k = dt.cols();
                let l = buckets.size;
                let d = dt.data_mut();
                for i in 0..l {
                    for j in 0..l {
                        let src = if *by_column { j } else { i };
                        d[src * k + buckets.get(i, j)] += g.data()[i * l + j];
                    }
                }
                acc(*table, dt);
            }
            Op::BucketSum { weights, buckets } => {
                let l = buckets.size;
                let k = g.cols();
                let mut dw = Tensor::zeros(&[l, l]);
                let d = dw.data_mut();
                for i in 0..l {
                    for j in 0..l {
                        d[i * l + j] = g.data()[i * k + buckets.get(i, j)];
                    }
                }
                acc(*weights, dw);
            }
            Op::SumSquares(x) => {
                let gv = g.data()[0];
                acc(*x, self.value(*x).map(|v| 2.0 * v * gv));
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }

    pub fn into_param_grads(mut self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (id, var) in &self.param_vars {
            out.grads[id.0] = self.grads[var.0].take();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_gradients_add() {
        // f(x) = Σ (x + x)² = 4 Σ x²  → df/dx = 8x
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum_squares(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, x).data(), &[8.0, -24.0]);
    }

    #[test]
    fn unused_inputs_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let unused = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.sum_squares(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused).data(), &[0.0; 3]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::identity(2));
        let x = tape.input(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let y = tape.matmul(x, c).unwrap();
        let s = tape.sum_squares(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(&tape, x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn params_are_deduplicated() {
        let mut store = ParamStore::new();
        let id = store.add("w", super::super::ParamGroup::Head, Tensor::scalar(3.0));
        let mut tape = Tape::with_params(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
        let s = tape.sum_squares(a);
        let g = tape.backward(s).unwrap().into_param_grads(&store);
        assert_eq!(g.get(id).unwrap().data(), &[6.0]);
    }
}
