use std::rc::Rc;

use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_COEF: f64 = 0.044715;

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddBias(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Transpose(Var),
    Reshape(Var),
    Slice {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    AbsCosine {
        a: Var,
        b: Var,
        dot: S,
        na: S,
        nb: S,
        clamped: bool,
        eps: S,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<S>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid reverse topological order for [`Graph::backward`].
#[derive(Debug)]
pub struct Graph<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = S::lit(0.5);
    half * x * (S::one() + (c * (x + S::lit(GELU_COEF) * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = S::lit(GELU_COEF);
    let half = S::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::lit(3.0) * k * x * x)
}

fn softplus<S: Scalar>(x: S) -> S {
    // log(1 + e^x) without overflow
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_row<S: Scalar>(row: &[S], mask: Option<&[bool]>, out: &mut [S]) {
    let keep = |j: usize| mask.is_none_or(|m| !m[j]);
    let mut max = S::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if keep(j) && x > max {
            max = x;
        }
    }
    let mut total = S::zero();
    for (j, (&x, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        *o = if keep(j) { (x - max).exp() } else { S::zero() };
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor. `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient matches node shape")
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- operations -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let out = ta.matmul(tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        self.value(a).zip_map(self.value(b), name, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let tb = self.value(bias);
        if tb.numel() != c {
            return Err(dim_err("add_bias", self.value(x).shape(), tb.shape()));
        }
        let b = tb.data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = out[i * c + j] + b[j];
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax along `axis` of a 1-D or 2-D tensor.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.value(x).shape().len();
        if axis >= rank || rank > 2 {
            return Err(Error::Contract(format!(
                "softmax axis {axis} invalid for shape {:?}",
                self.value(x).shape()
            )));
        }
        if axis + 1 == rank {
            return self.softmax(x);
        }
        let t = self.transpose(x)?;
        let s = self.softmax(t)?;
        self.transpose(s)
    }

    /// Row softmax in which columns flagged `true` in `mask` get probability
    /// exactly zero. At least one column must stay unmasked.
    pub fn softmax_masked(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var> {
        let (_, c) = self.value(x).dims2()?;
        if mask.len() != c {
            return Err(dim_err("softmax_masked", self.value(x).shape(), &[mask.len()]));
        }
        if mask.iter().all(|&m| m) {
            return Err(Error::Contract("softmax mask hides every column".into()));
        }
        self.softmax_impl(x, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            softmax_row(&src[i * c..(i + 1) * c], mask.as_deref(), &mut out[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Per-row normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(dim_err("layernorm", self.value(x).shape(), self.value(gain).shape()));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let n = S::from_usize(c).unwrap();
        let mut xhat = vec![S::zero(); r * c];
        let mut inv_std = vec![S::zero(); r];
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.reshape(x, &[n]).expect("flatten preserves element count")
    }

    /// Sub-block `[r0, r0+rows) × [c0, c0+cols)` of a 2-D tensor.
    pub fn slice(&mut self, x: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if t.shape().len() != 2 || rows == 0 || cols == 0 || r0 + rows > r || c0 + cols > c {
            return Err(dim_err("slice", t.shape(), &[r0, rows, c0, cols]));
        }
        let src = t.data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            out.extend_from_slice(&src[i * c + c0..i * c + c0 + cols]);
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, r0, c0 }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, r0: usize, rows: usize) -> Result<Var> {
        let (_, c) = self.value(x).dims2()?;
        self.slice(x, r0, rows, 0, c)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, c) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, pc) = t.dims2()?;
            if pc != c || t.shape().len() != 2 {
                return Err(dim_err("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (pr, pc) = t.dims2()?;
            if pr != r || t.shape().len() != 2 {
                return Err(dim_err("concat_cols", self.value(*first).shape(), t.shape()));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut out = vec![S::zero(); r * c];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * c + off..i * c + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::new(vec![r, c], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Data(format!("row id {bad} out of range for table with {r} rows")));
        }
        let src = t.data();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![ids.len(), c], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<S>() / S::from_usize(t.numel()).unwrap();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Dot product of two equally shaped tensors, as a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// `|a·b| / max(‖a‖₂‖b‖₂, eps)` over the flattened operands.
    ///
    /// At `a·b == 0` the absolute value uses subgradient 0.
    pub fn abs_cosine(&mut self, a: Var, b: Var, eps: S) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() {
            return Err(dim_err("abs_cosine", ta.shape(), tb.shape()));
        }
        let dot = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum::<S>();
        let na = ta.data().iter().map(|&x| x * x).sum::<S>().sqrt();
        let nb = tb.data().iter().map(|&x| x * x).sum::<S>().sqrt();
        let prod = na * nb;
        let clamped = !(prod > eps);
        let denom = if clamped { eps } else { prod };
        let value = dot.abs() / denom;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::scalar(value),
            Op::AbsCosine {
                a,
                b,
                dot,
                na,
                nb,
                clamped,
                eps,
            },
            rg,
        ))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, k) = t.dims2()?;
        if labels.len() != b {
            return Err(dim_err("cross_entropy", t.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let src = t.data();
        let mut probs = vec![S::zero(); b * k];
        let mut total = S::zero();
        for i in 0..b {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<S>().ln();
            total = total + (lse - row[labels[i]]);
            softmax_row(row, None, &mut probs[i * k..(i + 1) * k]);
        }
        let loss = total / S::from_usize(b).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over batch and classes of binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let t = self.value(logits);
        if t.shape() != targets.shape() {
            return Err(dim_err("bce_with_logits", t.shape(), targets.shape()));
        }
        if targets.data().iter().any(|&y| y < S::zero() || y > S::one()) {
            return Err(Error::Data("BCE targets must lie in [0, 1]".into()));
        }
        let total = t
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| softplus(z) - z * y)
            .sum::<S>();
        let loss = total / S::from_usize(t.numel()).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Back-propagates from a scalar node, accumulating into every reached
    /// node's gradient. Calling it twice without [`Graph::zero_grad`] sums.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (slot, g) in self.grads.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a = *a + d),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        // Accumulate a contribution into input `v` if it needs a gradient.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                acc(*a, &mut |ga| matmul_bt_into(g, val(*b), ga, m, n, k));
                acc(*b, &mut |gb| matmul_at_into(val(*a), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x = *x - d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * vb[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] = gb[i] + g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, k) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d * *k));
            }
            Op::AddBias(x, bias) => {
                let c = val(*bias).len();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
                acc(*bias, &mut |gb| {
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % c] = gb[i % c] + d;
                    }
                });
            }
            Op::Gelu(a) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * gelu_grad(va[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * (S::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = *node.value.shape().last().unwrap();
                acc(*x, &mut |gx| {
                    for (yr, (gr, gxr)) in y.chunks(c).zip(g.chunks(c).zip(gx.chunks_mut(c))) {
                        let dot = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum::<S>();
                        for j in 0..c {
                            gxr[j] = gxr[j] + yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = *node.value.shape().last().unwrap();
                let n = S::from_usize(c).unwrap();
                let gv = val(*gain);
                acc(*x, &mut |gx| {
                    for (i, &is) in inv_std.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * hr[j];
                        }
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            gx[i * c + j] = gx[i * c + j] + is * (dh - s1 / n - hr[j] * s2 / n);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (i, &d) in g.iter().enumerate() {
                        gg[i % c] = gg[i % c] + d * xhat[i];
                    }
                });
                acc(*bias, &mut |gb| {
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % c] = gb[i % c] + d;
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                // output is r×c, input is c×r
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] = gx[j * r + i] + g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, &d)| *a = *a + d));
            }
            Op::Slice { x, r0, c0 } => {
                let (rows, cols) = (node.value.shape()[0], node.value.shape()[1]);
                let c = shape(*x)[1];
                acc(*x, &mut |gx| {
                    for i in 0..rows {
                        let dst = &mut gx[(r0 + i) * c + c0..(r0 + i) * c + c0 + cols];
                        dst.iter_mut()
                            .zip(&g[i * cols..(i + 1) * cols])
                            .for_each(|(a, &d)| *a = *a + d);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    let seg = &g[off..off + n];
                    acc(p, &mut |gp| gp.iter_mut().zip(seg).for_each(|(a, &d)| *a = *a + d));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let c = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let (r, w) = (shape(p)[0], shape(p)[1]);
                    acc(p, &mut |gp| {
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] = gp[i * w + j] + g[i * c + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Gather { table, ids } => {
                let c = shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            gt[id * c + j] = gt[id * c + j] + g[i * c + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a = *a + g[0]));
            }
            Op::Mean(x) => {
                let d = g[0] / S::from_usize(self.nodes[x.0].value.numel()).unwrap();
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a = *a + d));
            }
            Op::AbsCosine {
                a,
                b,
                dot,
                na,
                nb,
                clamped,
                eps,
            } => {
                let sign = if *dot > S::zero() {
                    S::one()
                } else if *dot < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                };
                let (va, vb) = (val(*a), val(*b));
                let up = g[0] * sign;
                if *clamped {
                    // d/da |a·b|/eps = sign·b/eps
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] = ga[i] + up * vb[i] / *eps;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for i in 0..gb.len() {
                            gb[i] = gb[i] + up * va[i] / *eps;
                        }
                    });
                } else {
                    let prod = *na * *nb;
                    let ca = *dot / (*na * *na);
                    let cb = *dot / (*nb * *nb);
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] = ga[i] + up * (vb[i] - ca * va[i]) / prod;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for i in 0..gb.len() {
                            gb[i] = gb[i] + up * (va[i] - cb * vb[i]) / prod;
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / S::from_usize(b).unwrap();
                acc(*logits, &mut |gl| {
                    for i in 0..b {
                        for j in 0..k {
                            let onehot = if j == labels[i] { S::one() } else { S::zero() };
                            gl[i * k + j] = gl[i * k + j] + scale * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::BceLogits { logits, targets } => {
                let z = val(*logits);
                let scale = g[0] / S::from_usize(z.len()).unwrap();
                acc(*logits, &mut |gl| {
                    for i in 0..gl.len() {
                        gl[i] = gl[i] + scale * (sigmoid(z[i]) - targets[i]);
                    }
                });
            }
        }
    }
}
