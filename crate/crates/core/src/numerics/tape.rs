//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! information to push gradients back to its inputs. Nodes can only refer to
//! earlier nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};

use super::params::ModelParams;
use super::tensor::{
    axis_extents, gelu_grad_scalar, gelu_scalar, layer_norm_kernel, matmul_grad_a, matmul_grad_b,
    matmul_kernel, softmax_kernel, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Softmax(Var, usize),
    CausalMask(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Gather { table: Var, rows: Vec<usize> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    WeightedNll { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64>, total: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(Var, String)>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a named parameter as a leaf. Frozen parameters enter as constants,
    /// so no gradient is ever computed for them.
    pub fn param(&mut self, params: &ModelParams, name: &str) -> Result<Var> {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
        let mut value = p.tensor.clone();
        value.grad = None;
        value.requires_grad = false;
        let v = self.push(value, Op::Leaf, !p.frozen);
        self.bindings.push((v, name.to_string()));
        Ok(v)
    }

    /// Parameter leaves bound on this tape, in binding order.
    pub fn bindings(&self) -> &[(Var, String)] {
        &self.bindings
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// Adds a bias vector to every row (broadcast over the last axis).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("rank >= 1");
        if self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} out of range for shape {shape:?}")));
        }
        let out = softmax_kernel(self.value(x).data(), &shape, axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x, axis), rg))
    }

    /// Sets every entry strictly above the diagonal of a square matrix to -inf.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if m != n {
            return Err(Error::shape(format!("causal mask needs a square matrix, got {m}x{n}")));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for j in i + 1..n {
                data[i * n + j] = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::CausalMask(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().expect("rank >= 1");
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape(format!(
                "layer norm affine params {:?}/{:?} do not match last axis of {:?}",
                self.shape(gamma),
                self.shape(beta),
                self.shape(x)
            )));
        }
        let (out, stats) = layer_norm_kernel(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::LayerNorm { x, gamma, beta, xhat: stats.xhat, rstd: stats.rstd };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(table).dims2()?;
        if rows.is_empty() {
            return Err(Error::shape("gather needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape(format!("row {bad} out of range for table with {m} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let rg = self.rg(table);
        let op = Op::Gather { table, rows: rows.to_vec() };
        Ok(self.push(Tensor::new(vec![rows.len(), n], out)?, op, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start >= end || end > n {
            return Err(Error::shape(format!("column slice {start}..{end} invalid for {m}x{n}")));
        }
        let src = self.value(x).data();
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, w], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start >= end || end > m {
            return Err(Error::shape(format!("row slice {start}..{end} invalid for {m}x{n}")));
        }
        let out = self.value(x).data()[start * n..end * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![end - start, n], out)?, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pm != m {
                return Err(Error::shape(format!("concat_cols row mismatch: {pm} vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (_, n) = self.value(first).dims2()?;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pn != n {
                return Err(Error::shape(format!("concat_rows column mismatch: {pn} vs {n}")));
            }
            rows += pm;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, n], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ w_l · −log softmax(logits_l)[target_l] / Σ w_l`.
    ///
    /// Row `l` of `logits` is scored against `targets[l]`. Rows with zero
    /// weight contribute nothing to the value or to the gradient.
    pub fn weighted_nll(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (rows, vocab) = self.value(logits).dims2()?;
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::shape(format!(
                "weighted_nll: {rows} logit rows but {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and nonnegative, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("all loss weights are zero (degenerate sample)"));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; rows * vocab];
        let mut loss = 0.0;
        for l in 0..rows {
            if weights[l] == 0.0 {
                continue;
            }
            let t = targets[l];
            if t >= vocab {
                return Err(Error::shape(format!("target id {t} out of range for vocabulary {vocab}")));
            }
            let row = &x[l * vocab..(l + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += weights[l] * (lse - row[t]);
            for (p, v) in probs[l * vocab..(l + 1) * vocab].iter_mut().zip(row) {
                *p = (v - max).exp() / z;
            }
        }
        let rg = self.rg(logits);
        let op = Op::WeightedNll {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
            total,
        };
        Ok(self.push(Tensor::scalar(loss / total), op, rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// when a node feeds several consumers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matrix");
                let n = out.shape()[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |da| matmul_grad_a(da, g, bv, m, k, n));
                self.accumulate(grads, *b, |db| matmul_grad_b(db, av, g, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| add_into(d, g));
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |d| add_into(d, g));
                let n = self.value(*bias).len();
                self.accumulate(grads, *bias, |d| {
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv * c;
                    }
                });
            }
            Op::Transpose(x) => {
                let (m, n) = self.value(*x).dims2().expect("matrix");
                self.accumulate(grads, *x, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let y = out.data();
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                d[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CausalMask(x) => {
                let (m, n) = out.dims2().expect("matrix");
                self.accumulate(grads, *x, |d| {
                    for i in 0..m {
                        for j in 0..=i.min(n - 1) {
                            d[i * n + j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma).data();
                let n = gam.len();
                let rows = xhat.len() / n;
                self.accumulate(grads, *x, |d| {
                    for r in 0..rows {
                        let range = r * n..(r + 1) * n;
                        let gr = &g[range.clone()];
                        let hr = &xhat[range.clone()];
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            d[r * n + c] += rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |d| {
                    for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        d[i % n] += gv * h;
                    }
                });
                self.accumulate(grads, *beta, |d| {
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gelu_grad_scalar(xv[i]);
                    }
                });
            }
            Op::Gather { table, rows } => {
                let n = out.shape()[1];
                self.accumulate(grads, *table, |d| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut d[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (m, w) = out.dims2().expect("matrix");
                let n = self.value(*x).shape()[1];
                self.accumulate(grads, *x, |d| {
                    for i in 0..m {
                        add_into(&mut d[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let n = out.shape()[1];
                self.accumulate(grads, *x, |d| add_into(&mut d[start * n..start * n + g.len()], g));
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2().expect("matrix");
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    self.accumulate(grads, p, |d| {
                        for i in 0..m {
                            add_into(&mut d[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |d| {
                    for v in d.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::WeightedNll { logits, targets, weights, probs, total } => {
                let vocab = self.value(*logits).shape()[1];
                self.accumulate(grads, *logits, |d| {
                    for (l, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let c = g[0] * w / total;
                        for j in 0..vocab {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[l * vocab + j] += c * (probs[l * vocab + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}
