//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and the backward sweep is a single reverse pass.
//! Parameters enter as borrowed leaves; nothing is copied on the way in.

use std::borrow::Cow;

use super::tensor::{dot, l2_norm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMulT { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LogSoftmax(Var),
    Softmax(Var),
    LogSumExp { x: Var, mask: Option<Var> },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Gather { x: Var, idx: Vec<usize> },
    L2Normalize(Var),
    RowDot(Var, Var),
    Mse(Var, Var),
    Contrastive { z: Var, labels: Vec<usize>, coef: Vec<f64>, positives: Vec<usize>, inv_tau: f64, probs: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    tracked: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` is untracked or unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, materialized as zeros when absent.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Recording context for one forward/backward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push(Cow::Owned(value), op, tracked)
    }

    /// Untracked leaf owning its value.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Untracked leaf borrowing its value.
    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Tracked leaf borrowing a parameter.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Tracked leaf owning its value.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Leaf holding a copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    /// `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [1, out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let [n, din] = self.shape(x);
        let [dout, win] = self.shape(w);
        assert_eq!(din, win, "affine: input width {din} vs weight width {win}");
        let mut out = vec![0.0; n * dout];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| {
                assert_eq!(self.shape(b), [1, dout], "affine: bias shape");
                self.value(b).data()
            });
            for r in 0..n {
                let xr = &xv[r * din..(r + 1) * din];
                let orow = &mut out[r * dout..(r + 1) * dout];
                for (o, slot) in orow.iter_mut().enumerate() {
                    let mut acc = dot(xr, &wv[o * din..(o + 1) * din]);
                    if let Some(bv) = bv {
                        acc += bv[o];
                    }
                    *slot = acc;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_owned(Tensor::new(n, dout, out), Op::Affine { x, w, b }, &inputs)
    }

    /// Supervised contrastive loss over the rows of `z`, used as given.
    ///
    /// With `sᵢⱼ = zᵢ·zⱼ/τ`, every anchor `i` that shares its label with at
    /// least one other row contributes
    /// `log Σ_{j≠i} exp(sᵢⱼ) − mean_{p∈P(i)} sᵢₚ`. Contributions are summed,
    /// or averaged over anchors when `mean` is set. Returns a scalar.
    pub fn contrastive(&mut self, z: Var, labels: &[usize], temperature: f64, mean: bool) -> Var {
        let [n, d] = self.shape(z);
        assert_eq!(labels.len(), n, "contrastive: {} labels for {n} rows", labels.len());
        assert!(temperature > 0.0, "contrastive: temperature must be positive");
        let inv_tau = 1.0 / temperature;
        let mut counts = std::collections::HashMap::new();
        labels.iter().for_each(|&l| *counts.entry(l).or_insert(0usize) += 1);
        let positives: Vec<usize> = labels.iter().map(|l| counts[l] - 1).collect();
        let anchors = positives.iter().filter(|&&p| p > 0).count();
        let scale = if mean && anchors > 0 { 1.0 / anchors as f64 } else { 1.0 };
        let coef: Vec<f64> = positives.iter().map(|&p| if p > 0 { scale } else { 0.0 }).collect();
        let zv = self.value(z).data();
        let mut probs = vec![0.0; n * n];
        let mut total = 0.0;
        for i in 0..n {
            if coef[i] == 0.0 {
                continue;
            }
            let zi = &zv[i * d..(i + 1) * d];
            let row = &mut probs[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            let mut pos = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let s = dot(zi, &zv[j * d..(j + 1) * d]) * inv_tau;
                row[j] = s;
                max = max.max(s);
                if labels[j] == labels[i] {
                    pos += s;
                }
            }
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j != i {
                    *r = (*r - max).exp();
                    sum += *r;
                }
            }
            row.iter_mut().for_each(|r| *r /= sum);
            total += coef[i] * (max + sum.ln() - pos / positives[i] as f64);
        }
        let op = Op::Contrastive { z, labels: labels.to_vec(), coef, positives, inv_tau, probs };
        self.push_owned(Tensor::scalar(total), op, &[z])
    }

    /// `a · bᵀ` with `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let [n, k] = self.shape(a);
        let [m, k2] = self.shape(b);
        assert_eq!(k, k2, "matmul_t: inner dims {k} vs {k2}");
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..m {
                out[i * m + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        self.push_owned(Tensor::new(n, m, out), Op::MatMulT { a, b }, &[a, b])
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let [r, c] = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push_owned(Tensor::new(r, c, data), op, &[a, b])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a).map(f);
        self.push_owned(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Smallest `|x|` fed to any tracked ReLU on the tape, `None` without
    /// ReLUs.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.nodes[a.0].value.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Concatenate along the column axis; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let [r, c] = self.shape(p);
                assert_eq!(r, rows, "concat_cols: row mismatch {r} vs {rows}");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push_owned(Tensor::new(rows, total, out), Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Concatenate along the row axis; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.shape(parts[0])[1];
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let [r, c] = self.shape(p);
            assert_eq!(c, cols, "concat_rows: column mismatch {c} vs {cols}");
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push_owned(Tensor::new(rows, cols, out), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * c);
        for row in x.chunks(c) {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        self.push_owned(Tensor::new(r, c, out), Op::LogSoftmax(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * c);
        for row in x.chunks(c) {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|v| (v - lse).exp()));
        }
        self.push_owned(Tensor::new(r, c, out), Op::Softmax(a), &[a])
    }

    /// Per-row log-sum-exp, `[r, c] → [r, 1]`.
    ///
    /// With a mask, only entries whose mask value is nonzero participate.
    /// Every row must keep at least one entry.
    pub fn log_sum_exp(&mut self, a: Var, mask: Option<Var>) -> Var {
        let [r, c] = self.shape(a);
        if let Some(m) = mask {
            self.same_shape(a, m, "log_sum_exp mask");
        }
        let x = self.value(a).data();
        let mv = mask.map(|m| self.value(m).data());
        let mut out = Vec::with_capacity(r);
        let mut scratch = Vec::with_capacity(c);
        for i in 0..r {
            scratch.clear();
            let row = &x[i * c..(i + 1) * c];
            match mv {
                Some(mv) => scratch.extend(
                    row.iter()
                        .zip(&mv[i * c..(i + 1) * c])
                        .filter(|(_, &keep)| keep != 0.0)
                        .map(|(&v, _)| v),
                ),
                None => scratch.extend_from_slice(row),
            }
            assert!(!scratch.is_empty(), "log_sum_exp: row {i} fully masked");
            out.push(log_sum_exp(&scratch));
        }
        self.push_owned(Tensor::column(out), Op::LogSumExp { x: a, mask }, &[a])
    }

    /// Row sums, `[r, c] → [r, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let [_, c] = self.shape(a);
        let out = self.value(a).data().chunks(c).map(|row| row.iter().sum()).collect();
        self.push_owned(Tensor::column(out), Op::SumCols(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_owned(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Picks `x[r, idx[r]]` for each row, `[r, c] → [r, 1]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let [r, c] = self.shape(x);
        assert_eq!(idx.len(), r, "gather: {} indices for {r} rows", idx.len());
        let xv = self.value(x);
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < c, "gather: index {j} out of range for width {c}");
                xv.get(i, j)
            })
            .collect();
        self.push_owned(Tensor::column(out), Op::Gather { x, idx: idx.to_vec() }, &[x])
    }

    /// Scales each row to unit L2 norm. Zero rows pass through unchanged.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let mut out = self.value(a).data().to_vec();
        for (i, row) in out.chunks_mut(c).enumerate() {
            let n = l2_norm(row);
            if n == 0.0 {
                log::warn!("l2_normalize: row {i} is the zero vector; left unchanged");
                continue;
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        self.push_owned(Tensor::new(r, c, out), Op::L2Normalize(a), &[a])
    }

    /// Row-wise dot products, `[r, c] × [r, c] → [r, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "row_dot");
        let [_, c] = self.shape(a);
        let out = self
            .value(a)
            .data()
            .chunks(c)
            .zip(self.value(b).data().chunks(c))
            .map(|(x, y)| dot(x, y))
            .collect();
        self.push_owned(Tensor::column(out), Op::RowDot(a, b), &[a, b])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mse");
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let m = av.iter().zip(bv).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / av.len() as f64;
        self.push_owned(Tensor::scalar(m), Op::Mse(a, b), &[a, b])
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients accumulate additively into every tracked node reachable from
    /// the loss; untracked nodes never receive a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let slot = &mut grads[v.0];
        let g = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(g);
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let [n, din] = self.shape(*x);
                let dout = self.shape(*w)[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                self.accumulate(grads, *x, |gx| {
                    for r in 0..n {
                        let gr = &g[r * dout..(r + 1) * dout];
                        let gxr = &mut gx[r * din..(r + 1) * din];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for (a, &wv) in gxr.iter_mut().zip(&wv[o * din..(o + 1) * din]) {
                                *a += go * wv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |gw| {
                    for r in 0..n {
                        let xr = &xv[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = g[r * dout + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (a, &xv) in gw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                                *a += go * xv;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| {
                        for row in g.chunks(dout) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    });
                }
            }
            Op::MatMulT { a, b } => {
                let [n, k] = self.shape(*a);
                let m = self.shape(*b)[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (t, &bv) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *t += gij * bv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (t, &av) in gb[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *t += gij * av;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(t, v)| *t -= v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for ((t, &gv), &bv) in ga.iter_mut().zip(g).zip(bv) {
                        *t += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((t, &gv), &av) in gb.iter_mut().zip(g).zip(av) {
                        *t += gv * av;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(t, v)| *t += c * v));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, |ga| add_into(ga, g)),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |ga| {
                for ((t, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *t += gv * yv * (1.0 - yv);
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((t, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *t += gv * (1.0 - yv * yv);
                }
            }),
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((t, &gv), &xv) in ga.iter_mut().zip(g).zip(xv) {
                        if xv > 0.0 {
                            *t += gv;
                        }
                    }
                })
            }
            Op::Exp(a) => self.accumulate(grads, *a, |ga| {
                for ((t, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *t += gv * yv;
                }
            }),
            Op::Square(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((t, &gv), &xv) in ga.iter_mut().zip(g).zip(xv) {
                        *t += 2.0 * xv * gv;
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let [rows, total] = node.value.shape();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    self.accumulate(grads, p, |gp| {
                        for r in 0..rows {
                            add_into(&mut gp[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let s: f64 = gr.iter().sum();
                        for ((t, &gv), &yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *t += gv - yv.exp() * s;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let s = dot(gr, yr);
                        for ((t, &gv), &yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *t += yv * (gv - s);
                        }
                    }
                })
            }
            Op::LogSumExp { x, mask } => {
                let [_, c] = self.shape(*x);
                let xv = self.value(*x).data();
                let mv = mask.map(|m| self.value(m).data());
                self.accumulate(grads, *x, |gx| {
                    for (i, (&gi, &lse)) in g.iter().zip(y).enumerate() {
                        for j in 0..c {
                            let k = i * c + j;
                            if mv.is_some_and(|mv| mv[k] == 0.0) {
                                continue;
                            }
                            gx[k] += gi * (xv[k] - lse).exp();
                        }
                    }
                })
            }
            Op::Contrastive { z, labels, coef, positives, inv_tau, probs } => {
                let [n, d] = self.shape(*z);
                let zv = self.value(*z).data();
                self.accumulate(grads, *z, |gz| {
                    for i in 0..n {
                        if coef[i] == 0.0 {
                            continue;
                        }
                        let c = g[0] * coef[i] * inv_tau;
                        let w = 1.0 / positives[i] as f64;
                        for j in 0..n {
                            if j == i {
                                continue;
                            }
                            let target = if labels[j] == labels[i] { w } else { 0.0 };
                            let gij = c * (probs[i * n + j] - target);
                            for k in 0..d {
                                gz[i * d + k] += gij * zv[j * d + k];
                                gz[j * d + k] += gij * zv[i * d + k];
                            }
                        }
                    }
                })
            }
            Op::SumCols(a) => {
                let c = self.shape(*a)[1];
                self.accumulate(grads, *a, |ga| {
                    for (row, &gv) in ga.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|t| *t += gv);
                    }
                })
            }
            Op::Sum(a) => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|t| *t += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|t| *t += g[0] / n))
            }
            Op::Gather { x, idx } => {
                let c = self.shape(*x)[1];
                self.accumulate(grads, *x, |gx| {
                    for (r, (&j, &gv)) in idx.iter().zip(g).enumerate() {
                        gx[r * c + j] += gv;
                    }
                })
            }
            Op::L2Normalize(a) => {
                let c = node.value.cols();
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for (((gar, gr), yr), xr) in
                        ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).zip(xv.chunks(c))
                    {
                        let n = l2_norm(xr);
                        if n == 0.0 {
                            add_into(gar, gr);
                            continue;
                        }
                        let proj = dot(yr, gr);
                        for ((t, &gv), &yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *t += (gv - yv * proj) / n;
                        }
                    }
                })
            }
            Op::RowDot(a, b) => {
                let c = self.shape(*a)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for ((gar, br), &gv) in ga.chunks_mut(c).zip(bv.chunks(c)).zip(g) {
                        gar.iter_mut().zip(br).for_each(|(t, &b)| *t += gv * b);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((gbr, ar), &gv) in gb.chunks_mut(c).zip(av.chunks(c)).zip(g) {
                        gbr.iter_mut().zip(ar).for_each(|(t, &a)| *t += gv * a);
                    }
                });
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let k = 2.0 * g[0] / av.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((t, &x), &y) in ga.iter_mut().zip(av).zip(bv) {
                        *t += k * (x - y);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((t, &x), &y) in gb.iter_mut().zip(av).zip(bv) {
                        *t -= k * (x - y);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(xᵢ)` with max subtraction. Empty input yields `-∞`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
