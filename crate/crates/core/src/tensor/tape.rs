//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! appended in evaluation order, so walking the tape backwards visits each
//! node after all of its consumers.

use super::gemm::{gemm, View};
use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `[n]` or `[1 × n]` repeated over every row of `[m × n]`.
    Row,
    /// `[m × 1]` repeated over every column of `[m × n]`.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var, bc: Broadcast },
    Mul { a: Var, b: Var, bc: Broadcast },
    Scale { a: Var, c: f64 },
    SoftmaxRows { a: Var },
    SoftmaxCols { a: Var },
    MaskFill { a: Var, mask: Vec<bool> },
    Concat { parts: Vec<Var> },
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Transpose { a: Var },
    Reshape { a: Var },
    Relu { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize>, pad: Option<usize> },
    Dropout { a: Var, mult: Vec<f64> },
    Sum { a: Var },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// A recorded computation graph.
///
/// Leaves are created with [`Tape::leaf`]; every other method records one
/// operation. [`Tape::backward`] fills gradients for all nodes that depend on
/// a leaf with `requires_grad`. [`Tape::reset`] discards the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, true, false)
    }

    fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        let va = View::of(self.value(a).data(), ar, ac, ta);
        let vb = View::of(self.value(b).data(), br, bc, tb);
        if va.cols != vb.rows {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let (m, n) = (va.rows, vb.cols);
        let mut out = vec![0.0; m * n];
        gemm(va, vb, 0.0, &mut out, n as isize, 1);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, rg, Op::MatMul { a, b, ta, tb }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, rg, Op::Transpose { a }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, rg, Op::Reshape { a }))
    }

    // ---- elementwise ----------------------------------------------------

    fn broadcast(&self, op: &'static str, a: Var, b: Var, allow_col: bool) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if let [m, n] = *sa {
            match *sb {
                [k] | [1, k] if k == n => return Ok(Broadcast::Row),
                [k, 1] if allow_col && k == m => return Ok(Broadcast::Col),
                _ => {}
            }
        }
        Err(Error::dim(op, sa, sb))
    }

    /// Sum; `b` may broadcast along rows (`[n]`, `[1×n]`) or columns (`[m×1]`).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("add", a, b, true)?;
        let out = zip_broadcast(self.value(a), self.value(b), bc, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b, bc }))
    }

    /// Elementwise product; `b` may be `[d]` or `[1×d]` against an `[l×d]` `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("elementwise_mul", a, b, false)?;
        let out = zip_broadcast(self.value(a), self.value(b), bc, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul { a, b, bc }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Relu { a })
    }

    /// Replaces entries where `mask` is true with `value`; those entries pass no gradient.
    pub fn mask_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        if mask.len() != out.numel() {
            return Err(Error::dim("mask_fill", out.shape(), &[mask.len()]));
        }
        for (x, &m) in out.data.iter_mut().zip(mask) {
            if m {
                *x = value;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, rg, Op::MaskFill { a, mask: mask.to_vec() }))
    }

    // ---- normalization --------------------------------------------------

    /// Softmax over each row, with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data: out }, rg, Op::SoftmaxRows { a }))
    }

    /// Softmax over each column. Performs the same floating-point operations,
    /// in the same order, as `softmax_rows` on the transpose.
    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            let max = (0..r).map(|i| x[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..r {
                let e = (x[i * c + j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for i in 0..r {
                out[i * c + j] /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data: out }, rg, Op::SoftmaxCols { a }))
    }

    /// Per-row layer normalization with affine `gamma`, `beta` of width `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        for p in [gamma, beta] {
            if self.value(p).numel() != c {
                return Err(Error::dim("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
        ))
    }

    // ---- structure ------------------------------------------------------

    /// Feature-axis concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_features"))?;
        let (r, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pr != r || self.shape(p).len() != 2 {
                return Err(Error::dim("concat_features", self.shape(first), self.shape(p)));
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
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor { shape: vec![r, total], data: out },
            rg,
            Op::Concat { parts: parts.to_vec() },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a).slice_cols(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, rg, Op::SliceCols { a, start }))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if start >= end || end > r {
            return Err(Error::Shape(format!("row range {start}..{end} of {r}")));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor { shape: vec![end - start, c], data },
            rg,
            Op::SliceRows { a, start },
        ))
    }

    /// Row lookup into `table`; ids equal to `pad` produce all-zero rows.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], pad: Option<usize>) -> Result<Var> {
        let (v, d) = self.dims(table)?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        let t = self.value(table).data();
        let mut out = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
            if Some(id) != pad {
                out[i * d..(i + 1) * d].copy_from_slice(&t[id * d..(id + 1) * d]);
            }
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), d], data: out },
            rg,
            Op::Gather { table, ids: ids.to_vec(), pad },
        ))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mult: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let src = self.value(x);
        let out = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().zip(&mult).map(|(a, m)| a * m).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Dropout { a: x, mult }))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum { a })
    }

    /// `-log softmax(logits)[target]` over a flat logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits).data();
        if target >= x.len() {
            return Err(Error::Label { index: target, len: x.len() });
        }
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - x[target];
        let probs = exps.iter().map(|e| e / z).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CrossEntropy { logits, target, probs }))
    }

    // ---- backward -------------------------------------------------------

    /// Populates gradients of the scalar `loss` for every node that requires
    /// them. Gradients from any previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let (ar, ac) = av.dims2().expect("matmul operand");
                let (br, bc) = bv.dims2().expect("matmul operand");
                let opa = View::of(&av.data, ar, ac, *ta);
                let opb = View::of(&bv.data, br, bc, *tb);
                let gv = View::of(g, opa.rows, opb.cols, false);
                if let Some(ga) = acc(nodes, grads, *a) {
                    gemm(gv, opb.t(), 1.0, ga, opa.rs, opa.cs);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    gemm(opa.t(), gv, 1.0, gb, opb.rs, opb.cs);
                }
            }
            Op::Add { a, b, bc } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    reduce_broadcast(g, out.cols(), *bc, gb, |_| 1.0);
                }
            }
            Op::Mul { a, b, bc } => {
                let av = &nodes[a.0].value.data;
                let bv = &nodes[b.0].value.data;
                let c = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (k, x) in ga.iter_mut().enumerate() {
                        let bk = match bc {
                            Broadcast::Same => bv[k],
                            _ => bv[k % c],
                        };
                        *x += g[k] * bk;
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    reduce_broadcast(g, c, *bc, gb, |k| av[k]);
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::SoftmaxRows { a } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    let (r, c) = out.dims2().expect("softmax");
                    let y = &out.data;
                    for i in 0..r {
                        let s = i * c..(i + 1) * c;
                        let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(p, q)| p * q).sum();
                        for k in s {
                            ga[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::SoftmaxCols { a } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    let (r, c) = out.dims2().expect("softmax");
                    let y = &out.data;
                    for j in 0..c {
                        let dot: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            let k = i * c + j;
                            ga[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::MaskFill { a, mask } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((x, y), &m) in ga.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *x += y;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let (r, total) = out.dims2().expect("concat");
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = acc(nodes, grads, p) {
                        for i in 0..r {
                            let src = &g[i * total + offset..i * total + offset + w];
                            gp[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start } => {
                let (r, w) = out.dims2().expect("slice");
                let c = nodes[a.0].value.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for i in 0..r {
                        let dst = &mut ga[i * c + start..i * c + start + w];
                        dst.iter_mut().zip(&g[i * w..(i + 1) * w]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let c = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    let dst = &mut ga[start * c..start * c + g.len()];
                    dst.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Transpose { a } => {
                let (r, c) = out.dims2().expect("transpose");
                if let Some(ga) = acc(nodes, grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Relu { a } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(&out.data) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (r, c) = out.dims2().expect("layer_norm");
                let gm = &nodes[gamma.0].value.data;
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for k in 0..r * c {
                        gg[k % c] += g[k] * xhat[k];
                    }
                }
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for k in 0..r * c {
                        gb[k % c] += g[k];
                    }
                }
                if let Some(gx) = acc(nodes, grads, *x) {
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let s = i * c;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let d = g[s + j] * gm[j];
                            dxhat[j] = d;
                            mean_d += d;
                            mean_dx += d * xhat[s + j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            gx[s + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[s + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Gather { table, ids, pad } => {
                let d = out.cols();
                if let Some(gt) = acc(nodes, grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        if Some(id) != *pad {
                            let dst = &mut gt[id * d..(id + 1) * d];
                            dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::Dropout { a, mult } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((x, y), m) in ga.iter_mut().zip(g).zip(mult) {
                        *x += y * m;
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                if let Some(gl) = acc(nodes, grads, *logits) {
                    for (k, (x, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        *x += g[0] * (p - onehot);
                    }
                }
            }
        }
    }
}

/// Lazily allocated gradient accumulator for a node that requires grad.
fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}

fn zip_broadcast(a: &Tensor, b: &Tensor, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let c = a.cols();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let y = match bc {
                Broadcast::Same => b.data[k],
                Broadcast::Row => b.data[k % c],
                Broadcast::Col => b.data[k / c],
            };
            f(x, y)
        })
        .collect();
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

/// Accumulates `g[k] * w(k)` into the (possibly broadcast) operand gradient.
fn reduce_broadcast(g: &[f64], cols: usize, bc: Broadcast, gb: &mut [f64], w: impl Fn(usize) -> f64) {
    for (k, gk) in g.iter().enumerate() {
        let idx = match bc {
            Broadcast::Same => k,
            Broadcast::Row => k % cols,
            Broadcast::Col => k / cols,
        };
        gb[idx] += gk * w(k);
    }
}
