//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates parameter gradients. Tapes are cheap
//! to create and are meant to be used for a single forward/backward pass.

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, moments, nll, softmax_in_place};
use crate::numerics::{Gradients, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        a: Var,
        bias: Var,
    },
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
        scale: f64,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    StatsPool {
        x: Var,
        eps: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
    DotConst {
        a: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// A value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// `a·b`, or `a·bᵀ` when `trans_b`.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::dims("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b }, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Adds `bias` (length = column count) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.dims(a).1;
        if self.value(bias).len() != c {
            return Err(Error::dims("add_row", self.shape(a), self.shape(bias)));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow { a, bias }, needs))
    }

    /// `x·w + b` for a weight of shape `in×out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, s), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        let needs = self.needs(a);
        self.push(out, Op::Relu(a), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh());
        }
        let needs = self.needs(a);
        self.push(out, Op::Gelu(a), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, d) = self.dims(x);
        if d == 0 {
            return Err(Error::EmptyAxis { op: "layer_norm" });
        }
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::dims("layer_norm", self.shape(x), self.shape(gain)));
        }
        let mut xhat = self.value(x).data().to_vec();
        let mut rstd = Vec::with_capacity(r);
        for row in xhat.chunks_mut(d) {
            let (mean, rs) = moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * rs;
            }
            rstd.push(rs);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let value = Tensor::new(vec![r, d], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Row-wise softmax of `scale · x`. With `causal`, entry `(i, j)` is
    /// masked out for `j > i`.
    pub fn softmax_rows(&mut self, x: Var, scale: f64, causal: bool) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).clone();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            let visible = if causal { (i + 1).min(c) } else { c };
            for v in row[..visible].iter_mut() {
                *v *= scale;
            }
            softmax_in_place(&mut row[..visible]);
            for v in row[visible..].iter_mut() {
                *v = 0.0;
            }
        }
        debug_assert_eq!(out.rows(), r);
        let needs = self.needs(x);
        self.push(out, Op::Softmax { x, scale }, needs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(Error::Index {
                op: "slice_cols",
                index: end,
                len: c,
            });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![r, w], out)?, Op::SliceCols { a, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(Error::dims("concat_cols", self.shape(parts[0]), self.shape(parts[1])));
        }
        let total: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_rows(start, end)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SliceRows { a, start }, needs))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "gather",
                    index: id,
                    len: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Unfolds a `T×C` sequence into `T_out × (kernel·C)` patches so that a
    /// 1-D convolution becomes a matrix product.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, c) = self.dims(x);
        if t + 2 * pad < kernel {
            return Err(Error::TooShort(format!("{t} frames for kernel {kernel}")));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let src = self.value(x).data();
        let mut out = vec![0.0; t_out * kernel * c];
        for o in 0..t_out {
            for j in 0..kernel {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let pos = pos as usize;
                let dst = o * kernel * c + j * c;
                out[dst..dst + c].copy_from_slice(&src[pos * c..(pos + 1) * c]);
            }
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![t_out, kernel * c], out)?;
        Ok(self.push(value, Op::Im2Col { x, kernel, stride, pad }, needs))
    }

    /// Per-column mean and population standard deviation, concatenated into
    /// a `1 × 2d` row. `eps` regularizes only the derivative of the square
    /// root, so a constant column pools to an exact zero deviation.
    pub fn stats_pool(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (u, d) = self.dims(x);
        if u == 0 {
            return Err(Error::EmptySequence);
        }
        let (mean, std) = column_moments(self.value(x), u, d);
        let mut out = mean;
        out.extend(std);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![1, 2 * d], out)?, Op::StatsPool { x, eps }, needs))
    }

    /// Mean over `targets` of `-log softmax(logits[row])[class]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.is_empty() {
            return Err(Error::Data("cross_entropy without targets".into()));
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(targets.len() * c);
        let mut total = 0.0;
        for &(row, class) in targets {
            if row >= r {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: row,
                    len: r,
                });
            }
            if class >= c {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: class,
                    len: c,
                });
            }
            let z = &src[row * c..(row + 1) * c];
            total += nll(z, class);
            let mut p = z.to_vec();
            softmax_in_place(&mut p);
            probs.extend(p);
        }
        let loss = total / targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric { op: "cross_entropy" });
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// `Σ wᵢ·sᵢ` over scalar vars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        let needs = terms.iter().any(|(v, w)| *w != 0.0 && self.needs(*v));
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), needs)
    }

    /// `Σ a ⊙ weights`, a scalar projection used to reduce arbitrary outputs.
    pub fn dot_const(&mut self, a: Var, weights: &Tensor) -> Result<Var> {
        if self.value(a).len() != weights.len() {
            return Err(Error::dims("dot_const", self.shape(a), weights.shape()));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(x, w)| x * w)
            .sum();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::scalar(s),
            Op::DotConst {
                a,
                weights: weights.data().to_vec(),
            },
            needs,
        ))
    }

    /// Back-propagates from scalar `loss`, adding `seed · ∂loss/∂θ` into `grads`.
    pub fn backward_into(&self, loss: Var, seed: f64, grads: &mut Gradients) {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![seed; self.nodes[loss.0].value.len()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut adj, grads);
        }
    }

    pub fn backward(&self, loss: Var, param_count: usize) -> Gradients {
        let mut grads = Gradients::new(param_count);
        self.backward_into(loss, 1.0, &mut grads);
        grads
    }

    fn propagate(&self, node: &Node, g: Vec<f64>, adj: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        let send = |v: Var, delta: Vec<f64>, adj: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => {
                    for (a, d) in acc.iter_mut().zip(&delta) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.accumulate(*id, node.value.shape(), &g, 1.0),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = node.value.cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    // dA = dC·Bᵀ (or dC·B when B was transposed)
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, bv, !trans_b, &mut da, false);
                    send(*a, da, adj);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    if *trans_b {
                        // B is n×k: dB = dCᵀ·A
                        gemm(n, m, k, &g, true, av, false, &mut db, false);
                    } else {
                        gemm(k, m, n, av, true, &g, false, &mut db, false);
                    }
                    send(*b, db, adj);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), adj);
                send(*b, g, adj);
            }
            Op::AddRow { a, bias } => {
                let c = node.value.cols();
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    send(*bias, db, adj);
                }
                send(*a, g, adj);
            }
            Op::Scale(a, s) => {
                send(*a, g.iter().map(|x| x * s).collect(), adj);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                send(*a, d, adj);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    })
                    .collect();
                send(*a, d, adj);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let gv = self.value(*gain).data();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    send(*gain, dg, adj);
                    send(*bias, db, adj);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let n = d as f64;
                    for (r, ((grow, hrow), out)) in g.chunks(d).zip(xhat.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            out[j] = rstd[r] * (dh - sum_dh / n - hrow[j] * sum_dh_h / n);
                        }
                    }
                    send(*x, dx, adj);
                }
            }
            Op::Softmax { x, scale } => {
                let c = node.value.cols();
                let p = node.value.data();
                let mut dx = vec![0.0; g.len()];
                for ((grow, prow), out) in g.chunks(c).zip(p.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[j] = scale * prow[j] * (grow[j] - dot);
                    }
                }
                send(*x, dx, adj);
            }
            Op::SliceCols { a, start } => {
                let (r, c) = self.dims(*a);
                let w = node.value.cols();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*a, da, adj);
            }
            Op::ConcatCols(parts) => {
                let r = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if self.needs(*p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        send(*p, dp, adj);
                    }
                    offset += w;
                }
            }
            Op::SliceRows { a, start } => {
                let (r, c) = self.dims(*a);
                let mut da = vec![0.0; r * c];
                da[start * c..start * c + g.len()].copy_from_slice(&g);
                send(*a, da, adj);
            }
            Op::Gather { table, ids } => {
                let (v, d) = self.dims(*table);
                let mut dt = vec![0.0; v * d];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[i * d + j];
                    }
                }
                send(*table, dt, adj);
            }
            Op::Im2Col { x, kernel, stride, pad } => {
                let (t, c) = self.dims(*x);
                let t_out = node.value.rows();
                let mut dx = vec![0.0; t * c];
                for o in 0..t_out {
                    for j in 0..*kernel {
                        let pos = (o * stride + j) as isize - *pad as isize;
                        if pos < 0 || pos as usize >= t {
                            continue;
                        }
                        let pos = pos as usize;
                        let src = o * kernel * c + j * c;
                        for ch in 0..c {
                            dx[pos * c + ch] += g[src + ch];
                        }
                    }
                }
                send(*x, dx, adj);
            }
            Op::StatsPool { x, eps } => {
                let (u, d) = self.dims(*x);
                let xv = self.value(*x).data();
                let out = node.value.data();
                let uf = u as f64;
                let mut dx = vec![0.0; u * d];
                for j in 0..d {
                    let mean = out[j];
                    let std = out[d + j];
                    let dstd = g[d + j] / (uf * (std * std + eps).sqrt());
                    let dmean = g[j] / uf;
                    for i in 0..u {
                        dx[i * d + j] = dmean + dstd * (xv[i * d + j] - mean);
                    }
                }
                send(*x, dx, adj);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (r, c) = self.dims(*logits);
                let scale = g[0] / targets.len() as f64;
                let mut dl = vec![0.0; r * c];
                for (t, &(row, class)) in targets.iter().enumerate() {
                    let p = &probs[t * c..(t + 1) * c];
                    for j in 0..c {
                        dl[row * c + j] += scale * p[j];
                    }
                    dl[row * c + class] -= scale;
                }
                send(*logits, dl, adj);
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    if *w != 0.0 {
                        send(*v, vec![g[0] * w], adj);
                    }
                }
            }
            Op::DotConst { a, weights } => {
                send(*a, weights.iter().map(|w| g[0] * w).collect(), adj);
            }
        }
    }
}

/// Column means and population standard deviations of a `u×d` matrix.
pub(crate) fn column_moments(x: &Tensor, u: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let data = x.data();
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= u as f64;
    }
    let mut var = vec![0.0; d];
    for row in data.chunks(d) {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    let std = var.into_iter().map(|v| (v / u as f64).max(0.0).sqrt()).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::numerics::{gradcheck, Graph, ParamStore, Tensor, Var};
    use crate::Result;

    /// Projects an op's output onto fixed random weights and checks the
    /// gradient with respect to every input.
    fn check<F>(inputs: &[(&str, &[usize])], op: F)
    where
        F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = ParamStore::new();
        for (name, shape) in inputs {
            params.insert(*name, Tensor::randn(shape, 1.0, &mut rng));
        }
        let probe = {
            let mut g = Graph::new(&params);
            let vars: Vec<Var> = inputs.iter().map(|(n, _)| g.param(n).unwrap()).collect();
            let out = op(&mut g, &vars).unwrap();
            Tensor::randn(g.tape.value(out).shape(), 1.0, &mut rng)
        };
        let report = gradcheck(
            |g| {
                let vars = inputs.iter().map(|(n, _)| g.param(n)).collect::<Result<Vec<_>>>()?;
                let out = op(g, &vars)?;
                g.tape.dot_const(out, &probe)
            },
            &params,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        assert!(report.checked > 0);
    }

    #[test]
    fn grad_matmul() {
        check(&[("a", &[3, 4]), ("b", &[4, 5])], |g, v| g.tape.matmul(v[0], v[1]));
        check(&[("a", &[3, 4]), ("b", &[5, 4])], |g, v| {
            g.tape.matmul_t(v[0], v[1], true)
        });
        check(&[("a", &[3, 4])], |g, v| g.tape.matmul_t(v[0], v[0], true));
    }

    #[test]
    fn grad_add_and_bias() {
        check(&[("a", &[3, 4]), ("b", &[3, 4])], |g, v| g.tape.add(v[0], v[1]));
        check(&[("a", &[3, 4]), ("b", &[4])], |g, v| g.tape.add_row(v[0], v[1]));
        check(&[("x", &[2, 3]), ("w", &[3, 4]), ("b", &[4])], |g, v| {
            g.tape.affine(v[0], v[1], v[2])
        });
    }

    #[test]
    fn grad_pointwise() {
        check(&[("a", &[3, 4])], |g, v| Ok(g.tape.scale(v[0], -1.7)));
        check(&[("a", &[3, 4])], |g, v| Ok(g.tape.relu(v[0])));
        check(&[("a", &[3, 4])], |g, v| Ok(g.tape.gelu(v[0])));
    }

    #[test]
    fn grad_layer_norm() {
        check(&[("x", &[3, 6]), ("g", &[6]), ("b", &[6])], |g, v| {
            g.tape.layer_norm(v[0], v[1], v[2], 1e-5)
        });
    }

    #[test]
    fn grad_softmax() {
        check(&[("x", &[4, 5])], |g, v| Ok(g.tape.softmax_rows(v[0], 0.7, false)));
        check(&[("x", &[4, 4])], |g, v| Ok(g.tape.softmax_rows(v[0], 1.0, true)));
    }

    #[test]
    fn grad_slicing() {
        check(&[("x", &[3, 6])], |g, v| g.tape.slice_cols(v[0], 1, 4));
        check(&[("x", &[5, 3])], |g, v| g.tape.slice_rows(v[0], 2, 5));
        check(&[("a", &[3, 2]), ("b", &[3, 4])], |g, v| {
            g.tape.concat_cols(&[v[0], v[1], v[0]])
        });
        check(&[("t", &[6, 3])], |g, v| g.tape.gather(v[0], &[4, 0, 4, 2]));
        check(&[("x", &[7, 3])], |g, v| g.tape.im2col(v[0], 3, 2, 1));
        check(&[("x", &[6, 2])], |g, v| g.tape.im2col(v[0], 3, 1, 1));
    }

    #[test]
    fn grad_pooling() {
        check(&[("x", &[7, 4])], |g, v| g.tape.stats_pool(v[0], 1e-10));
        check(&[("x", &[2, 3])], |g, v| g.tape.stats_pool(v[0], 1e-10));
    }

    #[test]
    fn grad_losses() {
        check(&[("z", &[3, 5])], |g, v| {
            g.tape.cross_entropy(v[0], &[(0, 1), (2, 4), (2, 0)])
        });
        check(&[("a", &[2, 2]), ("b", &[2, 3])], |g, v| {
            let x = g.tape.cross_entropy(v[0], &[(0, 1)])?;
            let y = g.tape.cross_entropy(v[1], &[(1, 2)])?;
            Ok(g.tape.weighted_sum(&[(x, 0.3), (y, 0.7)]))
        });
    }

    #[test]
    fn zero_weight_terms_send_nothing() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::filled(&[1, 3], 0.5));
        let mut g = Graph::new(&params);
        let a = g.param("a").unwrap();
        let l = g.tape.cross_entropy(a, &[(0, 1)]).unwrap();
        let s = g.tape.weighted_sum(&[(l, 0.0)]);
        assert!(g.gradients(s).get(params.id("a").unwrap()).is_none());
    }
}
