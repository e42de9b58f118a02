//! Reverse-mode automatic differentiation on a tape of dense f64 tensors.
//!
//! Only the operations HISM needs are provided. Matrix products go through
//! `matrixmultiply`; everything else is plain loops. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape is a valid backward
//! order.

use std::hash::{DefaultHasher, Hash, Hasher};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes; `a` is
/// stored as `[m, k]` (or `[k, m]` if `ta`) and `b` as `[k, n]` (or `[n, k]`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Scale(usize, Vec<f64>),
    SliceCols(usize, usize),
    ConcatCols(usize, usize),
    SelectRows(usize, Vec<usize>),
    Conv3x3 { x: usize, w: usize, b: usize },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    GlobalAvgPool(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { qkv: usize, heads: usize, seq: usize, probs: Vec<f64> },
    Mse(usize, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    kinks: DefaultHasher,
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch decision (rectifier signs, pooling winners) taken
    /// in the forward pass. Two evaluations with equal signatures lie on the
    /// same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.finish()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(tb.rows(), k, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, false, &tb.data, false, &mut out, 0.0);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a.0, b.0))
    }

    /// Adds a length-`n` vector to every row of `[m, n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        assert_eq!(tb.len(), n, "add_row width");
        let mut out = ta.data.clone();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&tb.data) {
                *o += bv;
            }
        }
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, out), Op::AddRow(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "add sizes");
        let out = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, out), Op::Add(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "mul sizes");
        let out = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, out), Op::Mul(a.0, b.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data.iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, out), Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data.iter().map(|x| x.tanh()).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, out), Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let out: Vec<f64> = t.data.iter().map(|&x| x.max(0.0)).collect();
        for x in &t.data {
            (*x > 0.0).hash(&mut self.kinks);
        }
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, out), Op::Relu(a.0))
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn scale(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), mask.len(), "mask size");
        let out = t.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, out), Op::Scale(a.0, mask))
    }

    /// Columns `start..start + len` of a 2-D value.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(start + len <= n, "slice out of range");
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&t.data[r * n + start..r * n + start + len]);
        }
        self.push(Tensor::new(vec![m, len], out), Op::SliceCols(a.0, start))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, na, nb) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(tb.rows(), m, "concat rows");
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(&ta.data[r * na..(r + 1) * na]);
            out.extend_from_slice(&tb.data[r * nb..(r + 1) * nb]);
        }
        self.push(Tensor::new(vec![m, na + nb], out), Op::ConcatCols(a.0, b.0))
    }

    /// Gathers rows (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in &idx {
            out.extend_from_slice(&t.data[i * n..(i + 1) * n]);
        }
        self.push(Tensor::new(vec![idx.len(), n], out), Op::SelectRows(a.0, idx))
    }

    /// 3x3 convolution, stride 1, zero padding 1. `x: [N, C, H, W]`,
    /// `w: [O, C, 3, 3]`, `b: [O]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (n, c, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let o = tw.shape[0];
        assert_eq!(tw.shape[1], c, "conv channels");
        let hw = h * wd;
        let mut out = vec![0.0; n * o * hw];
        let mut cols = vec![0.0; c * 9 * hw];
        for s in 0..n {
            im2col(&tx.data[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
            let dst = &mut out[s * o * hw..(s + 1) * o * hw];
            for (oc, row) in dst.chunks_mut(hw).enumerate() {
                row.fill(tb.data[oc]);
            }
            gemm(o, c * 9, hw, &tw.data, false, &cols, false, dst, 1.0);
        }
        self.push(Tensor::new(vec![n, o, h, wd], out), Op::Conv3x3 { x: x.0, w: w.0, b: b.0 })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn maxpool2(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let (n, c, h, w) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..ho {
                for xx in 0..wo {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * w + 2 * xx + dx;
                        if t.data[i] > t.data[best] {
                            best = i;
                        }
                    }
                    out.push(t.data[best]);
                    argmax.push(best);
                }
            }
        }
        argmax.hash(&mut self.kinks);
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::MaxPool2 { x: x.0, argmax })
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, c) = (t.shape[0], t.shape[1]);
        let hw: usize = t.shape[2..].iter().product();
        let out = t.data.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        self.push(Tensor::new(vec![n, c], out), Op::GlobalAvgPool(x.0))
    }

    /// Row-wise layer normalization with learned gain and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        let mut out = vec![0.0; tx.len()];
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = Vec::with_capacity(tx.rows());
        for (r, row) in tx.data.chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * tg.data[j] + tb.data[j];
            }
        }
        let shape = tx.shape.clone();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention. `qkv` is
    /// `[batch * seq, 3 * d]` holding queries, keys and values side by side;
    /// the result is `[batch * seq, d]` with heads concatenated.
    pub fn attention(&mut self, qkv: Var, heads: usize, seq: usize) -> Var {
        let t = self.value(qkv);
        let rows = t.rows();
        let d = t.cols() / 3;
        assert!(d.is_multiple_of(heads) && rows.is_multiple_of(seq), "attention shapes");
        let dh = d / heads;
        let batch = rows / seq;
        let scale = 1.0 / (dh as f64).sqrt();
        let w = 3 * d;
        let mut out = vec![0.0; rows * d];
        let mut probs = vec![0.0; batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for i in 0..seq {
                    let qi = &t.data[(b * seq + i) * w + h * dh..][..dh];
                    let row = &mut p[i * seq..(i + 1) * seq];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &t.data[(b * seq + j) * w + d + h * dh..][..dh];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                        mx = mx.max(*s);
                    }
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let o = &mut out[(b * seq + i) * d + h * dh..][..dh];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s /= z;
                        let vj = &t.data[(b * seq + j) * w + 2 * d + h * dh..][..dh];
                        for (ov, vv) in o.iter_mut().zip(vj) {
                            *ov += *s * vv;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![rows, d], out),
            Op::Attention {
                qkv: qkv.0,
                heads,
                seq,
                probs,
            },
        )
    }

    /// Mean squared error against constant targets; scalar result.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let t = self.value(pred);
        assert_eq!(t.len(), target.len(), "mse sizes");
        let n = target.len().max(1) as f64;
        let loss = t.data.iter().zip(&target).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
        self.push(Tensor::new(vec![1], vec![loss]), Op::Mse(pred.0, target))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&mut self, out: Var) {
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        self.grads[out.0] = Some(vec![1.0; self.nodes[out.0].value.len()]);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop(i, &g);
            self.grads[i] = Some(g);
        }
    }


    fn backprop(&mut self, i: usize, g: &[f64]) {
        // Split borrow: read-only node data, mutable grads.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                gemm(m, n, k, g, false, &tb.data, true, acc(&mut self.grads, &nodes, *a), 1.0);
                gemm(k, m, n, &ta.data, true, g, false, acc(&mut self.grads, &nodes, *b), 1.0);
            }
            Op::AddRow(a, b) => {
                add_into(acc(&mut self.grads, &nodes, *a), g);
                let n = nodes[*b].value.len();
                let gb = acc(&mut self.grads, &nodes, *b);
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Add(a, b) => {
                add_into(acc(&mut self.grads, &nodes, *a), g);
                add_into(acc(&mut self.grads, &nodes, *b), g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value.data, &nodes[*b].value.data);
                for (d, (gv, y)) in acc(&mut self.grads, &nodes, *a).iter_mut().zip(g.iter().zip(vb)) {
                    *d += gv * y;
                }
                for (d, (gv, x)) in acc(&mut self.grads, &nodes, *b).iter_mut().zip(g.iter().zip(va)) {
                    *d += gv * x;
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                for (d, (gv, s)) in acc(&mut self.grads, &nodes, *a).iter_mut().zip(g.iter().zip(y)) {
                    *d += gv * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                for (d, (gv, t)) in acc(&mut self.grads, &nodes, *a).iter_mut().zip(g.iter().zip(y)) {
                    *d += gv * (1.0 - t * t);
                }
            }
            Op::Relu(a) => {
                let x = &nodes[*a].value.data;
                for (d, (gv, xv)) in acc(&mut self.grads, &nodes, *a).iter_mut().zip(g.iter().zip(x)) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Scale(a, mask) => {
                for (d, (gv, m)) in acc(&mut self.grads, &nodes, *a).iter_mut().zip(g.iter().zip(mask)) {
                    *d += gv * m;
                }
            }
            Op::SliceCols(a, start) => {
                let n = nodes[*a].value.cols();
                let len = node.value.cols();
                let ga = acc(&mut self.grads, &nodes, *a);
                for (r, row) in g.chunks(len).enumerate() {
                    add_into(&mut ga[r * n + start..r * n + start + len], row);
                }
            }
            Op::ConcatCols(a, b) => {
                let (na, nb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
                {
                    let ga = acc(&mut self.grads, &nodes, *a);
                    for (r, row) in g.chunks(na + nb).enumerate() {
                        add_into(&mut ga[r * na..(r + 1) * na], &row[..na]);
                    }
                }
                let gb = acc(&mut self.grads, &nodes, *b);
                for (r, row) in g.chunks(na + nb).enumerate() {
                    add_into(&mut gb[r * nb..(r + 1) * nb], &row[na..]);
                }
            }
            Op::SelectRows(a, idx) => {
                let n = nodes[*a].value.cols();
                let ga = acc(&mut self.grads, &nodes, *a);
                for (row, &src) in g.chunks(n).zip(idx) {
                    add_into(&mut ga[src * n..(src + 1) * n], row);
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let (tx, tw) = (&nodes[*x].value, &nodes[*w].value);
                let (n, c, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
                let o = tw.shape[0];
                let hw = h * wd;
                {
                    let gb = acc(&mut self.grads, &nodes, *b);
                    for s in 0..n {
                        for (oc, row) in g[s * o * hw..(s + 1) * o * hw].chunks(hw).enumerate() {
                            gb[oc] += row.iter().sum::<f64>();
                        }
                    }
                }
                let mut cols = vec![0.0; c * 9 * hw];
                let mut dcols = vec![0.0; c * 9 * hw];
                let mut gw = vec![0.0; tw.len()];
                let mut gx = vec![0.0; tx.len()];
                for s in 0..n {
                    let gs = &g[s * o * hw..(s + 1) * o * hw];
                    im2col(&tx.data[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
                    gemm(o, hw, c * 9, gs, false, &cols, true, &mut gw, 1.0);
                    gemm(c * 9, o, hw, &tw.data, true, gs, false, &mut dcols, 0.0);
                    col2im(&dcols, c, h, wd, &mut gx[s * c * hw..(s + 1) * c * hw]);
                }
                add_into(acc(&mut self.grads, &nodes, *w), &gw);
                add_into(acc(&mut self.grads, &nodes, *x), &gx);
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = acc(&mut self.grads, &nodes, *x);
                for (gv, &src) in g.iter().zip(argmax) {
                    gx[src] += gv;
                }
            }
            Op::GlobalAvgPool(x) => {
                let hw: usize = nodes[*x].value.shape[2..].iter().product();
                let gx = acc(&mut self.grads, &nodes, *x);
                for (plane, gv) in gx.chunks_mut(hw).zip(g) {
                    for d in plane {
                        *d += gv / hw as f64;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gam = &nodes[*gamma].value.data;
                {
                    let gg = acc(&mut self.grads, &nodes, *gamma);
                    for (row_g, row_x) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row_g[j] * row_x[j];
                        }
                    }
                }
                {
                    let gbeta = acc(&mut self.grads, &nodes, *beta);
                    for row_g in g.chunks(d) {
                        add_into(gbeta, row_g);
                    }
                }
                let gx = acc(&mut self.grads, &nodes, *x);
                for (r, (row_g, row_x)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let dxh: Vec<f64> = (0..d).map(|j| row_g[j] * gam[j]).collect();
                    let m1 = dxh.iter().sum::<f64>() / d as f64;
                    let m2 = dxh.iter().zip(row_x).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] += inv_std[r] * (dxh[j] - m1 - row_x[j] * m2);
                    }
                }
            }
            Op::Attention { qkv, heads, seq, probs } => {
                let t = &nodes[*qkv].value;
                let (heads, seq) = (*heads, *seq);
                let d = t.cols() / 3;
                let dh = d / heads;
                let w = 3 * d;
                let batch = t.rows() / seq;
                let scale = 1.0 / (dh as f64).sqrt();
                let gq = acc(&mut self.grads, &nodes, *qkv);
                let mut dp = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                        for i in 0..seq {
                            let go = &g[(b * seq + i) * d + h * dh..][..dh];
                            let prow = &p[i * seq..(i + 1) * seq];
                            // dV_j += p_ij * dO_i ; dP_ij = dO_i . V_j
                            for j in 0..seq {
                                let vj = (b * seq + j) * w + 2 * d + h * dh;
                                let mut acc = 0.0;
                                for e in 0..dh {
                                    acc += go[e] * t.data[vj + e];
                                    gq[vj + e] += prow[j] * go[e];
                                }
                                dp[j] = acc;
                            }
                            let dot: f64 = dp.iter().zip(prow).map(|(a, c)| a * c).sum();
                            let qi = (b * seq + i) * w + h * dh;
                            for j in 0..seq {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = (b * seq + j) * w + d + h * dh;
                                for e in 0..dh {
                                    gq[qi + e] += ds * t.data[kj + e];
                                    gq[kj + e] += ds * t.data[qi + e];
                                }
                            }
                        }
                    }
                }
            }
            Op::Mse(p, target) => {
                let pv = &nodes[*p].value.data;
                let n = target.len().max(1) as f64;
                let gp = acc(&mut self.grads, &nodes, *p);
                for (d, (x, y)) in gp.iter_mut().zip(pv.iter().zip(target)) {
                    *d += g[0] * 2.0 * (x - y) / n;
                }
            }
        }
        self.nodes = nodes;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'g mut Vec<f64> {
    let len = nodes[i].value.len();
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `[C, H, W]` to `[C * 9, H * W]` patches with zero padding.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        row[y * w + xx] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            x[ch * hw + sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back to `[C, H, W]`.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, x: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            x[ch * hw + sy as usize * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}
