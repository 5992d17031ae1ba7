use std::sync::Arc;

use super::{Prng, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaskedFill { a: Var, keep: Vec<bool> },
    Dropout { a: Var, mask: Vec<f64> },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid reverse topological order for backpropagation.
///
/// A graph built with [`Graph::inference`] records no backward information.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `c = op(a) · op(b) + beta·c` for row-major operands.
/// `a` is `[m×k]` (or `[k×m]` when `ta`), `b` is `[k×n]` (or `[n×k]` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the `m*k`, `k*n` and `m*n`
    // elements of the slices, whose lengths are checked above.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(x, y)| *x += y),
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), record: true }
    }

    /// A graph that only evaluates values.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.param_shared(Arc::new(value))
    }

    pub fn param_shared(&mut self, value: Arc<Tensor>) -> Var {
        let requires_grad = self.record;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Accumulated gradient of a leaf, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    // ---- primitives ----

    /// `[n×k] · [k×m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims2(a);
        let (k2, m) = self.dims2(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.value(a).data, false, &self.value(b).data, false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![n, m], out), Op::MatMul { a, b, trans_b: false }, rg)
    }

    /// `[n×k] · [m×k]ᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims2(a);
        let (m, k2) = self.dims2(b);
        assert_eq!(k, k2, "matmul_t inner dimensions");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.value(a).data, false, &self.value(b).data, true, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![n, m], out), Op::MatMul { a, b, trans_b: true }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    /// Adds a length-`c` vector to every row of an `[r×c]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.dims2(a);
        assert_eq!(self.value(bias).numel(), c, "bias width");
        let (x, b) = (self.value(a), self.value(bias));
        let mut data = x.data.clone();
        for row in 0..r {
            data[row * c..(row + 1) * c].iter_mut().zip(&b.data).for_each(|(v, bb)| *v += bb);
        }
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a) || self.rg(bias);
        self.push(t, Op::AddBias(a, bias), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v * c).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.tanh()).collect());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.max(0.0)).collect());
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims2(a);
        let x = self.value(a);
        let mut data = x.data.clone();
        for row in data.chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (r, c) = self.dims2(x);
        assert_eq!(self.value(gain).numel(), c);
        assert_eq!(self.value(bias).numel(), c);
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = g.data[j] * h + b.data[j];
            }
        }
        let t = Tensor::new(xv.shape.clone(), out);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (n, c) = self.dims2(table);
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < n, "gather index {id} out of range {n}");
            data.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), c], data);
        let rg = self.rg(table);
        self.push(t, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    /// Stacks matrices along the row (sequence) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.dims2(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims2(p);
            assert_eq!(pc, c, "concat_rows widths");
            data.extend_from_slice(&self.value(p).data);
            rows += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![rows, c], data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Joins matrices side by side along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.dims2(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims2(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            assert_eq!(self.dims2(p).0, r, "concat_cols heights");
            let v = self.value(p);
            for i in 0..r {
                data[i * total + offset..i * total + offset + w].copy_from_slice(&v.data[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![r, total], data), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Replaces entries whose `keep` flag is false with `fill`.
    pub fn masked_fill(&mut self, a: Var, keep: &[bool], fill: f64) -> Var {
        let x = self.value(a);
        assert_eq!(keep.len(), x.numel(), "mask size");
        let data = x.data.iter().zip(keep).map(|(&v, &k)| if k { v } else { fill }).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a);
        self.push(t, Op::MaskedFill { a, keep: keep.to_vec() }, rg)
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Prng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let x = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel()).map(|_| if rng.next_f64() < p { 0.0 } else { keep }).collect();
        let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(a);
        self.push(t, Op::Dropout { a, mask }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean token cross-entropy of `[t×V]` logits against index targets;
    /// targets equal to `ignore` contribute nothing. Zero when nothing counts.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Var {
        let (t, v) = self.dims2(logits);
        assert_eq!(targets.len(), t, "one target per logit row");
        let lv = self.value(logits);
        let mut probs = lv.data.clone();
        let mut total = 0.0;
        let mut count = 0;
        let mut tg = Vec::with_capacity(t);
        for (i, &target) in targets.iter().enumerate() {
            let row = &mut probs[i * v..(i + 1) * v];
            softmax_in_place(row);
            if target == ignore {
                tg.push(None);
                continue;
            }
            let target = target as usize;
            assert!(target < v, "target {target} out of vocabulary {v}");
            let lrow = lv.row(i);
            total -= log_softmax_at(lrow, target);
            count += 1;
            tg.push(Some(target));
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: tg, probs, count }, rg)
    }

    /// `softmax(Q Kᵀ / √d_k) V`; `mask[i*m + j] == false` hides key `j` from query `i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let (n, dk) = self.dims2(q);
        let (m, dk2) = self.dims2(k);
        if dk != dk2 {
            return Err(TensorError::ShapeMismatch { op: "attention", expected: vec![m, dk], got: vec![m, dk2] });
        }
        if self.dims2(v).0 != m {
            return Err(TensorError::ShapeMismatch { op: "attention", expected: vec![m, self.dims2(v).1], got: self.shape(v).to_vec() });
        }
        let scores = self.matmul_t(q, k);
        let scores = self.scale(scores, 1.0 / (dk as f64).sqrt());
        let scores = match mask {
            Some(mask) => {
                assert_eq!(mask.len(), n * m, "mask size");
                if let Some(row) = (0..n).find(|&i| m > 0 && !mask[i * m..(i + 1) * m].iter().any(|&b| b)) {
                    return Err(TensorError::AllMaskedRow(row));
                }
                self.masked_fill(scores, mask, f64::NEG_INFINITY)
            }
            None => scores,
        };
        let weights = self.softmax_rows(scores);
        Ok(self.matmul(weights, v))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut temp: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        temp[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = temp[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                add_into(&mut self.grads[i], g);
                continue;
            }
            self.propagate(i, g, &mut temp);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Vec<f64>, temp: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut temp[v.0], contrib);
            }
        };
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = out.cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; n * k];
                    // dA = dC · op(B)ᵀ
                    gemm(n, m, k, &g, false, &bv.data, !*trans_b, 0.0, &mut da);
                    send(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * m];
                    if *trans_b {
                        // B is [m×k]: dB = dCᵀ · A
                        gemm(m, n, k, &g, true, &av.data, false, 0.0, &mut db);
                    } else {
                        gemm(k, n, m, &av.data, true, &g, false, 0.0, &mut db);
                    }
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*b, g.clone());
                send(*a, g);
            }
            Op::AddBias(a, bias) => {
                let c = out.cols();
                let mut db = vec![0.0; c];
                for row in g.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                send(*bias, db);
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                send(*a, da);
                send(*b, db);
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::Tanh(a) => send(*a, g.iter().zip(&out.data).map(|(gv, y)| gv * (1.0 - y * y)).collect()),
            Op::Relu(a) => {
                let x = self.value(*a);
                send(*a, g.iter().zip(&x.data).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut dx = vec![0.0; g.len()];
                for ((dxr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = out.cols();
                let r = out.rows();
                let gv = self.value(*gain);
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..c {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        let dh = gr[j] * gv.data[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for j in 0..c {
                        let dh = gr[j] * gv.data[j];
                        dx[i * c + j] = rstd[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                send(*gain, dgain);
                send(*bias, dbias);
                send(*x, dx);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * c..(id + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(d, v)| *d += v);
                }
                send(*table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    send(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let r = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    send(p, dp);
                    offset += w;
                }
            }
            Op::MaskedFill { a, keep } => {
                send(*a, g.iter().zip(keep).map(|(v, &k)| if k { *v } else { 0.0 }).collect());
            }
            Op::Dropout { a, mask } => send(*a, g.iter().zip(mask).map(|(v, m)| v * m).collect()),
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0]; n]);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let v = self.value(*logits).cols();
                let mut dl = vec![0.0; probs.len()];
                if *count > 0 {
                    let scale = g[0] / *count as f64;
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..v {
                            dl[i * v + j] = probs[i * v + j] * scale;
                        }
                        dl[i * v + t] -= scale;
                    }
                }
                send(*logits, dl);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log softmax(row)[idx]`, computed with the log-sum-exp shift.
pub(crate) fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[idx] - lse
}

/// Full log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(m(&[&[0.0, 0.0], &[1000.0, 1000.0], &[0.0, 3f64.ln()]]));
        let y = g.softmax_rows(x);
        let y = &g.value(y).data;
        assert_eq!(&y[..4], &[0.5, 0.5, 0.5, 0.5]);
        assert!(close(y[4], 0.25, 1e-15) && close(y[5], 0.75, 1e-15));
    }

    #[test]
    fn attention_examples() {
        let mut g = Graph::new();
        // single key: output is that value row
        let q = g.constant(m(&[&[3.0, -1.0], &[0.5, 2.0]]));
        let k = g.constant(m(&[&[1.0, 1.0]]));
        let v = g.constant(m(&[&[7.0, 8.0, 9.0]]));
        let o = g.attention(q, k, v, None).unwrap();
        assert_eq!(g.value(o).data, vec![7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);

        // identical keys average the values
        let k = g.constant(m(&[&[1.0, 2.0], &[1.0, 2.0]]));
        let v = g.constant(m(&[&[1.0, 0.0], &[3.0, 4.0]]));
        let o = g.attention(q, k, v, None).unwrap();
        assert_eq!(g.value(o).row(0), &[2.0, 2.0]);

        let q = g.constant(m(&[&[1.0]]));
        let k = g.constant(m(&[&[1.0], &[0.0]]));
        let v = g.constant(m(&[&[1.0], &[0.0]]));
        let o = g.attention(q, k, v, None).unwrap();
        let e = std::f64::consts::E;
        assert!(close(g.value(o).item(), e / (e + 1.0), 1e-12));
        assert!(close(g.value(o).item(), 0.7311, 1e-4));
    }

    #[test]
    fn attention_all_masked_row() {
        let mut g = Graph::new();
        let q = g.constant(m(&[&[1.0], &[1.0]]));
        let k = g.constant(m(&[&[1.0], &[0.0]]));
        let v = g.constant(m(&[&[1.0], &[0.0]]));
        assert_eq!(g.attention(q, k, v, Some(&[true, false, false, false])), Err(TensorError::AllMaskedRow(1)));
        let o = g.attention(q, k, v, Some(&[false, true, true, true])).unwrap();
        assert_eq!(g.value(o).row(0), &[0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]));
        let sq = g.mul(x, x);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
        // a second sweep accumulates
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let zero = g.scale(x, 0.0);
        let s = g.sum(zero);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert_eq!(g.backward(x), Err(TensorError::NonScalarLoss(vec![2, 2])));
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, x);
        g.backward(y).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.value(y).item(), 4.0);
    }

    #[test]
    fn cross_entropy_ignores_pad() {
        let mut g = Graph::new();
        let logits = g.param(m(&[&[0.0, 0.0], &[5.0, -5.0]]));
        let ce = g.cross_entropy(logits, &[1, 0], 0);
        assert!(close(g.value(ce).item(), 2f64.ln(), 1e-15));
        g.backward(ce).unwrap();
        assert_eq!(&g.grad(logits).unwrap()[2..], &[0.0, 0.0]);
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 1.0, &mut Prng::new(seed))
    }

    #[test]
    fn primitives_pass_gradient_check() {
        type F = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
        let w = rand_tensor(&[3, 4], 9);
        let cases: Vec<(&str, Vec<Tensor>, F)> = vec![
            (
                "matmul",
                vec![rand_tensor(&[2, 3], 1), rand_tensor(&[3, 4], 2)],
                Box::new(move |g: &mut Graph, p: &[Var]| {
                    let y = g.matmul(p[0], p[1]);
                    let c = g.constant(rand_tensor(&[2, 4], 3));
                    let y = g.mul(y, c);
                    g.sum(y)
                }),
            ),
            (
                "matmul_t",
                vec![rand_tensor(&[2, 3], 1), rand_tensor(&[5, 3], 2)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let y = g.matmul_t(p[0], p[1]);
                    let y = g.tanh(y);
                    g.sum(y)
                }),
            ),
            (
                "add_bias+relu",
                vec![rand_tensor(&[3, 4], 4), rand_tensor(&[4], 5)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let y = g.add_bias(p[0], p[1]);
                    let y = g.relu(y);
                    let y = g.mul(y, y);
                    g.sum(y)
                }),
            ),
            (
                "softmax",
                vec![rand_tensor(&[3, 5], 6)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let y = g.softmax_rows(p[0]);
                    let c = g.constant(rand_tensor(&[3, 5], 7));
                    let y = g.mul(y, c);
                    g.sum(y)
                }),
            ),
            (
                "layer_norm",
                vec![rand_tensor(&[3, 4], 8), rand_tensor(&[4], 9), rand_tensor(&[4], 10)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let y = g.layer_norm(p[0], p[1], p[2]);
                    let c = g.constant(rand_tensor(&[3, 4], 11));
                    let y = g.mul(y, c);
                    g.sum(y)
                }),
            ),
            (
                "gather+concat",
                vec![rand_tensor(&[5, 3], 12), rand_tensor(&[2, 3], 13)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let e = g.gather(p[0], &[4, 1, 4]);
                    let y = g.concat_rows(&[e, p[1]]);
                    let z = g.concat_cols(&[y, y]);
                    let z = g.tanh(z);
                    g.sum(z)
                }),
            ),
            (
                "masked attention",
                vec![rand_tensor(&[2, 3], 14), rand_tensor(&[3, 3], 15), rand_tensor(&[3, 2], 16)],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let o = g.attention(p[0], p[1], p[2], Some(&[true, false, true, true, true, false])).unwrap();
                    let o = g.mul(o, o);
                    g.sum(o)
                }),
            ),
            ("cross_entropy", vec![rand_tensor(&[4, 6], 17)], Box::new(|g: &mut Graph, p: &[Var]| g.cross_entropy(p[0], &[1, 0, 5, 3], 0))),
            (
                "scale+add",
                vec![rand_tensor(&[3, 4], 18), w],
                Box::new(|g: &mut Graph, p: &[Var]| {
                    let y = g.scale(p[0], -1.5);
                    let y = g.add(y, p[1]);
                    let y = g.mul(y, y);
                    g.sum(y)
                }),
            ),
        ];
        for (name, params, f) in cases {
            let err = grad_check(|g, p| f(g, p), &params, 1e-5);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn fan_out_sums_contributions() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]));
        let y = g.mul(x, x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, -2.0, 4.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let base = rand_tensor(&[4, 7], 21);
        let mut shifted = base.clone();
        for (i, row) in shifted.data.chunks_mut(7).enumerate() {
            row.iter_mut().for_each(|v| *v += 10.0 * i as f64 - 3.0);
        }
        let mut g = Graph::new();
        let (a, b) = (g.constant(base), g.constant(shifted));
        let (sa, sb) = (g.softmax_rows(a), g.softmax_rows(b));
        for r in 0..4 {
            let (ra, rb) = (g.value(sa).row(r), g.value(sb).row(r));
            assert!((ra.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-9);
            }
            let argmax = |r: &[f64]| r.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            assert_eq!(argmax(ra), argmax(rb));
        }
    }
}
