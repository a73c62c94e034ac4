use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::math;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layer normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SegmentSoftmax {
        x: Var,
        seg: Arc<[usize]>,
        segments: usize,
    },
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    SegmentSumRows {
        x: Var,
        seg: Arc<[usize]>,
    },
    L2NormRows(Var),
    MeanAll(Var),
    SumAll(Var),
    Reshape(Var),
    BlendRows {
        w: Var,
        vals: Var,
    },
    RowNormalize {
        x: Var,
        fell_back: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation; node order is creation order, which
/// is a valid topological order by construction.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `(r x k) . (k x c)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, k) = ta.dims2()?;
        let (k2, c) = tb.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{r}x{k} . {k2}x{c}")));
        }
        let out = matmul_raw(ta.data(), tb.data(), r, k, c);
        self.push("matmul", Tensor::matrix(r, c, out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum; `b` may also be a `1 x c` row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(ta.shape().to_vec(), data)?;
            return self.push("add", t, Op::Add(a, b), &[a, b]);
        }
        let (r, c) = ta.dims2()?;
        let (br, bc) = tb.dims2()?;
        if br != 1 || bc != c {
            return Err(Error::shape("add", format!("{r}x{c} + {br}x{bc}")));
        }
        let bias = tb.data();
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", t, Op::AddRow(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("relu", t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| sigmoid(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sigmoid", t, Op::Sigmoid(a), &[a])
    }

    /// Softmax across each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (_, c) = ta.dims2()?;
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("softmax_rows", t, Op::SoftmaxRows(a), &[a])
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    ///
    /// Used for attention over graph neighbourhoods: row `e` is an edge and
    /// `seg[e]` its destination node.
    pub fn segment_softmax(&mut self, x: Var, seg: Arc<[usize]>, segments: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        check_segments("segment_softmax", &seg, r, segments)?;
        let xd = tx.data();
        let mut max = vec![f64::NEG_INFINITY; segments * c];
        for e in 0..r {
            let s = seg[e];
            for k in 0..c {
                let m = &mut max[s * c + k];
                *m = m.max(xd[e * c + k]);
            }
        }
        let mut out = vec![0.0; r * c];
        let mut sum = vec![0.0; segments * c];
        for e in 0..r {
            let s = seg[e];
            for k in 0..c {
                let v = math::exp(xd[e * c + k] - max[s * c + k]);
                out[e * c + k] = v;
                sum[s * c + k] += v;
            }
        }
        for e in 0..r {
            let s = seg[e];
            for k in 0..c {
                out[e * c + k] /= sum[s * c + k];
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        self.push(
            "segment_softmax",
            t,
            Op::SegmentSoftmax { x, seg, segments },
            &[x],
        )
    }

    /// Per-row normalization to zero mean / unit variance followed by a
    /// per-feature affine map; `gamma` and `beta` are `1 x c`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.dims2()? != (1, c) || tb.dims2()? != (1, c) {
            return Err(Error::shape(
                "layer_norm_rows",
                format!("features {c}, gamma {:?}, beta {:?}", tg.shape(), tb.shape()),
            ));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            inv_std[i] = inv;
            for k in 0..c {
                let h = (row[k] - mean) * inv;
                xhat[i * c + k] = h;
                out[i * c + k] = h * tg.data()[k] + tb.data()[k];
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        self.push(
            "layer_norm_rows",
            t,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Concatenation along the last (column) dimension.
    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_last_dim", "no inputs"));
        }
        let r = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(Error::shape("concat_last_dim", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::matrix(r, total, out)?;
        self.push("concat_last_dim", t, Op::Concat(parts.to_vec()), parts)
    }

    /// `out[e] = x[idx[e]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("index {bad} >= {r} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(&tx.data()[i * c..(i + 1) * c]);
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        self.push("gather_rows", t, Op::GatherRows { x, idx }, &[x])
    }

    /// `out[s] = sum of x[e] over rows with seg[e] == s`, accumulated in row order.
    pub fn segment_sum_rows(&mut self, x: Var, seg: Arc<[usize]>, segments: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        check_segments("segment_sum_rows", &seg, r, segments)?;
        let mut out = vec![0.0; segments * c];
        for e in 0..r {
            let s = seg[e];
            for k in 0..c {
                out[s * c + k] += tx.data()[e * c + k];
            }
        }
        let t = Tensor::matrix(segments, c, out)?;
        self.push("segment_sum_rows", t, Op::SegmentSumRows { x, seg }, &[x])
    }

    /// Euclidean norm of each row, `r x 1`.
    pub fn l2_norm_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        let out = (0..r)
            .map(|i| math::sqrt(tx.data()[i * c..(i + 1) * c].iter().map(|v| v * v).sum()))
            .collect();
        let t = Tensor::matrix(r, 1, out)?;
        self.push("l2_norm_rows", t, Op::L2NormRows(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() == 0 {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let m = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        self.push("mean_all", Tensor::scalar(m), Op::MeanAll(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Per-row weighted sum of column blocks:
    /// `out[r, d] = sum_j w[r, j] * vals[r, j * D + d]` with `D = vals.cols / w.cols`.
    ///
    /// Covers skinning (`vals` holds every joint's transformed position),
    /// basis combination and the attention gate mix.
    pub fn blend_rows(&mut self, w: Var, vals: Var) -> Result<Var> {
        let (tw, tv) = (self.value(w), self.value(vals));
        let (r, j) = tw.dims2()?;
        let (vr, vc) = tv.dims2()?;
        if vr != r || j == 0 || vc % j != 0 {
            return Err(Error::shape("blend_rows", format!("weights {r}x{j}, values {vr}x{vc}")));
        }
        let d = vc / j;
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let wr = &tw.data()[i * j..(i + 1) * j];
            let vrow = &tv.data()[i * vc..(i + 1) * vc];
            let o = &mut out[i * d..(i + 1) * d];
            for (jj, &wv) in wr.iter().enumerate() {
                for (k, ov) in o.iter_mut().enumerate() {
                    *ov += wv * vrow[jj * d + k];
                }
            }
        }
        let t = Tensor::matrix(r, d, out)?;
        self.push("blend_rows", t, Op::BlendRows { w, vals }, &[w, vals])
    }

    /// Divides every row by its sum. Rows whose sum is not positive are
    /// replaced by the matching row of the constant `fallback`.
    pub fn row_normalize(&mut self, x: Var, fallback: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        same_shape("row_normalize", tx, fallback)?;
        let (r, c) = tx.dims2()?;
        let mut out = vec![0.0; r * c];
        let mut fell_back = vec![false; r];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for k in 0..c {
                    out[i * c + k] = row[k] / s;
                }
            } else {
                fell_back[i] = true;
                out[i * c..(i + 1) * c].copy_from_slice(fallback.row(i));
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        self.push("row_normalize", t, Op::RowNormalize { x, fell_back }, &[x])
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, k) = ta.dims2()?;
                let c = tb.dims2()?.1;
                if self.wants(*a) {
                    // dA = G . B^T
                    let acc = grad_slot(grads, *a, ta);
                    let bd = tb.data();
                    for i in 0..r {
                        let grow = &gd[i * c..(i + 1) * c];
                        for kk in 0..k {
                            let brow = &bd[kk * c..(kk + 1) * c];
                            let mut s = 0.0;
                            for jj in 0..c {
                                s += grow[jj] * brow[jj];
                            }
                            acc[i * k + kk] += s;
                        }
                    }
                }
                if self.wants(*b) {
                    // dB = A^T . G
                    let acc = grad_slot(grads, *b, tb);
                    let ad = ta.data();
                    for i in 0..r {
                        let grow = &gd[i * c..(i + 1) * c];
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            let out = &mut acc[kk * c..(kk + 1) * c];
                            for jj in 0..c {
                                out[jj] += av * grow[jj];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let acc = grad_slot(grads, v, self.value(v));
                        axpy(acc, gd, 1.0);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    let acc = grad_slot(grads, *a, self.value(*a));
                    axpy(acc, gd, 1.0);
                }
                if self.wants(*b) {
                    let c = self.value(*b).numel();
                    let acc = grad_slot(grads, *b, self.value(*b));
                    for row in gd.chunks_exact(c) {
                        axpy(acc, row, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    axpy(grad_slot(grads, *a, self.value(*a)), gd, 1.0);
                }
                if self.wants(*b) {
                    axpy(grad_slot(grads, *b, self.value(*b)), gd, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.value(*b).data();
                    let acc = grad_slot(grads, *a, self.value(*a));
                    for ((o, g), y) in acc.iter_mut().zip(gd).zip(other) {
                        *o += g * y;
                    }
                }
                if self.wants(*b) {
                    let other = self.value(*a).data();
                    let acc = grad_slot(grads, *b, self.value(*b));
                    for ((o, g), y) in acc.iter_mut().zip(gd).zip(other) {
                        *o += g * y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    axpy(grad_slot(grads, *a, self.value(*a)), gd, *s);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let acc = grad_slot(grads, *a, self.value(*a));
                    for ((o, g), xv) in acc.iter_mut().zip(gd).zip(x) {
                        if *xv > 0.0 {
                            *o += g;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let acc = grad_slot(grads, *a, self.value(*a));
                    for ((o, g), yv) in acc.iter_mut().zip(gd).zip(y) {
                        *o += g * yv * (1.0 - yv);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let c = node.value.dims2()?.1.max(1);
                    let acc = grad_slot(grads, *a, self.value(*a));
                    for ((yr, gr), or) in y.chunks_exact(c).zip(gd.chunks_exact(c)).zip(acc.chunks_exact_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for k in 0..c {
                            or[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, seg, segments } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let (r, c) = node.value.dims2()?;
                    let mut dot = vec![0.0; segments * c];
                    for e in 0..r {
                        for k in 0..c {
                            dot[seg[e] * c + k] += gd[e * c + k] * y[e * c + k];
                        }
                    }
                    let acc = grad_slot(grads, *x, self.value(*x));
                    for e in 0..r {
                        for k in 0..c {
                            acc[e * c + k] += y[e * c + k] * (gd[e * c + k] - dot[seg[e] * c + k]);
                        }
                    }
                }
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = node.value.dims2()?;
                if self.wants(*gamma) {
                    let acc = grad_slot(grads, *gamma, self.value(*gamma));
                    for i in 0..r {
                        for k in 0..c {
                            acc[k] += gd[i * c + k] * xhat[i * c + k];
                        }
                    }
                }
                if self.wants(*beta) {
                    let acc = grad_slot(grads, *beta, self.value(*beta));
                    for row in gd.chunks_exact(c) {
                        axpy(acc, row, 1.0);
                    }
                }
                if self.wants(*x) {
                    let gm = self.value(*gamma).data().to_vec();
                    let acc = grad_slot(grads, *x, self.value(*x));
                    let cf = c as f64;
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for k in 0..c {
                            let d = gd[i * c + k] * gm[k];
                            dxhat[k] = d;
                            s1 += d;
                            s2 += d * xhat[i * c + k];
                        }
                        for k in 0..c {
                            acc[i * c + k] +=
                                inv_std[i] / cf * (cf * dxhat[k] - s1 - xhat[i * c + k] * s2);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2()?.1;
                    if self.wants(p) {
                        let acc = grad_slot(grads, p, self.value(p));
                        for i in 0..r {
                            axpy(
                                &mut acc[i * w..(i + 1) * w],
                                &gd[i * total + off..i * total + off + w],
                                1.0,
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::GatherRows { x, idx } => {
                if self.wants(*x) {
                    let c = self.value(*x).dims2()?.1;
                    let acc = grad_slot(grads, *x, self.value(*x));
                    for (e, &i) in idx.iter().enumerate() {
                        axpy(&mut acc[i * c..(i + 1) * c], &gd[e * c..(e + 1) * c], 1.0);
                    }
                }
            }
            Op::SegmentSumRows { x, seg } => {
                if self.wants(*x) {
                    let c = self.value(*x).dims2()?.1;
                    let acc = grad_slot(grads, *x, self.value(*x));
                    for (e, &s) in seg.iter().enumerate() {
                        axpy(&mut acc[e * c..(e + 1) * c], &gd[s * c..(s + 1) * c], 1.0);
                    }
                }
            }
            Op::L2NormRows(x) => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let c = tx.dims2()?.1;
                    let y = node.value.data();
                    let xd = tx.data();
                    let acc = grad_slot(grads, *x, tx);
                    for (i, &yi) in y.iter().enumerate() {
                        // Subgradient 0 at the origin.
                        if yi > 0.0 {
                            let s = gd[i] / yi;
                            for k in 0..c {
                                acc[i * c + k] += s * xd[i * c + k];
                            }
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let s = gd[0] / tx.numel() as f64;
                    for o in grad_slot(grads, *x, tx).iter_mut() {
                        *o += s;
                    }
                }
            }
            Op::SumAll(x) => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    for o in grad_slot(grads, *x, tx).iter_mut() {
                        *o += gd[0];
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    axpy(grad_slot(grads, *x, self.value(*x)), gd, 1.0);
                }
            }
            Op::BlendRows { w, vals } => {
                let (tw, tv) = (self.value(*w), self.value(*vals));
                let (r, j) = tw.dims2()?;
                let vc = tv.dims2()?.1;
                let d = vc / j;
                if self.wants(*w) {
                    let vd = tv.data();
                    let acc = grad_slot(grads, *w, tw);
                    for i in 0..r {
                        let grow = &gd[i * d..(i + 1) * d];
                        for jj in 0..j {
                            let block = &vd[i * vc + jj * d..i * vc + (jj + 1) * d];
                            acc[i * j + jj] += grow.iter().zip(block).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if self.wants(*vals) {
                    let wd = tw.data();
                    let acc = grad_slot(grads, *vals, tv);
                    for i in 0..r {
                        let grow = &gd[i * d..(i + 1) * d];
                        for jj in 0..j {
                            let wv = wd[i * j + jj];
                            axpy(&mut acc[i * vc + jj * d..i * vc + (jj + 1) * d], grow, wv);
                        }
                    }
                }
            }
            Op::RowNormalize { x, fell_back } => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let c = tx.dims2()?.1;
                    let y = node.value.data();
                    let sums: Vec<f64> = tx.data().chunks_exact(c).map(|r| r.iter().sum()).collect();
                    let acc = grad_slot(grads, *x, tx);
                    for (i, fb) in fell_back.iter().enumerate() {
                        if *fb {
                            continue;
                        }
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &gd[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            acc[i * c + k] += (gr[k] - dot) / sums[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| like.same_shape_zeros())
        .data_mut()
}

fn axpy(acc: &mut [f64], x: &[f64], a: f64) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn check_segments(op: &'static str, seg: &[usize], rows: usize, segments: usize) -> Result<()> {
    if seg.len() != rows {
        return Err(Error::shape(op, format!("{} segment ids for {rows} rows", seg.len())));
    }
    if let Some(bad) = seg.iter().find(|&&s| s >= segments) {
        return Err(Error::shape(op, format!("segment id {bad} >= {segments}")));
    }
    Ok(())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
