//! Tape-free evaluation of the mesh stream for inference.
//!
//! Walks each destination's incoming edges in place instead of materializing
//! `E x C*d` edge tensors. Every value is accumulated in the same order as the
//! tape primitives, so results match [`mesh_residual_on_tape`] bit for bit.
//!
//! [`mesh_residual_on_tape`]: super::mesh_residual_on_tape

use alloc::vec;
use alloc::vec::Vec;

use super::graph::GraphTopology;
use super::params::{HeadParams, LayerParams, Layout, Linear, NetworkConfig, EDGE_FEATURES};
use crate::autodiff::{matmul_raw, sigmoid, Tensor, LAYER_NORM_EPS};
use crate::math;
use crate::{Error, Result};

fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (x, bb) in row.iter_mut().zip(b) {
            *x += bb;
        }
    }
}

fn linear(x: &[f64], rows: usize, t: &[Tensor], l: &Linear) -> Vec<f64> {
    let w = &t[l.w];
    let mut y = matmul_raw(x, w.data(), rows, w.rows(), w.cols());
    add_bias(&mut y, t[l.b].data());
    y
}

/// `[W_1 | ... | W_C]` and `[b_1 | ... | b_C]`.
fn concat_heads(t: &[Tensor], heads: &[HeadParams], pick: impl Fn(&HeadParams) -> Linear) -> (Vec<f64>, Vec<f64>, usize) {
    let k = t[pick(&heads[0]).w].rows();
    let widths: Vec<usize> = heads.iter().map(|h| t[pick(h).w].cols()).collect();
    let total: usize = widths.iter().sum();
    let mut w = vec![0.0; k * total];
    let mut b = Vec::with_capacity(total);
    let mut off = 0;
    for (h, &wd) in heads.iter().zip(&widths) {
        let l = pick(h);
        let src = t[l.w].data();
        for i in 0..k {
            w[i * total + off..i * total + off + wd].copy_from_slice(&src[i * wd..(i + 1) * wd]);
        }
        b.extend_from_slice(t[l.b].data());
        off += wd;
    }
    (w, b, total)
}

fn heads_linear(x: &[f64], rows: usize, t: &[Tensor], heads: &[HeadParams], pick: impl Fn(&HeadParams) -> Linear) -> Vec<f64> {
    let (w, b, total) = concat_heads(t, heads, pick);
    let mut y = matmul_raw(x, &w, rows, w.len() / total, total);
    add_bias(&mut y, &b);
    y
}

fn layer(t: &[Tensor], h: &[f64], topo: &GraphTopology, lp: &LayerParams, head_dim: usize) -> Vec<f64> {
    let n = topo.nodes;
    let heads = lp.heads.len();
    let cd = heads * head_dim;
    let q = heads_linear(h, n, t, &lp.heads, |hp| hp.q);
    let k = heads_linear(h, n, t, &lp.heads, |hp| hp.k);
    let v = heads_linear(h, n, t, &lp.heads, |hp| hp.v);
    let (we, be, _) = concat_heads(t, &lp.heads, |hp| hp.e);
    let ef = topo.edge_features.data();
    let inv_sqrt_d = 1.0 / math::sqrt(head_dim as f64);

    let mut h_hat = vec![0.0; n * cd];
    let mut e_rows: Vec<f64> = Vec::new();
    let mut att: Vec<f64> = Vec::new();
    let edges = topo.dst.len();
    let mut start = 0;
    while start < edges {
        let i = topo.dst[start];
        let mut end = start;
        while end < edges && topo.dst[end] == i {
            end += 1;
        }
        let m = end - start;
        let mut e_proj = matmul_raw(&ef[start * EDGE_FEATURES..end * EDGE_FEATURES], &we, m, EDGE_FEATURES, cd);
        add_bias(&mut e_proj, &be);
        e_rows.clear();
        e_rows.extend_from_slice(&e_proj);

        att.clear();
        att.resize(m * heads, 0.0);
        let qi = &q[i * cd..(i + 1) * cd];
        for (r, e) in (start..end).enumerate() {
            let ks = &k[topo.src[e] * cd..(topo.src[e] + 1) * cd];
            let er = &e_rows[r * cd..(r + 1) * cd];
            for c in 0..heads {
                let mut s = 0.0;
                for col in c * head_dim..(c + 1) * head_dim {
                    let p = qi[col] * (ks[col] + er[col]);
                    if p != 0.0 {
                        s += p;
                    }
                }
                att[r * heads + c] = s * inv_sqrt_d;
            }
        }
        for c in 0..heads {
            let mut max = f64::NEG_INFINITY;
            for r in 0..m {
                max = max.max(att[r * heads + c]);
            }
            let mut sum = 0.0;
            for r in 0..m {
                let x = math::exp(att[r * heads + c] - max);
                att[r * heads + c] = x;
                sum += x;
            }
            for r in 0..m {
                att[r * heads + c] /= sum;
            }
        }
        let out = &mut h_hat[i * cd..(i + 1) * cd];
        for (r, e) in (start..end).enumerate() {
            let vs = &v[topo.src[e] * cd..(topo.src[e] + 1) * cd];
            let er = &e_rows[r * cd..(r + 1) * cd];
            for c in 0..heads {
                let a = att[r * heads + c];
                for col in c * head_dim..(c + 1) * head_dim {
                    out[col] += a * (vs[col] + er[col]);
                }
            }
        }
        start = end;
    }

    let r = linear(h, n, t, &lp.r);
    let mut gate_in = vec![0.0; n * 3 * cd];
    for i in 0..n {
        let row = &mut gate_in[i * 3 * cd..(i + 1) * 3 * cd];
        for col in 0..cd {
            let (a, b) = (h_hat[i * cd + col], r[i * cd + col]);
            row[col] = a;
            row[cd + col] = b;
            row[2 * cd + col] = a - b;
        }
    }
    let gate = &t[lp.gate];
    let g = matmul_raw(&gate_in, gate.data(), n, 3 * cd, 1);
    let (gamma, beta_ln) = (t[lp.ln_gamma].data(), t[lp.ln_beta].data());
    let mut out = vec![0.0; n * cd];
    let mut mixed = vec![0.0; cd];
    for i in 0..n {
        let beta = sigmoid(g[i]);
        let keep = 1.0 - beta;
        for col in 0..cd {
            let mut o = 0.0;
            o += keep * h_hat[i * cd + col];
            o += beta * r[i * cd + col];
            mixed[col] = o;
        }
        let mean = mixed.iter().sum::<f64>() / cd as f64;
        let var = mixed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cd as f64;
        let inv = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
        for col in 0..cd {
            let y = (mixed[col] - mean) * inv * gamma[col] + beta_ln[col];
            out[i * cd + col] = if y > 0.0 { y } else { 0.0 };
        }
    }
    out
}

/// `Delta_M` (`n x 3`, row-major) for node features of a posed graph.
pub(crate) fn mesh_residual(
    t: &[Tensor],
    layout: &Layout,
    config: &NetworkConfig,
    topo: &GraphTopology,
    node_features: &Tensor,
) -> Result<Vec<f64>> {
    let n = topo.nodes;
    let mut h = node_features.data().to_vec();
    for lp in &layout.gt {
        h = layer(t, &h, topo, lp, config.head_dim);
    }
    for l in &layout.vertex_mlp {
        h = linear(&h, n, t, l);
        for x in h.iter_mut() {
            *x = if *x > 0.0 { *x } else { 0.0 };
        }
    }
    let k = layout.mesh_basis.len();
    let mut out = vec![0.0; n * 3];
    for i in 0..n {
        let o = &mut out[i * 3..(i + 1) * 3];
        for (j, &bi) in layout.mesh_basis.iter().enumerate() {
            let w = h[i * k + j];
            let b = &t[bi].data()[i * 3..(i + 1) * 3];
            for d in 0..3 {
                o[d] += w * b[d];
            }
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "mesh_residual" });
    }
    Ok(out)
}
