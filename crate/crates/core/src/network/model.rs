use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{GraphTopology, MeshGraph};
use super::infer;
use super::params::{init_params, LayerParams, Layout, Linear, NetworkConfig, ParamGroup, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::math::{self, Vec3};
use crate::mesh::Mesh;
use crate::skinning::{self, Pose, RigAsset, SkinningWeights};
use crate::spatial::{self, Binding};
use crate::{Error, Result};

/// Which parts of the network contribute to a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    pub skeleton: bool,
    pub mesh: bool,
    pub weight_residual: bool,
}

impl Streams {
    pub const FULL: Streams = Streams {
        skeleton: true,
        mesh: true,
        weight_residual: true,
    };
    /// Coarse stage: mesh stream frozen at zero.
    pub const COARSE: Streams = Streams {
        skeleton: true,
        mesh: false,
        weight_residual: true,
    };
}

/// Pose-independent data for one asset: templates, binding, initial cloth
/// weights and graph topology.
#[derive(Clone, Debug)]
pub struct ClothRig {
    pub cloth: Mesh,
    pub body_template: Vec<Vec3>,
    pub body_weights: SkinningWeights,
    pub binding: Binding,
    pub initial_weights: SkinningWeights,
    pub topology: Arc<GraphTopology>,
    template: Tensor,
    initial_weights_tensor: Tensor,
}

impl ClothRig {
    pub fn new(asset: &RigAsset) -> Result<Self> {
        let binding = spatial::bind_cloth_to_body(&asset.cloth, &asset.body)?;
        Self::with_binding(asset, binding)
    }

    pub fn with_binding(asset: &RigAsset, binding: Binding) -> Result<Self> {
        if binding.len() != asset.cloth.vertex_count() {
            return Err(Error::validation(format!(
                "binding has {} entries, cloth has {} vertices",
                binding.len(),
                asset.cloth.vertex_count()
            )));
        }
        let initial_weights = asset.initial_cloth_weights(&binding)?;
        let n = asset.cloth.vertex_count();
        let template = Tensor::matrix(n, 3, asset.cloth.vertices().iter().flatten().copied().collect())?;
        let initial_weights_tensor = Tensor::matrix(
            initial_weights.rows(),
            initial_weights.cols(),
            initial_weights.as_slice().to_vec(),
        )?;
        Ok(ClothRig {
            cloth: asset.cloth.clone(),
            body_template: asset.body.vertices().to_vec(),
            body_weights: asset.body_weights.clone(),
            binding,
            initial_weights,
            topology: Arc::new(GraphTopology::from_cloth(&asset.cloth)?),
            template,
            initial_weights_tensor,
        })
    }

    pub fn cloth_vertices(&self) -> usize {
        self.cloth.vertex_count()
    }

    pub fn joints(&self) -> usize {
        self.body_weights.cols()
    }

    pub fn posed_body(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        skinning::lbs_skin(&self.body_template, pose, &self.body_weights)
    }

    pub fn mesh_graph(&self, pose: &Pose) -> Result<MeshGraph> {
        let body = self.posed_body(pose)?;
        MeshGraph::with_topology(self.topology.clone(), &self.binding, &body)
    }

    /// Plain LBS of the template with the initial cloth weights.
    pub fn baseline(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        skinning::lbs_skin(self.cloth.vertices(), pose, &self.initial_weights)
    }
}

/// Attention coefficients and output of one graph-transformer layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub out: Var,
    /// `E x C`, one distribution over each destination's incoming edges per head.
    pub attention: Var,
}

/// Graph data placed on a tape.
pub struct GraphOnTape {
    pub nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge_features: Var,
    head_sum: Var,
    head_expand: Var,
    ones: Var,
}

impl GraphOnTape {
    pub fn new(tape: &mut Tape, topo: &GraphTopology, heads: usize, head_dim: usize) -> Result<Self> {
        let cd = heads * head_dim;
        let mut sum = vec![0.0; cd * heads];
        let mut expand = vec![0.0; heads * cd];
        for c in 0..heads {
            for t in 0..head_dim {
                sum[(c * head_dim + t) * heads + c] = 1.0;
                expand[c * cd + c * head_dim + t] = 1.0;
            }
        }
        Ok(GraphOnTape {
            nodes: topo.nodes,
            src: topo.src.clone(),
            dst: topo.dst.clone(),
            edge_features: tape.constant(topo.edge_features.clone()),
            head_sum: tape.constant(Tensor::matrix(cd, heads, sum)?),
            head_expand: tape.constant(Tensor::matrix(heads, cd, expand)?),
            ones: tape.constant(Tensor::ones(&[topo.nodes, 1])),
        })
    }
}

fn linear(tape: &mut Tape, x: Var, p: &[Var], l: &Linear) -> Result<Var> {
    let y = tape.matmul(x, p[l.w])?;
    tape.add(y, p[l.b])
}

/// Concatenated per-head projection `[W_1 | ... | W_C]`, `[b_1 | ... | b_C]`.
fn heads_linear(tape: &mut Tape, x: Var, p: &[Var], pick: impl Fn(&super::params::HeadParams) -> Linear, layer: &LayerParams) -> Result<Var> {
    let ws: Vec<Var> = layer.heads.iter().map(|h| p[pick(h).w]).collect();
    let bs: Vec<Var> = layer.heads.iter().map(|h| p[pick(h).b]).collect();
    let w = tape.concat_last_dim(&ws)?;
    let b = tape.concat_last_dim(&bs)?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Gated multi-head graph attention with edge features, layer norm and ReLU.
///
/// Per head `c`: `q_i = W_q h_i + b_q`, `k_j = W_k h_j + b_k`,
/// `e_ij = W_e e_ij + b_e`, score `q_i . (k_j + e_ij) / sqrt(d)` softmaxed over
/// the incoming edges of `i`, message `sum_j alpha_ij (v_j + e_ij)`. Heads are
/// concatenated into `h^`, mixed with the skip `r_i = W_r h_i + b_r` through
/// `beta_i = sigmoid(W_g [h^_i; r_i; h^_i - r_i])`, then
/// `ReLU(LayerNorm((1 - beta) h^ + beta r))`.
pub fn graph_transformer_layer(
    tape: &mut Tape,
    h: Var,
    graph: &GraphOnTape,
    p: &[Var],
    layer: &LayerParams,
    head_dim: usize,
) -> Result<LayerOutput> {
    let n = graph.nodes;
    if tape.value(h).rows() != n {
        return Err(Error::shape(
            "graph_transformer_layer",
            format!("{} feature rows for {n} nodes", tape.value(h).rows()),
        ));
    }
    let q = heads_linear(tape, h, p, |hp| hp.q, layer)?;
    let k = heads_linear(tape, h, p, |hp| hp.k, layer)?;
    let v = heads_linear(tape, h, p, |hp| hp.v, layer)?;
    let e = heads_linear(tape, graph.edge_features, p, |hp| hp.e, layer)?;

    let q_dst = tape.gather_rows(q, graph.dst.clone())?;
    let k_src = tape.gather_rows(k, graph.src.clone())?;
    let v_src = tape.gather_rows(v, graph.src.clone())?;
    let ke = tape.add(k_src, e)?;
    let prod = tape.mul(q_dst, ke)?;
    let scores = tape.matmul(prod, graph.head_sum)?;
    let scores = tape.scale(scores, 1.0 / math::sqrt(head_dim as f64))?;
    let attention = tape.segment_softmax(scores, graph.dst.clone(), n)?;

    let alpha = tape.matmul(attention, graph.head_expand)?;
    let ve = tape.add(v_src, e)?;
    let msg = tape.mul(alpha, ve)?;
    let h_hat = tape.segment_sum_rows(msg, graph.dst.clone(), n)?;

    let r = linear(tape, h, p, &layer.r)?;
    let diff = tape.sub(h_hat, r)?;
    let gate_in = tape.concat_last_dim(&[h_hat, r, diff])?;
    let g = tape.matmul(gate_in, p[layer.gate])?;
    let beta = tape.sigmoid(g)?;
    let keep = tape.sub(graph.ones, beta)?;
    let mix_w = tape.concat_last_dim(&[keep, beta])?;
    let mix_v = tape.concat_last_dim(&[h_hat, r])?;
    let mixed = tape.blend_rows(mix_w, mix_v)?;
    let normed = tape.layer_norm_rows(mixed, p[layer.ln_gamma], p[layer.ln_beta])?;
    let out = tape.relu(normed)?;
    Ok(LayerOutput { out, attention })
}

/// Pose embedding MLP: hidden layers with ReLU, linear output of width `m`.
pub fn pose_embedding_on_tape(tape: &mut Tape, feat: Var, p: &[Var], phi: &[Linear]) -> Result<Var> {
    let mut x = feat;
    for (i, l) in phi.iter().enumerate() {
        x = linear(tape, x, p, l)?;
        if i + 1 < phi.len() {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// `sum_j P_j B_j` as an `n x 3` tensor.
pub fn skeleton_residual_on_tape(tape: &mut Tape, embedding: Var, basis: &[Var], n: usize) -> Result<Var> {
    let (r, m) = tape.value(embedding).dims2()?;
    if r != 1 || m != basis.len() {
        return Err(Error::shape(
            "skeleton_residual",
            format!("embedding {r}x{m} for {} basis matrices", basis.len()),
        ));
    }
    let mut flat = Vec::with_capacity(basis.len());
    for &b in basis {
        flat.push(tape.reshape(b, &[1, 3 * n])?);
    }
    let vals = tape.concat_last_dim(&flat)?;
    let out = tape.blend_rows(embedding, vals)?;
    tape.reshape(out, &[n, 3])
}

/// Graph-transformer layers, vertex MLP and ReLU coefficients over the mesh basis.
pub fn mesh_residual_on_tape(
    tape: &mut Tape,
    graph: &GraphOnTape,
    node_features: Var,
    p: &[Var],
    layout: &Layout,
    config: &NetworkConfig,
) -> Result<Var> {
    let mut h = node_features;
    for layer in &layout.gt {
        h = graph_transformer_layer(tape, h, graph, p, layer, config.head_dim)?.out;
    }
    let coeffs = mesh_coefficients_on_tape(tape, h, p, &layout.vertex_mlp)?;
    let basis: Vec<Var> = layout.mesh_basis.iter().map(|&i| p[i]).collect();
    let vals = tape.concat_last_dim(&basis)?;
    tape.blend_rows(coeffs, vals)
}

fn mesh_coefficients_on_tape(tape: &mut Tape, h: Var, p: &[Var], mlp: &[Linear]) -> Result<Var> {
    let mut x = h;
    for l in mlp {
        x = linear(tape, x, p, l)?;
        x = tape.relu(x)?;
    }
    Ok(x)
}

/// `relu(W_I + dW)` with every row renormalized; rows that vanish fall back to `W_I`.
pub fn fuse_weights_on_tape(tape: &mut Tape, initial: &Tensor, residual: Var) -> Result<Var> {
    let w0 = tape.constant(initial.clone());
    let raw = tape.add(w0, residual)?;
    let pos = tape.relu(raw)?;
    tape.row_normalize(pos, initial)
}

/// Linear blend skinning of `vertices` (`n x 3`) with per-vertex weights
/// (`n x J`), in displacement form so identity transforms are exact.
pub fn skin_on_tape(tape: &mut Tape, vertices: Var, pose: &Pose, weights: Var) -> Result<Var> {
    let j = pose.joint_count();
    let mut rot = vec![0.0; 3 * 3 * j];
    let mut trans = vec![0.0; 3 * j];
    for (jj, g) in pose.transforms().iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                // (v . G)[3j + b] = sum_a v_a (R_j - I)[b][a]
                let id = if a == b { 1.0 } else { 0.0 };
                rot[a * 3 * j + 3 * jj + b] = g.m[b][a] - id;
            }
            trans[3 * jj + a] = g.m[a][3];
        }
    }
    let g = tape.constant(Tensor::matrix(3, 3 * j, rot)?);
    let t = tape.constant(Tensor::matrix(1, 3 * j, trans)?);
    let per_joint = tape.matmul(vertices, g)?;
    let per_joint = tape.add(per_joint, t)?;
    let d = tape.blend_rows(weights, per_joint)?;
    tape.add(vertices, d)
}

/// Trainable parameters plus their layout and architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let (params, layout) = init_params(&config, seed)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    /// Places every parameter on `tape`; only groups accepted by `trainable`
    /// receive gradients.
    pub fn params_on_tape(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .zip(self.params.groups())
            .map(|(t, g)| tape.leaf(t.clone(), trainable(*g)))
            .collect()
    }

    fn check_rig(&self, rig: &ClothRig) -> Result<()> {
        if rig.cloth_vertices() != self.config.cloth_vertices || rig.joints() != self.config.joints {
            return Err(Error::validation(format!(
                "model expects {} cloth vertices and {} joints, asset has {} and {}",
                self.config.cloth_vertices,
                self.config.joints,
                rig.cloth_vertices(),
                rig.joints()
            )));
        }
        Ok(())
    }

    /// Full forward pass on a tape; returns the predicted posed cloth (`n x 3`).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        rig: &ClothRig,
        pose: &Pose,
        streams: Streams,
    ) -> Result<Var> {
        self.forward_impl(tape, p, rig, pose, streams, false)
    }

    /// With `fused_mesh` the mesh residual is evaluated off the tape and
    /// enters as a constant.
    fn forward_impl(
        &self,
        tape: &mut Tape,
        p: &[Var],
        rig: &ClothRig,
        pose: &Pose,
        streams: Streams,
        fused_mesh: bool,
    ) -> Result<Var> {
        self.check_rig(rig)?;
        if pose.joint_count() != self.config.joints {
            return Err(Error::validation(format!(
                "pose has {} joints, model expects {}",
                pose.joint_count(),
                self.config.joints
            )));
        }
        let n = self.config.cloth_vertices;
        let mut template = tape.constant(rig.template.clone());

        if streams.skeleton {
            let feat = skinning::pose_to_feature(pose);
            let feat = tape.constant(Tensor::matrix(1, feat.len(), feat)?);
            let emb = pose_embedding_on_tape(tape, feat, p, &self.layout.phi)?;
            let basis: Vec<Var> = self.layout.skel_basis.iter().map(|&i| p[i]).collect();
            let ds = skeleton_residual_on_tape(tape, emb, &basis, n)?;
            template = tape.add(template, ds)?;
        }
        if streams.mesh {
            let graph = rig.mesh_graph(pose)?;
            let dm = if fused_mesh {
                let dm = infer::mesh_residual(
                    self.params.tensors(),
                    &self.layout,
                    &self.config,
                    &rig.topology,
                    &graph.node_features,
                )?;
                tape.constant(Tensor::matrix(n, 3, dm)?)
            } else {
                let g = GraphOnTape::new(tape, &rig.topology, self.config.heads, self.config.head_dim)?;
                let nodes = tape.constant(graph.node_features);
                mesh_residual_on_tape(tape, &g, nodes, p, &self.layout, &self.config)?
            };
            template = tape.add(template, dm)?;
        }
        let weights = if streams.weight_residual {
            fuse_weights_on_tape(tape, &rig.initial_weights_tensor, p[self.layout.dwc])?
        } else {
            tape.constant(rig.initial_weights_tensor.clone())
        };
        skin_on_tape(tape, template, pose, weights)
    }

    /// Predicted cloth vertices for one pose.
    pub fn predict_vertices(&self, rig: &ClothRig, pose: &Pose, streams: Streams) -> Result<Vec<Vec3>> {
        let mut tape = Tape::new();
        let p = self.params_on_tape(&mut tape, |_| false);
        let out = self.forward_impl(&mut tape, &p, rig, pose, streams, true)?;
        Ok(rows3(tape.value(out)))
    }

    /// Predicted cloth mesh `M_C(gamma)`; topology is the template's.
    pub fn forward(&self, rig: &ClothRig, pose: &Pose) -> Result<Mesh> {
        rig.cloth.with_vertices(self.predict_vertices(rig, pose, Streams::FULL)?)
    }

    /// `P = Phi(feature)`.
    pub fn pose_embedding(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.config.feature_len() {
            return Err(Error::validation(format!(
                "pose feature has length {}, expected {}",
                feature.len(),
                self.config.feature_len()
            )));
        }
        let mut tape = Tape::new();
        let p = self.params_on_tape(&mut tape, |_| false);
        let f = tape.constant(Tensor::matrix(1, feature.len(), feature.to_vec())?);
        let out = pose_embedding_on_tape(&mut tape, f, &p, &self.layout.phi)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `Delta_S = sum_j P_j B_j`.
    pub fn skeleton_residual(&self, embedding: &[f64]) -> Result<Vec<Vec3>> {
        if embedding.len() != self.layout.skel_basis.len() {
            return Err(Error::validation(format!(
                "embedding has {} entries for {} basis matrices",
                embedding.len(),
                self.layout.skel_basis.len()
            )));
        }
        let mut tape = Tape::new();
        let p = self.params_on_tape(&mut tape, |_| false);
        let e = tape.constant(Tensor::matrix(1, embedding.len(), embedding.to_vec())?);
        let basis: Vec<Var> = self.layout.skel_basis.iter().map(|&i| p[i]).collect();
        let out = skeleton_residual_on_tape(&mut tape, e, &basis, self.config.cloth_vertices)?;
        Ok(rows3(tape.value(out)))
    }

    /// `Delta_M` for a mesh graph.
    pub fn mesh_residual(&self, graph: &MeshGraph) -> Result<Vec<Vec3>> {
        if graph.topology.nodes != self.config.cloth_vertices {
            return Err(Error::validation(format!(
                "graph has {} nodes, model expects {}",
                graph.topology.nodes, self.config.cloth_vertices
            )));
        }
        let out = infer::mesh_residual(
            self.params.tensors(),
            &self.layout,
            &self.config,
            &graph.topology,
            &graph.node_features,
        )?;
        Ok(out.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
    }

    /// The fused cloth weights `W_C` for this model's weight residual.
    pub fn fused_weights(&self, rig: &ClothRig) -> Result<SkinningWeights> {
        fuse_weights(&rig.initial_weights, &self.params.tensors()[self.layout.dwc])
    }
}

/// Clamp-and-renormalize fusion of initial weights and a residual.
pub fn fuse_weights(initial: &SkinningWeights, residual: &Tensor) -> Result<SkinningWeights> {
    if residual.dims2()? != (initial.rows(), initial.cols()) {
        return Err(Error::validation(format!(
            "weight residual is {:?}, initial weights are {}x{}",
            residual.shape(),
            initial.rows(),
            initial.cols()
        )));
    }
    let mut tape = Tape::new();
    let init = Tensor::matrix(initial.rows(), initial.cols(), initial.as_slice().to_vec())?;
    let r = tape.constant(residual.clone());
    let out = fuse_weights_on_tape(&mut tape, &init, r)?;
    let t = tape.value(out);
    // Rows are exact quotients by their own sum; accept them as-is.
    SkinningWeights::new(initial.rows(), initial.cols(), t.data().to_vec())
}

fn rows3(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}
