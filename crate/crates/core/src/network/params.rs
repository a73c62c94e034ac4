use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::math;
use crate::{Error, Result};

/// Edge feature width: rest edge vector plus rest length.
pub const EDGE_FEATURES: usize = 4;

/// Architecture hyperparameters. Everything except `joints` and
/// `cloth_vertices` has a default matching the reference setup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub joints: usize,
    pub cloth_vertices: usize,
    /// Pose embedding width `m`.
    pub embed_dim: usize,
    /// Number of mesh basis matrices `k`.
    pub mesh_basis: usize,
    pub pose_hidden: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vertex_hidden: usize,
}

impl NetworkConfig {
    pub fn new(joints: usize, cloth_vertices: usize) -> Self {
        NetworkConfig {
            joints,
            cloth_vertices,
            embed_dim: 32,
            mesh_basis: 128,
            pose_hidden: alloc::vec![64, 64],
            layers: 2,
            heads: 4,
            head_dim: 16,
            vertex_hidden: 64,
        }
    }

    pub fn feature_len(&self) -> usize {
        12 * self.joints
    }

    /// Width of the concatenated attention heads, `C * d`.
    pub fn hidden_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.joints, "joints"),
            (self.cloth_vertices, "cloth_vertices"),
            (self.embed_dim, "embed_dim (m)"),
            (self.mesh_basis, "mesh_basis (k)"),
            (self.heads, "heads"),
            (self.head_dim, "head_dim"),
            (self.vertex_hidden, "vertex_hidden"),
        ];
        for (v, name) in checks {
            if v == 0 {
                return Err(Error::validation(format!("network config: {name} must be >= 1")));
            }
        }
        if self.pose_hidden.contains(&0) {
            return Err(Error::validation("network config: hidden widths must be >= 1"));
        }
        Ok(())
    }
}

/// Which stream a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    PoseEmbedding,
    SkeletonBasis,
    GraphTransformer,
    VertexMlp,
    MeshBasis,
    WeightResidual,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::PoseEmbedding,
        ParamGroup::SkeletonBasis,
        ParamGroup::GraphTransformer,
        ParamGroup::VertexMlp,
        ParamGroup::MeshBasis,
        ParamGroup::WeightResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::PoseEmbedding => "pose-embedding",
            ParamGroup::SkeletonBasis => "skeleton-basis",
            ParamGroup::GraphTransformer => "graph-transformer",
            ParamGroup::VertexMlp => "vertex-mlp",
            ParamGroup::MeshBasis => "mesh-basis",
            ParamGroup::WeightResidual => "weight-residual",
        }
    }

    /// Skeleton stream plus weight residual; trained first.
    pub fn is_coarse(self) -> bool {
        matches!(
            self,
            ParamGroup::PoseEmbedding | ParamGroup::SkeletonBasis | ParamGroup::WeightResidual
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub e: Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub r: Linear,
    pub gate: usize,
    pub ln_gamma: usize,
    pub ln_beta: usize,
}

/// Indices of every named tensor, resolved once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub phi: Vec<Linear>,
    pub skel_basis: Vec<usize>,
    pub gt: Vec<LayerParams>,
    pub vertex_mlp: Vec<Linear>,
    pub mesh_basis: Vec<usize>,
    pub dwc: usize,
}

/// Ordered named tensors with their stream membership.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == group).collect()
    }

    /// Replaces every tensor from `(name, tensor)` pairs; names and shapes
    /// must match this store exactly.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.names.len() {
            return Err(Error::validation(format!(
                "checkpoint holds {} tensors, model expects {}",
                named.len(),
                self.names.len()
            )));
        }
        for (name, t) in named {
            let j = self
                .index_of(name)
                .ok_or_else(|| Error::validation(format!("unknown tensor name {name}")))?;
            if self.tensors[j].shape() != t.shape() {
                return Err(Error::validation(format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[j].shape()
                )));
            }
            self.tensors[j] = t.clone();
        }
        Ok(())
    }
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, group: ParamGroup, t: Tensor) -> usize {
        self.store.names.push(name);
        self.store.groups.push(group);
        self.store.tensors.push(t);
        self.store.tensors.len() - 1
    }

    fn uniform(&mut self, rows: usize, cols: usize, fan_in: usize) -> Tensor {
        let s = 1.0 / math::sqrt(fan_in as f64);
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-s..s)).collect();
        Tensor::new(alloc::vec![rows, cols], data).expect("sized by construction")
    }

    fn linear(&mut self, prefix: &str, group: ParamGroup, fan_in: usize, out: usize) -> Linear {
        let w = self.uniform(fan_in, out, fan_in);
        let w = self.push(format!("{prefix}.w"), group, w);
        let b = self.push(format!("{prefix}.b"), group, Tensor::zeros(&[1, out]));
        Linear { w, b }
    }
}

/// Creates every tensor in a fixed order from `seed`.
///
/// Dense weights are `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases and
/// layer-norm shifts zero, layer-norm scales one, and both residual bases and
/// the weight residual zero, so the untrained network is plain LBS.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<(ParamStore, Layout)> {
    config.validate()?;
    let mut b = Builder {
        store: ParamStore {
            names: Vec::new(),
            groups: Vec::new(),
            tensors: Vec::new(),
        },
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let n = config.cloth_vertices;

    let mut phi = Vec::new();
    let mut width = config.feature_len();
    let mut widths: Vec<usize> = config.pose_hidden.clone();
    widths.push(config.embed_dim);
    for (l, &out) in widths.iter().enumerate() {
        phi.push(b.linear(&format!("phi.l{l}"), ParamGroup::PoseEmbedding, width, out));
        width = out;
    }

    let skel_basis = (0..config.embed_dim)
        .map(|j| b.push(format!("skel_basis.{j}"), ParamGroup::SkeletonBasis, Tensor::zeros(&[n, 3])))
        .collect();

    let cd = config.hidden_width();
    let mut gt = Vec::new();
    let mut feat = 3;
    for l in 0..config.layers {
        let g = ParamGroup::GraphTransformer;
        let heads = (0..config.heads)
            .map(|c| {
                let p = format!("gt.l{l}.h{c}");
                HeadParams {
                    q: b.linear_named(&p, "wq", "bq", g, feat, config.head_dim),
                    k: b.linear_named(&p, "wk", "bk", g, feat, config.head_dim),
                    v: b.linear_named(&p, "wv", "bv", g, feat, config.head_dim),
                    e: b.linear_named(&p, "we", "be", g, EDGE_FEATURES, config.head_dim),
                }
            })
            .collect();
        let p = format!("gt.l{l}");
        let r = b.linear_named(&p, "wr", "br", g, feat, cd);
        let gw = b.uniform(3 * cd, 1, 3 * cd);
        let gate = b.push(format!("{p}.wg"), g, gw);
        let ln_gamma = b.push(format!("{p}.ln_gamma"), g, Tensor::ones(&[1, cd]));
        let ln_beta = b.push(format!("{p}.ln_beta"), g, Tensor::zeros(&[1, cd]));
        gt.push(LayerParams {
            heads,
            r,
            gate,
            ln_gamma,
            ln_beta,
        });
        feat = cd;
    }

    let vertex_mlp = alloc::vec![
        b.linear("vmlp.l0", ParamGroup::VertexMlp, feat, config.vertex_hidden),
        b.linear("vmlp.l1", ParamGroup::VertexMlp, config.vertex_hidden, config.mesh_basis),
    ];

    let mesh_basis = (0..config.mesh_basis)
        .map(|j| b.push(format!("mesh_basis.{j}"), ParamGroup::MeshBasis, Tensor::zeros(&[n, 3])))
        .collect();

    let dwc = b.push(
        "dwc".into(),
        ParamGroup::WeightResidual,
        Tensor::zeros(&[n, config.joints]),
    );

    Ok((
        b.store,
        Layout {
            phi,
            skel_basis,
            gt,
            vertex_mlp,
            mesh_basis,
            dwc,
        },
    ))
}

impl Builder {
    fn linear_named(
        &mut self,
        prefix: &str,
        wname: &str,
        bname: &str,
        group: ParamGroup,
        fan_in: usize,
        out: usize,
    ) -> Linear {
        let w = self.uniform(fan_in, out, fan_in);
        let w = self.push(format!("{prefix}.{wname}"), group, w);
        let b = self.push(format!("{prefix}.{bname}"), group, Tensor::zeros(&[1, out]));
        Linear { w, b }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_stable_and_unique() {
        let cfg = NetworkConfig::new(3, 10);
        let (store, layout) = init_params(&cfg, 1).unwrap();
        for name in ["phi.l0.w", "skel_basis.3", "gt.l1.h2.wq", "mesh_basis.17", "dwc"] {
            assert!(store.index_of(name).is_some(), "{name}");
        }
        let mut names = store.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), store.len());
        assert_eq!(layout.skel_basis.len(), 32);
        assert_eq!(layout.mesh_basis.len(), 128);
        assert_eq!(store.tensors()[layout.dwc].shape(), &[10, 3]);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = NetworkConfig::new(2, 5);
        assert_eq!(init_params(&cfg, 9).unwrap().0, init_params(&cfg, 9).unwrap().0);
        assert_ne!(init_params(&cfg, 9).unwrap().0, init_params(&cfg, 10).unwrap().0);
    }

    #[test]
    fn zero_sized_config_rejected() {
        let mut cfg = NetworkConfig::new(2, 5);
        cfg.embed_dim = 0;
        assert!(init_params(&cfg, 0).is_err());
    }
}
