use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::params::EDGE_FEATURES;
use crate::autodiff::Tensor;
use crate::math::{self, Vec3};
use crate::mesh::Mesh;
use crate::spatial::Binding;
use crate::{Error, Result};

/// Pose-independent part of the cloth graph: directed edges in both
/// directions plus a self-loop per node, sorted by `(dst, src)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    pub nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `E x 4`: `[x_src - x_dst, |x_src - x_dst|]` on the rest cloth, zeros on self-loops.
    pub edge_features: Tensor,
}

impl GraphTopology {
    pub fn from_cloth(cloth: &Mesh) -> Result<Self> {
        let n = cloth.vertex_count();
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(2 * cloth.edges().len() + n);
        for &[a, b] in cloth.edges() {
            pairs.push((b, a));
            pairs.push((a, b));
        }
        pairs.extend((0..n).map(|i| (i, i)));
        // (dst, src) order.
        pairs.sort_unstable();
        let rest = cloth.vertices();
        let mut feats = Vec::with_capacity(pairs.len() * EDGE_FEATURES);
        for &(d, s) in &pairs {
            let v = math::sub(rest[s], rest[d]);
            feats.extend_from_slice(&[v[0], v[1], v[2], math::norm(v)]);
        }
        let edge_features = Tensor::matrix(pairs.len(), EDGE_FEATURES, feats)?;
        Ok(GraphTopology {
            nodes: n,
            dst: pairs.iter().map(|p| p.0).collect(),
            src: pairs.iter().map(|p| p.1).collect(),
            edge_features,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// Cloth-topology graph whose node features are the posed positions of each
/// cloth vertex's bound body vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshGraph {
    pub topology: Arc<GraphTopology>,
    /// `n x 3`.
    pub node_features: Tensor,
}

impl MeshGraph {
    pub fn with_topology(topology: Arc<GraphTopology>, binding: &Binding, posed_body: &[Vec3]) -> Result<Self> {
        if binding.len() != topology.nodes {
            return Err(Error::validation(format!(
                "binding has {} entries for {} cloth vertices",
                binding.len(),
                topology.nodes
            )));
        }
        let mut data = Vec::with_capacity(binding.len() * 3);
        for (i, &b) in binding.indices().iter().enumerate() {
            let p = posed_body.get(b).ok_or_else(|| {
                Error::validation(format!(
                    "binding entry {i} = {b} exceeds posed body size {}",
                    posed_body.len()
                ))
            })?;
            data.extend_from_slice(p);
        }
        Ok(MeshGraph {
            topology,
            node_features: Tensor::matrix(binding.len(), 3, data)?,
        })
    }
}

/// Builds the mesh graph for one posed body.
pub fn build_mesh_graph(binding: &Binding, posed_body: &[Vec3], cloth: &Mesh) -> Result<MeshGraph> {
    let topo = Arc::new(GraphTopology::from_cloth(cloth)?);
    MeshGraph::with_topology(topo, binding, posed_body)
}
