//! The two-stream skinning network.
//!
//! The cloth template is displaced by a pose-driven skeleton residual and a
//! graph-transformer mesh residual, then skinned with fused cloth weights:
//!
//! ```text
//! M_C(gamma) = LBS(T_C + Delta_S(gamma) + Delta_M(gamma), gamma, W_C)
//! ```

mod check;
mod graph;
mod infer;
mod model;
mod params;

pub use check::{check_config, check_model_gradients, jitter_params, reference_gradient_check, tiny_asset, GroupCheck};
pub use graph::{build_mesh_graph, GraphTopology, MeshGraph};
pub use model::{
    fuse_weights, fuse_weights_on_tape, graph_transformer_layer, mesh_residual_on_tape,
    pose_embedding_on_tape, skeleton_residual_on_tape, skin_on_tape, ClothRig, GraphOnTape,
    LayerOutput, Model, Streams,
};
pub use params::{
    init_params, HeadParams, LayerParams, Layout, Linear, NetworkConfig, ParamGroup, ParamStore,
    EDGE_FEATURES,
};

