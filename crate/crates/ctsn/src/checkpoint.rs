//! Named-tensor container: one JSON header line
//! `{"version", "dtype": "f64", "names", "shapes", "meta"}` followed by the
//! little-endian `f64` data of every tensor in header order.

use std::path::Path;

use ctsn_core::autodiff::Tensor;
use ctsn_core::network::{NetworkConfig, Streams};
use ctsn_core::training::{Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{in_file, write, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode_tensors(named: &[(String, Tensor)], meta: serde_json::Value) -> Vec<u8> {
    let header = Header {
        version: FORMAT_VERSION,
        dtype: "f64".into(),
        names: named.iter().map(|(n, _)| n.clone()).collect(),
        shapes: named.iter().map(|(_, t)| t.shape().to_vec()).collect(),
        meta,
    };
    let mut out = serde_json::to_vec(&header).expect("plain data always serializes");
    out.push(b'\n');
    for (_, t) in named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::schema(path, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.version != FORMAT_VERSION {
        return Err(Error::schema(
            path,
            format!("unsupported version {} (expected {FORMAT_VERSION})", header.version),
        ));
    }
    if header.dtype != "f64" {
        return Err(Error::schema(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.names.len() != header.shapes.len() {
        return Err(Error::schema(path, "names and shapes differ in length"));
    }
    let mut data = &bytes[nl + 1..];
    let mut named = Vec::with_capacity(header.names.len());
    for (name, shape) in header.names.into_iter().zip(header.shapes) {
        let n: usize = shape.iter().product();
        if data.len() < n * 8 {
            return Err(Error::schema(path, format!("data ends inside tensor {name}")));
        }
        let (block, rest) = data.split_at(n * 8);
        data = rest;
        let values = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        named.push((name, Tensor::new(shape, values).map_err(in_file(path))?));
    }
    if !data.is_empty() {
        return Err(Error::schema(path, format!("{} trailing bytes after the last tensor", data.len())));
    }
    Ok((named, header.meta))
}

/// Architecture and training settings stored alongside the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub joints: usize,
    pub cloth_vertices: usize,
    pub embed_dim: usize,
    pub mesh_basis: usize,
    pub pose_hidden: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vertex_hidden: usize,
    pub weight_residual: bool,
    #[serde(default)]
    pub training: Option<TrainingMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_a: usize,
    pub epochs_b: usize,
    pub smooth_lambda: f64,
    pub smooth_iters: usize,
    pub final_loss: f64,
}

impl ModelMeta {
    pub fn new(config: &NetworkConfig, weight_residual: bool) -> Self {
        ModelMeta {
            joints: config.joints,
            cloth_vertices: config.cloth_vertices,
            embed_dim: config.embed_dim,
            mesh_basis: config.mesh_basis,
            pose_hidden: config.pose_hidden.clone(),
            layers: config.layers,
            heads: config.heads,
            head_dim: config.head_dim,
            vertex_hidden: config.vertex_hidden,
            weight_residual,
            training: None,
        }
    }

    pub fn with_training(mut self, cfg: &TrainConfig, final_loss: f64) -> Self {
        self.training = Some(TrainingMeta {
            seed: cfg.seed,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            epochs_a: cfg.epochs_a,
            epochs_b: cfg.epochs_b,
            smooth_lambda: cfg.smooth_lambda,
            smooth_iters: cfg.smooth_iters,
            final_loss,
        });
        self
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            joints: self.joints,
            cloth_vertices: self.cloth_vertices,
            embed_dim: self.embed_dim,
            mesh_basis: self.mesh_basis,
            pose_hidden: self.pose_hidden.clone(),
            layers: self.layers,
            heads: self.heads,
            head_dim: self.head_dim,
            vertex_hidden: self.vertex_hidden,
        }
    }

    /// Streams to run at inference time.
    pub fn streams(&self) -> Streams {
        Streams {
            weight_residual: self.weight_residual,
            ..Streams::FULL
        }
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint, meta: &ModelMeta) -> Result<()> {
    let meta = serde_json::to_value(meta).expect("plain data always serializes");
    write(path, encode_tensors(&ck.named_tensors(), meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (named, meta) = decode_tensors(&bytes, path)?;
    let meta: ModelMeta =
        serde_json::from_value(meta).map_err(|e| Error::schema(path, format!("bad meta: {e}")))?;
    let ck = Checkpoint::from_named(meta.network_config(), named).map_err(in_file(path))?;
    Ok((ck, meta))
}
