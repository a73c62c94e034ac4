//! Two-stream skinning network for predicting cloth deformation on
//! skeleton-rigged characters.
//!
//! The crate is `no_std` + `alloc`. Everything that touches the file system
//! (OBJ, rig JSON, checkpoints, dataset directories) and the command line
//! lives in the companion `ctsn` crate.
//!
//! Layout:
//!
//! * [`mesh`]: triangle meshes, adjacency, normals, Laplacian smoothing and
//!   low/high frequency splitting.
//! * [`skinning`]: skeletons, poses, skinning weights and linear blend skinning.
//! * [`spatial`]: KD-tree nearest vertex queries and exact closest surface
//!   point queries.
//! * [`autodiff`]: a small tape-based reverse-mode engine with Adam.
//! * [`network`]: the skeleton stream, the graph-transformer mesh stream and
//!   skinning weight fusion.
//! * [`training`]: loss, clip split and the two-stage training loop.
//! * [`datagen`]: procedural rigs and the quasi-static relaxation oracle.
//! * [`postprocess`]: penetration handling and error metrics.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod datagen;
mod error;
pub mod math;
pub mod mesh;
pub mod network;
pub mod postprocess;
pub mod skinning;
pub mod spatial;
pub mod training;

pub use error::{Error, Result};
