//! File formats and the command-line front end for `ctsn-core`.
//!
//! * [`obj`]: Wavefront OBJ meshes.
//! * [`rig`]: rig and pose JSON.
//! * [`checkpoint`]: the named-tensor checkpoint container.
//! * [`dataset`]: dataset directories written by `gen-data`.
//! * [`report`]: training-log and metrics CSV.
//! * [`cli`]: the `ctsn` subcommands.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod obj;
pub mod report;
pub mod rig;

pub use ctsn_core as core;
pub use error::{Error, Result};
