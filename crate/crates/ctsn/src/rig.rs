//! Rig and pose JSON files.
//!
//! A rig file names its meshes relative to its own directory:
//!
//! ```json
//! {"joints": [{"name": "hip", "parent": -1, "bind": [1,0,0,0, 0,1,0,1, 0,0,1,0]}],
//!  "hip": 0, "body_obj": "body.obj", "cloth_obj": "cloth.obj",
//!  "body_weights": [[1.0], ...], "cloth_weights_init": null, "pinned": [0, 1]}
//! ```

use std::path::{Path, PathBuf};

use ctsn_core::math::Affine3;
use ctsn_core::skinning::{Joint, Pose, RigAsset, Skeleton, SkinningWeights};
use serde::{Deserialize, Serialize};

use crate::error::{in_file, read_to_string, write, Error, Result};
use crate::obj::{read_obj, write_obj};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    /// Parent index, `-1` for the root.
    pub parent: i64,
    /// Row-major 3x4 bind transform.
    pub bind: [f64; 12],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub joints: Vec<JointRecord>,
    pub hip: usize,
    pub body_obj: String,
    pub cloth_obj: String,
    pub body_weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub cloth_weights_init: Option<Vec<Vec<f64>>>,
    /// Cloth vertices held at their skinned positions during relaxation.
    #[serde(default)]
    pub pinned: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub transforms: Vec<[f64; 12]>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("plain data always serializes");
    s.push('\n');
    s
}

fn weights_from_rows(rows: &[Vec<f64>], what: &str, path: &Path) -> Result<SkinningWeights> {
    SkinningWeights::from_rows(rows).map_err(|e| match e {
        ctsn_core::Error::Validation(msg) => Error::schema(path, format!("{what}: {msg}")),
        other => other.into(),
    })
}

/// Builds the asset described by `rig`, loading meshes relative to `dir`.
pub fn asset_from_rig(rig: &RigFile, dir: &Path, path: &Path) -> Result<RigAsset> {
    let joints = rig
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let parent = match j.parent {
                -1 => None,
                p if p >= 0 => Some(p as usize),
                p => return Err(Error::schema(path, format!("joint {i} ({}): parent {p} is not -1 or an index", j.name))),
            };
            Ok(Joint {
                name: j.name.clone(),
                parent,
                bind: Affine3::from_row_major(&j.bind),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let skeleton = Skeleton::new(joints, rig.hip).map_err(in_file(path))?;
    let body = read_obj(&dir.join(&rig.body_obj))?;
    let cloth = read_obj(&dir.join(&rig.cloth_obj))?;
    let body_weights = weights_from_rows(&rig.body_weights, "body_weights", path)?;
    let cloth_init = rig
        .cloth_weights_init
        .as_deref()
        .map(|rows| weights_from_rows(rows, "cloth_weights_init", path))
        .transpose()?;
    RigAsset::new(skeleton, body, body_weights, cloth, cloth_init, rig.pinned.clone()).map_err(in_file(path))
}

pub fn read_rig(path: &Path) -> Result<RigAsset> {
    let rig: RigFile = parse_json(&read_to_string(path)?, path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    asset_from_rig(&rig, &dir, path)
}

pub fn rig_file(asset: &RigAsset, body_obj: &str, cloth_obj: &str) -> RigFile {
    let rows = |w: &SkinningWeights| (0..w.rows()).map(|r| w.row(r).to_vec()).collect();
    RigFile {
        joints: asset
            .skeleton
            .joints()
            .iter()
            .map(|j| JointRecord {
                name: j.name.clone(),
                parent: j.parent.map_or(-1, |p| p as i64),
                bind: j.bind.to_row_major(),
            })
            .collect(),
        hip: asset.skeleton.hip(),
        body_obj: body_obj.into(),
        cloth_obj: cloth_obj.into(),
        body_weights: rows(&asset.body_weights),
        cloth_weights_init: asset.cloth_weights_init.as_ref().map(rows),
        pinned: asset.pinned.clone(),
    }
}

/// Writes `path` plus `body.obj` and `cloth.obj` next to it.
pub fn write_rig(path: &Path, asset: &RigAsset) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new(""));
    write_obj(&dir.join("body.obj"), &asset.body)?;
    write_obj(&dir.join("cloth.obj"), &asset.cloth)?;
    write(path, to_json(&rig_file(asset, "body.obj", "cloth.obj")))
}

pub fn parse_pose(text: &str, path: &Path) -> Result<Pose> {
    let p: PoseFile = parse_json(text, path)?;
    let transforms = p.transforms.iter().map(Affine3::from_row_major).collect();
    Pose::new(transforms).map_err(in_file(path))
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    parse_pose(&read_to_string(path)?, path)
}

pub fn format_pose(pose: &Pose) -> String {
    to_json(&PoseFile {
        transforms: pose.transforms().iter().map(Affine3::to_row_major).collect(),
    })
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    write(path, format_pose(pose))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    parse_json(&read_to_string(path)?, path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, to_json(value))
}
