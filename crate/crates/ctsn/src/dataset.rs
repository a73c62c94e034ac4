//! Dataset directories:
//!
//! ```text
//! asset.json  body.obj  cloth.obj  meta.json
//! clips/<clip>/<frame>.pose.json
//! clips/<clip>/<frame>.gt.obj
//! ```

use std::path::{Path, PathBuf};

use ctsn_core::datagen::{AssetKind, GeneratedData, SimParams};
use ctsn_core::training::{Clip, Dataset, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{in_file, Error, Result};
use crate::obj::{read_obj, write_obj};
use crate::rig::{read_json, read_pose, read_rig, write_json, write_pose, write_rig};

pub const GENERATOR_VERSION: &str = concat!("ctsn ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub structural: f64,
    pub shear: f64,
    pub bend: f64,
    pub gravity: [f64; 3],
    pub density: f64,
    pub step_size: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub margin: f64,
    pub substeps: usize,
}

impl From<&SimParams> for SimRecord {
    fn from(p: &SimParams) -> Self {
        SimRecord {
            structural: p.structural,
            shear: p.shear,
            bend: p.bend,
            gravity: p.gravity,
            density: p.density,
            step_size: p.step_size,
            tolerance: p.tolerance,
            max_iters: p.max_iters,
            margin: p.margin,
            substeps: p.substeps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator_version: String,
    pub seed: u64,
    pub asset_kind: String,
    pub resolution: usize,
    pub poses: usize,
    pub params: SimRecord,
    /// `<clip>/<frame>` of every frame whose relaxation hit the iteration cap.
    pub unconverged: Vec<String>,
}

impl DatasetMeta {
    pub fn new(kind: AssetKind, resolution: usize, seed: u64, params: &SimParams, data: &GeneratedData) -> Self {
        DatasetMeta {
            generator_version: GENERATOR_VERSION.into(),
            seed,
            asset_kind: kind.name().into(),
            resolution,
            poses: data.dataset.sample_count(),
            params: params.into(),
            unconverged: data
                .frames
                .iter()
                .filter(|f| !f.converged)
                .map(|f| format!("{}/{}", data.dataset.clips[f.clip].name, frame_stem(f.frame)))
                .collect(),
        }
    }
}

pub fn frame_stem(frame: usize) -> String {
    format!("{frame:03}")
}

pub fn pose_path(dir: &Path, clip: &str, frame: usize) -> PathBuf {
    dir.join("clips").join(clip).join(format!("{}.pose.json", frame_stem(frame)))
}

pub fn gt_path(dir: &Path, clip: &str, frame: usize) -> PathBuf {
    dir.join("clips").join(clip).join(format!("{}.gt.obj", frame_stem(frame)))
}

pub fn write_dataset(dir: &Path, ds: &Dataset, meta: &DatasetMeta) -> Result<()> {
    write_rig(&dir.join("asset.json"), &ds.asset)?;
    for clip in &ds.clips {
        for (f, s) in clip.samples.iter().enumerate() {
            write_pose(&pose_path(dir, &clip.name, f), &s.pose)?;
            write_obj(&gt_path(dir, &clip.name, f), &s.gt)?;
        }
    }
    write_json(&dir.join("meta.json"), meta)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    read_json(&dir.join("meta.json"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads every clip in name order and every frame in file-name order.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let asset = read_rig(&dir.join("asset.json"))?;
    let clips_dir = dir.join("clips");
    let mut clips = Vec::new();
    for clip_dir in sorted_entries(&clips_dir)? {
        if !clip_dir.is_dir() {
            continue;
        }
        let name = clip_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::schema(&clip_dir, "clip directory name is not UTF-8"))?
            .to_string();
        let mut samples = Vec::new();
        for file in sorted_entries(&clip_dir)? {
            let Some(stem) = file
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".pose.json"))
            else {
                continue;
            };
            let gt = clip_dir.join(format!("{stem}.gt.obj"));
            if !gt.exists() {
                return Err(Error::schema(&file, format!("no ground truth {}", gt.display())));
            }
            samples.push(Sample {
                pose: read_pose(&file)?,
                gt: read_obj(&gt)?,
            });
        }
        if samples.is_empty() {
            return Err(Error::schema(&clip_dir, "clip has no frames"));
        }
        clips.push(Clip { name, samples });
    }
    if clips.is_empty() {
        return Err(Error::schema(&clips_dir, "dataset has no clips"));
    }
    Dataset::new(asset, clips).map_err(in_file(dir))
}
