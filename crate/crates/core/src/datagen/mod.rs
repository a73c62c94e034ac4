//! Procedural rigs, pose sampling and the quasi-static relaxation oracle that
//! produces ground-truth cloth.

mod assets;
mod poses;
mod relax;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use assets::{joint_limits, make_asset, make_asset_with_dims, AssetKind};
pub use poses::{sample_poses, CLIP_FRAMES};
pub use relax::{build_springs, relax_cloth, ClothSim, RelaxOutcome, SimParams, Spring, SpringKind};

use crate::skinning::{Pose, RigAsset};
use crate::training::{Clip, Dataset, Sample};
use crate::Result;

/// Solver statistics for one generated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameReport {
    pub clip: usize,
    pub frame: usize,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub frames: Vec<FrameReport>,
}

impl GeneratedData {
    pub fn unconverged(&self) -> usize {
        self.frames.iter().filter(|f| !f.converged).count()
    }
}

/// Samples poses and relaxes the cloth frame to frame within each clip,
/// starting every clip from the template at the bind pose.
pub fn generate_dataset(asset: &RigAsset, pose_count: usize, seed: u64, params: &SimParams) -> Result<GeneratedData> {
    let sim = ClothSim::new(asset, params.clone())?;
    let clips = sample_poses(asset, pose_count, seed)?;
    let run = |(ci, poses): (usize, &Vec<Pose>)| -> Result<(Clip, Vec<FrameReport>)> {
        let mut prev_pose = Pose::identity(asset.joint_count());
        let mut prev = asset.cloth.clone();
        let mut samples = Vec::with_capacity(poses.len());
        let mut reports = Vec::with_capacity(poses.len());
        for (fi, pose) in poses.iter().enumerate() {
            let out = sim.relax(&prev_pose, pose, &prev)?;
            reports.push(FrameReport {
                clip: ci,
                frame: fi,
                converged: out.converged,
                iterations: out.iterations,
                residual: out.residual,
            });
            samples.push(Sample {
                pose: pose.clone(),
                gt: out.cloth.clone(),
            });
            prev = out.cloth;
            prev_pose = pose.clone();
        }
        Ok((
            Clip {
                name: clip_name(ci),
                samples,
            },
            reports,
        ))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(Clip, Vec<FrameReport>)>> = {
        use rayon::prelude::*;
        clips.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(Clip, Vec<FrameReport>)>> = clips.iter().enumerate().map(run).collect();

    let mut out_clips = Vec::with_capacity(results.len());
    let mut frames = Vec::new();
    for r in results {
        let (c, f) = r?;
        out_clips.push(c);
        frames.extend(f);
    }
    Ok(GeneratedData {
        dataset: Dataset::new(asset.clone(), out_clips)?,
        frames,
    })
}

pub fn clip_name(i: usize) -> String {
    format!("clip_{i:03}")
}
