use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assets::joint_limits;
use crate::math::{self, Affine3};
use crate::skinning::{center_pose, Pose, RigAsset};
use crate::Result;

/// Frames per sampled clip.
pub const CLIP_FRAMES: usize = 16;

/// Smooth random motion: every joint axis follows `A sin(w t)` with a random
/// bounded amplitude and frequency, so frame 0 of each clip is the bind pose.
/// Poses are grouped into clips of 16 frames; the last clip may be shorter.
pub fn sample_poses(asset: &RigAsset, count: usize, seed: u64) -> Result<Vec<Vec<Pose>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skel = &asset.skeleton;
    let mut clips = Vec::new();
    let mut left = count;
    while left > 0 {
        let frames = left.min(CLIP_FRAMES);
        left -= frames;
        let params: Vec<[(f64, f64); 3]> = skel
            .joints()
            .iter()
            .map(|j| {
                let lim = joint_limits(&j.name);
                core::array::from_fn(|a| {
                    let amp = if lim[a] > 0.0 { rng.gen_range(-lim[a]..lim[a]) } else { 0.0 };
                    (amp, rng.gen_range(0.15..0.45))
                })
            })
            .collect();
        let mut clip = Vec::with_capacity(frames);
        for t in 0..frames {
            let local: Vec<Affine3> = params
                .iter()
                .map(|axes| {
                    let angle = |a: usize| axes[a].0 * math::sin(axes[a].1 * t as f64);
                    Affine3::rotation([0.0, 0.0, 1.0], angle(2))
                        .compose(&Affine3::rotation([0.0, 1.0, 0.0], angle(1)))
                        .compose(&Affine3::rotation([1.0, 0.0, 0.0], angle(0)))
                })
                .collect();
            let world = skel.world_transforms(&Affine3::IDENTITY, &local)?;
            clip.push(center_pose(&world, skel)?);
        }
        clips.push(clip);
    }
    Ok(clips)
}
