use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{ClothRig, Model, Streams};
use super::params::{NetworkConfig, ParamGroup};
use crate::autodiff::finite_diff_check;
use crate::datagen::{make_asset_with_dims, sample_poses, AssetKind};
use crate::math::{self, Vec3};
use crate::skinning::{Pose, RigAsset};
use crate::training::distance_sum_on_tape;
use crate::Result;

/// Worst relative gradient error for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub tensors: usize,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// The 30-vertex tube skirt (6 around, 5 down) used for gradient checks.
pub fn tiny_asset() -> Result<RigAsset> {
    make_asset_with_dims(AssetKind::TubeSkirtBiped, 6, 5, 0)
}

/// Adds `uniform(-amplitude, amplitude)` to every parameter so zero-initialized
/// bases and residuals carry gradient through every path.
pub fn jitter_params(model: &mut Model, seed: u64, amplitude: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-amplitude..amplitude);
        }
    }
}

/// Compares reverse-mode gradients of the mean vertex distance between the
/// full forward pass and `target` against central differences, for every
/// parameter element, reported per group.
pub fn check_model_gradients(model: &Model, rig: &ClothRig, pose: &Pose, target: &[Vec3]) -> Result<Vec<GroupCheck>> {
    let scale = 1.0 / target.len() as f64;
    let report = finite_diff_check(model.params.tensors(), |tape, p| {
        let pred = model.forward_on_tape(tape, p, rig, pose, Streams::FULL)?;
        distance_sum_on_tape(tape, pred, target, scale)
    })?;
    Ok(ParamGroup::ALL
        .iter()
        .map(|&group| {
            let idx = model.params.group_indices(group);
            GroupCheck {
                group,
                tensors: idx.len(),
                elements: idx.iter().map(|&i| model.params.tensors()[i].numel()).sum(),
                max_rel_error: idx.iter().map(|&i| report.per_param[i]).fold(0.0, f64::max),
                max_abs_error: idx.iter().map(|&i| report.per_param_abs[i]).fold(0.0, f64::max),
            }
        })
        .collect())
}

/// Network shape used for gradient checks: `m = 4`, `k = 8`, one layer of two
/// heads of width 4.
pub fn check_config(rig: &ClothRig) -> NetworkConfig {
    NetworkConfig {
        embed_dim: 4,
        mesh_basis: 8,
        layers: 1,
        heads: 2,
        head_dim: 4,
        ..NetworkConfig::new(rig.joints(), rig.cloth_vertices())
    }
}

/// Gradient check at a fixed point: a model seeded with `seed` and every
/// parameter jittered by up to 0.05, frame 8 of a sampled clip, and a target
/// that offsets plain LBS by up to 0.05 per coordinate.
pub fn reference_gradient_check(asset: &RigAsset, seed: u64) -> Result<Vec<GroupCheck>> {
    let rig = ClothRig::new(asset)?;
    let mut model = Model::new(check_config(&rig), seed)?;
    jitter_params(&mut model, seed.wrapping_add(1), 0.05);
    let clip = sample_poses(asset, 16, seed.wrapping_add(2))?.swap_remove(0);
    let pose = &clip[8];
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let target: Vec<Vec3> = rig
        .baseline(pose)?
        .into_iter()
        .map(|v| math::add(v, core::array::from_fn(|_| rng.gen_range(-0.05..0.05))))
        .collect();
    check_model_gradients(&model, &rig, pose, &target)
}
