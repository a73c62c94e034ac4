//! Skeletons, poses, skinning weights and linear blend skinning.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Affine3, Vec3};
use crate::mesh::Mesh;
use crate::spatial::Binding;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// World transform of the joint in the bind pose.
    pub bind: Affine3,
}

/// Joint hierarchy in topological order (every parent precedes its children).
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    hip: usize,
    inverse_bind: Vec<Affine3>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, hip: usize) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::validation("skeleton has no joints"));
        }
        let mut roots = Vec::new();
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                None => roots.push(i),
                Some(p) if p >= i => {
                    return Err(Error::validation(format!(
                        "joint {i} ({}) has parent {p}, which does not precede it",
                        j.name
                    )))
                }
                Some(_) => {}
            }
        }
        if roots.len() != 1 {
            return Err(Error::validation(format!(
                "skeleton must have exactly one root joint, found {}",
                roots.len()
            )));
        }
        if hip != roots[0] {
            return Err(Error::validation(format!(
                "hip index {hip} is not the root joint {}",
                roots[0]
            )));
        }
        let inverse_bind = joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                j.bind.inverse().ok_or_else(|| {
                    Error::validation(format!("bind transform of joint {i} ({}) is singular", j.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Skeleton {
            joints,
            hip,
            inverse_bind,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn hip(&self) -> usize {
        self.hip
    }

    pub fn inverse_bind(&self, j: usize) -> &Affine3 {
        &self.inverse_bind[j]
    }

    /// Forward kinematics from per-joint local rotations (about the joint,
    /// expressed in the bind frame) plus a root transform.
    ///
    /// `local[j]` is applied in the joint's bind frame; bind rotations are
    /// preserved, so `local = identity` everywhere reproduces the bind pose.
    pub fn world_transforms(&self, root: &Affine3, local: &[Affine3]) -> Result<Vec<Affine3>> {
        if local.len() != self.joints.len() {
            return Err(Error::validation(format!(
                "expected {} local transforms, got {}",
                self.joints.len(),
                local.len()
            )));
        }
        // Accumulate in skinning-matrix space, gamma_j = gamma_p * bind_j * local_j * bind_j^-1,
        // so identity locals give identity matrices without rounding.
        let mut gamma: Vec<Affine3> = Vec::with_capacity(self.joints.len());
        let mut world: Vec<Affine3> = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            let about = joint.bind.compose(&local[j]).compose(&self.inverse_bind[j]);
            let g = match joint.parent {
                None => root.compose(&about),
                Some(p) => gamma[p].compose(&about),
            };
            world.push(g.compose(&joint.bind));
            gamma.push(g);
        }
        Ok(world)
    }
}

/// Per-joint skinning matrices `gamma_j = world_j * bind_j^-1` with the hip
/// translation removed.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    transforms: Vec<Affine3>,
}

impl Pose {
    pub fn new(transforms: Vec<Affine3>) -> Result<Self> {
        if let Some(i) = transforms.iter().position(|t| !t.is_finite()) {
            return Err(Error::validation(format!("pose transform {i} is not finite")));
        }
        Ok(Pose { transforms })
    }

    pub fn identity(joint_count: usize) -> Self {
        Pose {
            transforms: vec![Affine3::IDENTITY; joint_count],
        }
    }

    pub fn transforms(&self) -> &[Affine3] {
        &self.transforms
    }

    pub fn joint_count(&self) -> usize {
        self.transforms.len()
    }

    /// Elementwise interpolation of the skinning matrices.
    pub fn lerp(a: &Pose, b: &Pose, s: f64) -> Result<Pose> {
        if a.transforms.len() != b.transforms.len() {
            return Err(Error::validation("cannot interpolate poses with different joint counts"));
        }
        Ok(Pose {
            transforms: a
                .transforms
                .iter()
                .zip(&b.transforms)
                .map(|(x, y)| Affine3::lerp(x, y, s))
                .collect(),
        })
    }
}

/// Dense row-stochastic weight matrix, `rows = vertices`, `cols = joints`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinningWeights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Row sums must be within this distance of 1 to be accepted (and renormalized).
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl SkinningWeights {
    /// Validates non-negativity and row sums (within [`ROW_SUM_TOLERANCE`]),
    /// then renormalizes every row to sum to 1.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::validation(format!(
                "weight matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if cols == 0 && rows > 0 {
            return Err(Error::validation("weight matrix has no joint columns"));
        }
        let mut data = data;
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            if let Some(c) = row.iter().position(|w| !w.is_finite() || *w < 0.0 || *w > 1.0 + ROW_SUM_TOLERANCE) {
                return Err(Error::validation(format!(
                    "weight row {r} column {c} is outside [0, 1]: {}",
                    row[c]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::validation(format!(
                    "weight row {r} sums to {sum}, not 1"
                )));
            }
            if (sum - 1.0).abs() > 8.0 * f64::EPSILON {
                for w in row.iter_mut() {
                    *w /= sum;
                }
            }
        }
        Ok(SkinningWeights { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::validation(format!(
                "weight row {r} has {} entries, expected {cols}",
                rows[r].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Each row normalized by its sum. Used by generators that produce
    /// unnormalized positive scores.
    pub fn from_scores(rows: usize, cols: usize, mut scores: Vec<f64>) -> Result<Self> {
        for r in 0..rows {
            let row = &mut scores[r * cols..(r + 1) * cols];
            let s: f64 = row.iter().sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::validation(format!("score row {r} has no positive mass")));
            }
            for w in row.iter_mut() {
                *w /= s;
            }
        }
        Self::new(rows, cols, scores)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows picked by a cloth-to-body binding: the KD-tree initial cloth weights.
    pub fn gather(&self, binding: &Binding) -> Result<SkinningWeights> {
        let mut data = Vec::with_capacity(binding.len() * self.cols);
        for (i, &b) in binding.indices().iter().enumerate() {
            if b >= self.rows {
                return Err(Error::validation(format!(
                    "binding entry {i} points at row {b}, but weights have {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(b));
        }
        Ok(SkinningWeights {
            rows: binding.len(),
            cols: self.cols,
            data,
        })
    }
}

/// Everything describing one character + garment pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RigAsset {
    pub skeleton: Skeleton,
    pub body: Mesh,
    pub body_weights: SkinningWeights,
    pub cloth: Mesh,
    /// Explicit initial cloth weights; derived from the binding when absent.
    pub cloth_weights_init: Option<SkinningWeights>,
    /// Cloth vertices pinned to their skinned position during relaxation.
    pub pinned: Vec<usize>,
}

impl RigAsset {
    pub fn new(
        skeleton: Skeleton,
        body: Mesh,
        body_weights: SkinningWeights,
        cloth: Mesh,
        cloth_weights_init: Option<SkinningWeights>,
        pinned: Vec<usize>,
    ) -> Result<Self> {
        let j = skeleton.joint_count();
        if body_weights.rows() != body.vertex_count() || body_weights.cols() != j {
            return Err(Error::validation(format!(
                "body weights are {}x{}, expected {}x{j}",
                body_weights.rows(),
                body_weights.cols(),
                body.vertex_count()
            )));
        }
        if let Some(w) = &cloth_weights_init {
            if w.rows() != cloth.vertex_count() || w.cols() != j {
                return Err(Error::validation(format!(
                    "initial cloth weights are {}x{}, expected {}x{j}",
                    w.rows(),
                    w.cols(),
                    cloth.vertex_count()
                )));
            }
        }
        if let Some(&p) = pinned.iter().find(|&&p| p >= cloth.vertex_count()) {
            return Err(Error::validation(format!(
                "pinned vertex {p} out of range for cloth with {} vertices",
                cloth.vertex_count()
            )));
        }
        Ok(RigAsset {
            skeleton,
            body,
            body_weights,
            cloth,
            cloth_weights_init,
            pinned,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// Initial cloth weights `W_C^I`: explicit ones when given, else body
    /// weight rows picked through `binding`.
    pub fn initial_cloth_weights(&self, binding: &Binding) -> Result<SkinningWeights> {
        match &self.cloth_weights_init {
            Some(w) => Ok(w.clone()),
            None => self.body_weights.gather(binding),
        }
    }
}

/// Builds the skinning matrices `gamma_j = world_j * bind_j^-1` from raw world
/// transforms and subtracts the hip's skinning translation from every joint,
/// so the hip matrix is a pure rotation and the bind pose maps to identity.
/// For a hip bound at the origin this is exactly the hip's world translation.
pub fn center_pose(world: &[Affine3], skeleton: &Skeleton) -> Result<Pose> {
    if world.len() != skeleton.joint_count() {
        return Err(Error::validation(format!(
            "expected {} world transforms, got {}",
            skeleton.joint_count(),
            world.len()
        )));
    }
    let raw: Vec<Affine3> = world
        .iter()
        .enumerate()
        .map(|(j, w)| w.compose(skeleton.inverse_bind(j)))
        .collect();
    let hip_t = raw[skeleton.hip()].translation_part();
    let transforms = raw
        .into_iter()
        .map(|mut g| {
            let t = g.translation_part();
            g.set_translation([t[0] - hip_t[0], t[1] - hip_t[1], t[2] - hip_t[2]]);
            g
        })
        .collect();
    Pose::new(transforms)
}

/// `v_i' = sum_j W_ij * (gamma_j v_i)`, evaluated as
/// `v_i + sum_j W_ij * (gamma_j v_i - v_i)` so identity transforms return the
/// input bit for bit.
pub fn lbs_skin(vertices: &[Vec3], pose: &Pose, weights: &SkinningWeights) -> Result<Vec<Vec3>> {
    if weights.rows() != vertices.len() || weights.cols() != pose.joint_count() {
        return Err(Error::validation(format!(
            "weights are {}x{}, but skinning {} vertices with {} joints",
            weights.rows(),
            weights.cols(),
            vertices.len(),
            pose.joint_count()
        )));
    }
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut d = [0.0; 3];
            for (w, g) in weights.row(i).iter().zip(pose.transforms()) {
                if *w == 0.0 {
                    continue;
                }
                let p = g.transform_point(v);
                for a in 0..3 {
                    d[a] += w * (p[a] - v[a]);
                }
            }
            math::add(v, d)
        })
        .collect())
}

/// Row-major flattening of every 3x4 skinning matrix, joint order.
pub fn pose_to_feature(pose: &Pose) -> Vec<f64> {
    pose.transforms()
        .iter()
        .flat_map(|t| t.to_row_major())
        .collect()
}
