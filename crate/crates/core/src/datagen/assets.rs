use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{self, Affine3, Vec3};
use crate::mesh::Mesh;
use crate::skinning::{Joint, RigAsset, Skeleton, SkinningWeights};
use crate::{Error, Result};

/// Procedural character + garment families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssetKind {
    /// Four-joint vertical chain with a flat cape hanging behind it.
    ArmCape,
    /// Seven-joint biped wearing a closed tube skirt.
    TubeSkirtBiped,
    /// Nine-joint quadruped with a blanket draped over its back.
    QuadBlanket,
}

impl AssetKind {
    pub const ALL: [AssetKind; 3] = [AssetKind::ArmCape, AssetKind::TubeSkirtBiped, AssetKind::QuadBlanket];

    pub fn name(self) -> &'static str {
        match self {
            AssetKind::ArmCape => "arm-cape",
            AssetKind::TubeSkirtBiped => "tube-skirt-biped",
            AssetKind::QuadBlanket => "quad-blanket",
        }
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AssetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown asset kind {s:?} (expected arm-cape, tube-skirt-biped or quad-blanket)"
                ))
            })
    }
}

struct JointSpec {
    name: &'static str,
    parent: Option<usize>,
    pos: Vec3,
    /// Bone segment end used for weight falloff.
    end: Vec3,
}

struct Capsule {
    a: Vec3,
    b: Vec3,
    r: f64,
}

const CAPSULE_AROUND: usize = 12;
const CAPSULE_CAP_RINGS: usize = 3;
const CAPSULE_BODY_RINGS: usize = 4;
const WEIGHT_FALLOFF_OFFSET: f64 = 0.02;

/// Builds an asset with a `resolution x resolution` cloth grid.
pub fn make_asset(kind: AssetKind, resolution: usize, seed: u64) -> Result<RigAsset> {
    if resolution < 4 {
        return Err(Error::validation(format!("resolution must be >= 4, got {resolution}")));
    }
    make_asset_with_dims(kind, resolution, resolution, seed)
}

/// Builds an asset with a `cols x rows` cloth grid. For the skirt `cols` wraps
/// around the waist; for the blanket it runs across the back.
pub fn make_asset_with_dims(kind: AssetKind, cols: usize, rows: usize, seed: u64) -> Result<RigAsset> {
    if cols < 3 || rows < 2 {
        return Err(Error::validation(format!(
            "cloth grid {cols}x{rows} is too small (need at least 3x2)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = rng.gen_range(0.95..1.05);
    let (joints, capsules, cloth, pinned) = match kind {
        AssetKind::ArmCape => arm_cape(cols, rows),
        AssetKind::TubeSkirtBiped => tube_skirt(cols, rows),
        AssetKind::QuadBlanket => quad_blanket(cols, rows),
    };
    let sc = |p: Vec3| math::scale(p, s);

    let skel_joints: Vec<Joint> = joints
        .iter()
        .map(|j| Joint {
            name: String::from(j.name),
            parent: j.parent,
            bind: Affine3::translation(sc(j.pos)),
        })
        .collect();
    let skeleton = Skeleton::new(skel_joints, 0)?;

    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for c in &capsules {
        capsule_mesh(sc(c.a), sc(c.b), c.r * s, &mut verts, &mut tris);
    }
    let body = Mesh::new(verts, tris)?;
    let bones: Vec<(Vec3, Vec3)> = joints.iter().map(|j| (sc(j.pos), sc(j.end))).collect();
    let body_weights = falloff_weights(body.vertices(), &bones)?;

    let (cv, ct) = cloth;
    let cloth = Mesh::new(cv.into_iter().map(sc).collect(), ct)?;
    RigAsset::new(skeleton, body, body_weights, cloth, None, pinned)
}

/// `w_j ~ (1 / (d_j + 0.02))^4` with `d_j` the distance to bone segment `j`.
fn falloff_weights(points: &[Vec3], bones: &[(Vec3, Vec3)]) -> Result<SkinningWeights> {
    let mut scores = Vec::with_capacity(points.len() * bones.len());
    for &p in points {
        for &(a, b) in bones {
            let d = segment_distance(p, a, b);
            let inv = 1.0 / (d + WEIGHT_FALLOFF_OFFSET);
            scores.push(inv * inv * inv * inv);
        }
    }
    SkinningWeights::from_scores(points.len(), bones.len(), scores)
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = math::sub(b, a);
    let len2 = math::norm_sq(ab);
    let t = if len2 > 0.0 {
        (math::dot(math::sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    math::dist(p, math::add(a, math::scale(ab, t)))
}

fn perpendicular(u: Vec3) -> Vec3 {
    let helper = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    math::normalize(math::cross(u, helper)).unwrap_or([0.0, 0.0, 1.0])
}

/// Closed capsule with outward-facing triangles appended to `verts`/`tris`.
fn capsule_mesh(a: Vec3, b: Vec3, r: f64, verts: &mut Vec<Vec3>, tris: &mut Vec<[usize; 3]>) {
    let u = math::normalize(math::sub(b, a)).unwrap_or([0.0, 1.0, 0.0]);
    let v = perpendicular(u);
    let w = math::cross(u, v);
    let base = verts.len();
    let half_pi = core::f64::consts::FRAC_PI_2;

    // (center, axial offset, ring radius) from bottom to top.
    let mut rings: Vec<(Vec3, f64, f64)> = Vec::new();
    for i in 1..=CAPSULE_CAP_RINGS {
        let phi = -half_pi + half_pi * i as f64 / (CAPSULE_CAP_RINGS + 1) as f64;
        rings.push((a, r * math::sin(phi), r * math::cos(phi)));
    }
    for i in 0..=CAPSULE_BODY_RINGS {
        let t = i as f64 / CAPSULE_BODY_RINGS as f64;
        let c = math::add(a, math::scale(math::sub(b, a), t));
        rings.push((c, 0.0, r));
    }
    for i in 1..=CAPSULE_CAP_RINGS {
        let phi = half_pi * i as f64 / (CAPSULE_CAP_RINGS + 1) as f64;
        rings.push((b, r * math::sin(phi), r * math::cos(phi)));
    }

    verts.push(math::sub(a, math::scale(u, r)));
    for &(c, off, rr) in &rings {
        for k in 0..CAPSULE_AROUND {
            let th = 2.0 * core::f64::consts::PI * k as f64 / CAPSULE_AROUND as f64;
            let dir = math::add(math::scale(v, math::cos(th)), math::scale(w, math::sin(th)));
            verts.push(math::add(math::add(c, math::scale(u, off)), math::scale(dir, rr)));
        }
    }
    verts.push(math::add(b, math::scale(u, r)));
    let top = verts.len() - 1;
    let ring = |ri: usize, k: usize| base + 1 + ri * CAPSULE_AROUND + k % CAPSULE_AROUND;

    let mut local = Vec::new();
    for k in 0..CAPSULE_AROUND {
        local.push([base, ring(0, k), ring(0, k + 1)]);
    }
    for ri in 0..rings.len() - 1 {
        for k in 0..CAPSULE_AROUND {
            let (p0, p1) = (ring(ri, k), ring(ri, k + 1));
            let (q0, q1) = (ring(ri + 1, k), ring(ri + 1, k + 1));
            local.push([p0, p1, q1]);
            local.push([p0, q1, q0]);
        }
    }
    let last = rings.len() - 1;
    for k in 0..CAPSULE_AROUND {
        local.push([top, ring(last, k + 1), ring(last, k)]);
    }
    // Orient every face away from the capsule axis.
    for t in &mut local {
        let (p, q, s) = (verts[t[0]], verts[t[1]], verts[t[2]]);
        let n = math::cross(math::sub(q, p), math::sub(s, p));
        let centroid = math::scale(math::add(math::add(p, q), s), 1.0 / 3.0);
        let proj = {
            let ab = math::sub(b, a);
            let len2 = math::norm_sq(ab).max(f64::MIN_POSITIVE);
            let tt = (math::dot(math::sub(centroid, a), ab) / len2).clamp(0.0, 1.0);
            math::add(a, math::scale(ab, tt))
        };
        if math::dot(n, math::sub(centroid, proj)) < 0.0 {
            t.swap(1, 2);
        }
    }
    tris.extend(local);
}

type ClothParts = (Vec<Vec3>, Vec<[usize; 3]>);

fn grid_triangles(cols: usize, rows: usize, wrap: bool) -> Vec<[usize; 3]> {
    let mut t = Vec::new();
    let spans = if wrap { cols } else { cols - 1 };
    for r in 0..rows - 1 {
        for c in 0..spans {
            let c1 = (c + 1) % cols;
            let a = r * cols + c;
            let b = r * cols + c1;
            let d = (r + 1) * cols + c;
            let e = (r + 1) * cols + c1;
            t.push([a, b, e]);
            t.push([a, e, d]);
        }
    }
    t
}

fn tube_skirt(cols: usize, rows: usize) -> (Vec<JointSpec>, Vec<Capsule>, ClothParts, Vec<usize>) {
    let joints = alloc::vec![
        JointSpec { name: "hip", parent: None, pos: [0.0, 0.0, 0.0], end: [0.0, 0.25, 0.0] },
        JointSpec { name: "spine", parent: Some(0), pos: [0.0, 0.25, 0.0], end: [0.0, 0.5, 0.0] },
        JointSpec { name: "neck", parent: Some(1), pos: [0.0, 0.5, 0.0], end: [0.0, 0.72, 0.0] },
        JointSpec { name: "l_thigh", parent: Some(0), pos: [0.1, -0.05, 0.0], end: [0.1, -0.5, 0.0] },
        JointSpec { name: "l_shin", parent: Some(3), pos: [0.1, -0.5, 0.0], end: [0.1, -0.92, 0.0] },
        JointSpec { name: "r_thigh", parent: Some(0), pos: [-0.1, -0.05, 0.0], end: [-0.1, -0.5, 0.0] },
        JointSpec { name: "r_shin", parent: Some(5), pos: [-0.1, -0.5, 0.0], end: [-0.1, -0.92, 0.0] },
    ];
    let capsules = alloc::vec![
        Capsule { a: [0.0, -0.06, 0.0], b: [0.0, 0.25, 0.0], r: 0.14 },
        Capsule { a: [0.0, 0.27, 0.0], b: [0.0, 0.45, 0.0], r: 0.13 },
        Capsule { a: [0.0, 0.6, 0.0], b: [0.0, 0.66, 0.0], r: 0.09 },
        Capsule { a: [0.1, -0.1, 0.0], b: [0.1, -0.48, 0.0], r: 0.07 },
        Capsule { a: [0.1, -0.52, 0.0], b: [0.1, -0.9, 0.0], r: 0.055 },
        Capsule { a: [-0.1, -0.1, 0.0], b: [-0.1, -0.48, 0.0], r: 0.07 },
        Capsule { a: [-0.1, -0.52, 0.0], b: [-0.1, -0.9, 0.0], r: 0.055 },
    ];
    let (radius, top, bottom) = (0.24, 0.02, -0.45);
    let mut v = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let y = top + (bottom - top) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let th = 2.0 * core::f64::consts::PI * c as f64 / cols as f64;
            v.push([radius * math::sin(th), y, radius * math::cos(th)]);
        }
    }
    let pinned = (0..cols).collect();
    (joints, capsules, (v, grid_triangles(cols, rows, true)), pinned)
}

fn arm_cape(cols: usize, rows: usize) -> (Vec<JointSpec>, Vec<Capsule>, ClothParts, Vec<usize>) {
    let joints = alloc::vec![
        JointSpec { name: "shoulder", parent: None, pos: [0.0, 0.0, 0.0], end: [0.0, -0.3, 0.0] },
        JointSpec { name: "upper", parent: Some(0), pos: [0.0, -0.3, 0.0], end: [0.0, -0.6, 0.0] },
        JointSpec { name: "lower", parent: Some(1), pos: [0.0, -0.6, 0.0], end: [0.0, -0.9, 0.0] },
        JointSpec { name: "hand", parent: Some(2), pos: [0.0, -0.9, 0.0], end: [0.0, -1.15, 0.0] },
    ];
    let capsules = alloc::vec![
        Capsule { a: [0.0, -0.02, 0.0], b: [0.0, -0.28, 0.0], r: 0.08 },
        Capsule { a: [0.0, -0.32, 0.0], b: [0.0, -0.58, 0.0], r: 0.075 },
        Capsule { a: [0.0, -0.62, 0.0], b: [0.0, -0.88, 0.0], r: 0.07 },
        Capsule { a: [0.0, -0.92, 0.0], b: [0.0, -1.1, 0.0], r: 0.06 },
    ];
    let (half_width, top, bottom, z) = (0.25, 0.05, -1.0, -0.14);
    let mut v = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let y = top + (bottom - top) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let x = -half_width + 2.0 * half_width * c as f64 / (cols - 1) as f64;
            v.push([x, y, z]);
        }
    }
    let pinned = (0..cols).collect();
    (joints, capsules, (v, grid_triangles(cols, rows, false)), pinned)
}

fn quad_blanket(cols: usize, rows: usize) -> (Vec<JointSpec>, Vec<Capsule>, ClothParts, Vec<usize>) {
    let joints = alloc::vec![
        JointSpec { name: "hip", parent: None, pos: [0.0, 0.0, 0.0], end: [0.0, 0.0, 0.3] },
        JointSpec { name: "spine", parent: Some(0), pos: [0.0, 0.0, 0.3], end: [0.0, 0.0, 0.6] },
        JointSpec { name: "chest", parent: Some(1), pos: [0.0, 0.0, 0.6], end: [0.0, 0.1, 0.8] },
        JointSpec { name: "head", parent: Some(2), pos: [0.0, 0.1, 0.8], end: [0.0, 0.12, 0.97] },
        JointSpec { name: "fl_leg", parent: Some(2), pos: [0.12, -0.05, 0.6], end: [0.12, -0.5, 0.6] },
        JointSpec { name: "fr_leg", parent: Some(2), pos: [-0.12, -0.05, 0.6], end: [-0.12, -0.5, 0.6] },
        JointSpec { name: "bl_leg", parent: Some(0), pos: [0.12, -0.05, 0.0], end: [0.12, -0.5, 0.0] },
        JointSpec { name: "br_leg", parent: Some(0), pos: [-0.12, -0.05, 0.0], end: [-0.12, -0.5, 0.0] },
        JointSpec { name: "tail", parent: Some(0), pos: [0.0, 0.05, -0.1], end: [0.0, 0.1, -0.4] },
    ];
    let capsules = alloc::vec![
        Capsule { a: [0.0, 0.0, -0.02], b: [0.0, 0.0, 0.62], r: 0.15 },
        Capsule { a: [0.0, 0.12, 0.84], b: [0.0, 0.13, 0.95], r: 0.08 },
        Capsule { a: [0.12, -0.1, 0.6], b: [0.12, -0.48, 0.6], r: 0.05 },
        Capsule { a: [-0.12, -0.1, 0.6], b: [-0.12, -0.48, 0.6], r: 0.05 },
        Capsule { a: [0.12, -0.1, 0.0], b: [0.12, -0.48, 0.0], r: 0.05 },
        Capsule { a: [-0.12, -0.1, 0.0], b: [-0.12, -0.48, 0.0], r: 0.05 },
        Capsule { a: [0.0, 0.06, -0.2], b: [0.0, 0.1, -0.4], r: 0.03 },
    ];
    let (radius, half_angle, z0, z1) = (0.21, 70f64.to_radians(), -0.05, 0.6);
    let mut v = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let z = z0 + (z1 - z0) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let phi = -half_angle + 2.0 * half_angle * c as f64 / (cols - 1) as f64;
            v.push([radius * math::sin(phi), radius * math::cos(phi), z]);
        }
    }
    let mut pinned: Vec<usize> = Vec::new();
    for r in 0..rows {
        for c in [(cols - 1) / 2, cols / 2] {
            let i = r * cols + c;
            if pinned.last() != Some(&i) {
                pinned.push(i);
            }
        }
    }
    (joints, capsules, (v, grid_triangles(cols, rows, false)), pinned)
}

/// Per-joint local rotation bounds (radians about x, y, z) used by pose sampling.
pub fn joint_limits(name: &str) -> Vec3 {
    match name {
        "hip" => [0.15, 0.3, 0.1],
        "spine" | "chest" => [0.2, 0.2, 0.15],
        "neck" => [0.3, 0.3, 0.2],
        "head" => [0.4, 0.4, 0.2],
        "l_thigh" | "r_thigh" => [0.6, 0.1, 0.25],
        "l_shin" | "r_shin" => [0.5, 0.0, 0.0],
        "shoulder" => [0.5, 0.3, 0.5],
        "upper" | "lower" | "hand" => [0.4, 0.2, 0.4],
        "fl_leg" | "fr_leg" | "bl_leg" | "br_leg" => [0.5, 0.0, 0.15],
        "tail" => [0.5, 0.5, 0.3],
        _ => [0.3, 0.3, 0.3],
    }
}
