use ctsn_core::math::{self, Affine3, Vec3};
use ctsn_core::skinning::*;
use proptest::prelude::*;

fn rotation(axis: Vec3, angle: f64) -> Affine3 {
    Affine3::rotation(math::normalize(axis).unwrap(), angle)
}

fn rigid(axis: Vec3, angle: f64, t: Vec3) -> Affine3 {
    let mut a = rotation(axis, angle);
    a.set_translation(t);
    a
}

fn chain(hip_at: Vec3) -> Skeleton {
    let joints = vec![
        Joint {
            name: "hip".into(),
            parent: None,
            bind: Affine3::translation(hip_at),
        },
        Joint {
            name: "knee".into(),
            parent: Some(0),
            bind: rigid([0.0, 0.0, 1.0], 0.3, math::add(hip_at, [0.0, -0.5, 0.0])),
        },
        Joint {
            name: "ankle".into(),
            parent: Some(1),
            bind: Affine3::translation(math::add(hip_at, [0.1, -1.0, 0.0])),
        },
    ];
    Skeleton::new(joints, 0).unwrap()
}

fn vec3() -> impl Strategy<Value = Vec3> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

fn unit_axis() -> impl Strategy<Value = Vec3> {
    vec3().prop_filter("non-zero axis", |a| math::norm(*a) > 0.1)
}

fn rigid_strategy() -> impl Strategy<Value = Affine3> {
    (unit_axis(), -3.0f64..3.0, vec3()).prop_map(|(a, ang, t)| rigid(a, ang, t))
}

#[test]
fn bind_pose_centers_to_identity_with_offset_hip() {
    let s = chain([0.3, 1.1, -0.2]);
    let world: Vec<Affine3> = s.joints().iter().map(|j| j.bind).collect();
    let p = center_pose(&world, &s).unwrap();
    for g in p.transforms() {
        assert!(g.to_row_major().iter().zip(Affine3::IDENTITY.to_row_major()).all(|(a, b)| (a - b).abs() < 1e-15));
    }
    assert_eq!(p.transforms()[0].translation_part(), [0.0; 3]);
}

#[test]
fn identity_locals_reproduce_bind_pose() {
    let s = chain([0.0; 3]);
    let w = s.world_transforms(&Affine3::IDENTITY, &[Affine3::IDENTITY; 3]).unwrap();
    let p = center_pose(&w, &s).unwrap();
    assert_eq!(p, Pose::identity(3));
}

#[test]
fn single_joint_translation_shifts_all_vertices() {
    let t = [0.25, -0.5, 1.0];
    let pose = Pose::new(vec![Affine3::translation(t)]).unwrap();
    let v = vec![[0.0; 3], [1.0, 2.0, 3.0], [-0.5, 0.5, 0.0]];
    let w = SkinningWeights::new(3, 1, vec![1.0; 3]).unwrap();
    let out = lbs_skin(&v, &pose, &w).unwrap();
    for (a, b) in out.iter().zip(&v) {
        assert_eq!(*a, math::add(*b, t));
    }
}

#[test]
fn half_half_blend_matches_explicit_sum() {
    let g0 = rigid([1.0, 2.0, 0.5], 0.7, [0.1, 0.2, -0.3]);
    let g1 = rigid([-0.3, 0.4, 1.0], -1.9, [0.5, -0.1, 0.0]);
    let pose = Pose::new(vec![g0, g1]).unwrap();
    let v: Vec<Vec3> = (0..20).map(|i| [i as f64 * 0.1, (i as f64).sin(), 0.3 - i as f64 * 0.05]).collect();
    let w = SkinningWeights::new(20, 2, vec![0.5; 40]).unwrap();
    let out = lbs_skin(&v, &pose, &w).unwrap();
    for (o, p) in out.iter().zip(&v) {
        let mut e = [0.0; 3];
        for g in [&g0, &g1] {
            for r in 0..3 {
                e[r] += 0.5 * (g.m[r][0] * p[0] + g.m[r][1] * p[1] + g.m[r][2] * p[2] + g.m[r][3]);
            }
        }
        assert!(math::dist(*o, e) <= 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let w = SkinningWeights::new(2, 1, vec![1.0; 2]).unwrap();
    assert!(lbs_skin(&[[0.0; 3]], &Pose::identity(1), &w).is_err());
    assert!(lbs_skin(&[[0.0; 3]; 2], &Pose::identity(2), &w).is_err());
}

#[test]
fn weights_near_one_are_renormalized_and_others_rejected() {
    let w = SkinningWeights::from_rows(&[vec![0.5, 0.499999], vec![1.0, 0.0]]).unwrap();
    assert!((w.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(SkinningWeights::from_rows(&[vec![0.5, 0.49]]).is_err());
    assert!(SkinningWeights::from_rows(&[vec![1.5, -0.5]]).is_err());
}

#[test]
fn skeleton_validation() {
    let j = |name: &str, parent| Joint {
        name: name.into(),
        parent,
        bind: Affine3::IDENTITY,
    };
    assert!(Skeleton::new(vec![j("a", None), j("b", Some(2)), j("c", Some(0))], 0).is_err());
    assert!(Skeleton::new(vec![j("a", None), j("b", None)], 0).is_err());
    assert!(Skeleton::new(vec![j("a", None), j("b", Some(0))], 1).is_err());
    let mut singular = j("b", Some(0));
    singular.bind.m[1] = [0.0; 4];
    assert!(Skeleton::new(vec![j("a", None), singular], 0).is_err());
}

#[test]
fn feature_layout() {
    let f = pose_to_feature(&Pose::identity(2));
    assert_eq!(f.len(), 24);
    assert_eq!(&f[..12], &Affine3::IDENTITY.to_row_major());
    assert_eq!(&f[12..], &Affine3::IDENTITY.to_row_major());
}

proptest! {
    #[test]
    fn skinning_is_rotation_equivariant(
        gs in prop::collection::vec(rigid_strategy(), 3),
        r in (unit_axis(), -3.0f64..3.0),
        verts in prop::collection::vec(vec3(), 1..12),
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 12),
    ) {
        let n = verts.len();
        let rows: Vec<Vec<f64>> = raw[..n].iter().map(|r| {
            let s: f64 = r.iter().sum::<f64>() + 1e-3;
            r.iter().map(|x| (x + 1e-3 / 3.0) / s).collect()
        }).collect();
        let w = SkinningWeights::from_rows(&rows).unwrap();
        let rot = rotation(r.0, r.1);
        let pose = Pose::new(gs.clone()).unwrap();
        let rotated = Pose::new(gs.iter().map(|g| rot.compose(g)).collect()).unwrap();
        let a = lbs_skin(&verts, &rotated, &w).unwrap();
        let b = lbs_skin(&verts, &pose, &w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(math::dist(*x, rot.transform_point(*y)) < 1e-10);
        }
    }

    #[test]
    fn centering_removes_global_translation(
        world in prop::collection::vec(rigid_strategy(), 3),
        t in [-64i32..64, -64i32..64, -64i32..64],
    ) {
        let s = chain([0.0; 3]);
        let t = [t[0] as f64 / 8.0, t[1] as f64 / 8.0, t[2] as f64 / 8.0];
        let shifted: Vec<Affine3> = world.iter().map(|w| Affine3::translation(t).compose(w)).collect();
        let a = pose_to_feature(&center_pose(&world, &s).unwrap());
        let b = pose_to_feature(&center_pose(&shifted, &s).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn skinning_matrices_recompose_world(world in prop::collection::vec(rigid_strategy(), 3)) {
        let s = chain([0.2, 0.9, 0.1]);
        let pose = center_pose(&world, &s).unwrap();
        let hip = world[0].compose(s.inverse_bind(0)).translation_part();
        for (j, g) in pose.transforms().iter().enumerate() {
            let mut back = g.compose(&s.joints()[j].bind);
            let bt = back.translation_part();
            back.set_translation(math::add(bt, hip));
            for (x, y) in back.to_row_major().iter().zip(world[j].to_row_major()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
        prop_assert_eq!(pose.transforms()[0].translation_part(), [0.0; 3]);
    }

    #[test]
    fn identity_pose_is_exact(verts in prop::collection::vec(vec3(), 1..20)) {
        let n = verts.len();
        let w = SkinningWeights::new(n, 2, (0..n).flat_map(|i| {
            let a = (i % 5) as f64 / 4.0;
            [a, 1.0 - a]
        }).collect()).unwrap();
        prop_assert_eq!(lbs_skin(&verts, &Pose::identity(2), &w).unwrap(), verts);
    }
}
