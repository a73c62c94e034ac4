use std::collections::HashMap;

use ctsn_core::math::{self, Vec3};
use ctsn_core::mesh::*;
use proptest::prelude::*;

fn sine_grid(n: usize, amp: f64) -> Mesh {
    let g = grid(n, n, 0.1).unwrap();
    let v = g
        .vertices()
        .iter()
        .map(|p| [p[0], p[1], amp * (p[0] * 7.0).sin() * (p[1] * 5.0).cos()])
        .collect();
    g.with_vertices(v).unwrap()
}

fn interior(n: usize) -> impl Iterator<Item = usize> {
    (1..n - 1).flat_map(move |r| (1..n - 1).map(move |c| r * n + c))
}

fn icosphere(subdiv: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for p in v.iter_mut() {
        *p = math::normalize(*p).unwrap();
    }
    for _ in 0..subdiv {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(math::normalize(math::scale(math::add(v[a], v[b]), 0.5)).unwrap());
                v.len() - 1
            })
        };
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    Mesh::new(v, f).unwrap()
}

#[test]
fn planar_grid_normals_point_up() {
    let g = grid(5, 4, 0.3).unwrap();
    for n in vertex_normals(&g).unwrap() {
        assert!(math::dist(n, [0.0, 0.0, 1.0]) < 1e-15);
    }
}

#[test]
fn single_triangle_normal_is_the_cross_product() {
    let m = Mesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]], vec![[0, 1, 2]]).unwrap();
    let expected = math::normalize(math::cross([1.0, 0.0, 0.0], [0.0, 0.0, 2.0])).unwrap();
    for n in vertex_normals(&m).unwrap() {
        assert!(math::dist(n, expected) < 1e-15);
    }
}

#[test]
fn icosphere_normals_are_radial() {
    let s = icosphere(2);
    for (n, p) in vertex_normals(&s).unwrap().iter().zip(s.vertices()) {
        let radial = math::normalize(*p).unwrap();
        let angle = math::acos(math::dot(*n, radial).clamp(-1.0, 1.0)).to_degrees();
        assert!(angle < 5.0, "{angle}");
    }
}

#[test]
fn unreferenced_vertex_is_rejected_for_normals() {
    let m = Mesh::new(
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
        vec![[0, 1, 2]],
    )
    .unwrap();
    assert!(vertex_normals(&m).is_err());
    assert!(laplacian_smooth(&m, 0.5, 1).is_err());
}

#[test]
fn out_of_range_index_is_rejected() {
    assert!(Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
    assert!(Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).is_err());
}

#[test]
fn smoothing_identity_cases() {
    let g = sine_grid(6, 0.1);
    assert_eq!(laplacian_smooth(&g, 0.0, 10).unwrap(), g);
    assert_eq!(laplacian_smooth(&g, 0.5, 0).unwrap(), g);
}

#[test]
fn star_center_moves_to_neighbor_centroid() {
    let ring: Vec<Vec3> = (0..6)
        .map(|i| {
            let a = i as f64 * std::f64::consts::PI / 3.0;
            [a.cos(), a.sin(), 0.0]
        })
        .collect();
    let mut v = vec![[0.1, -0.2, 1.0]];
    v.extend(&ring);
    let tris = (0..6).map(|i| [0, 1 + i, 1 + (i + 1) % 6]).collect();
    let m = Mesh::new(v, tris).unwrap();
    let s = laplacian_smooth(&m, 1.0, 1).unwrap();
    let mut c = [0.0; 3];
    for p in &ring {
        c = math::add(c, *p);
    }
    let c = math::scale(c, 1.0 / 6.0);
    assert!(math::dist(s.vertices()[0], c) < 1e-15);
}

#[test]
fn sine_grid_interior_amplitude_decreases() {
    let g = sine_grid(16, 0.05);
    let amp = |m: &Mesh| interior(16).map(|i| m.vertices()[i][2].abs()).fold(0.0, f64::max);
    let s = laplacian_smooth(&g, 0.5, 20).unwrap();
    assert!(amp(&s) < amp(&g));
}

#[test]
fn flat_grid_has_no_interior_high_frequency() {
    let g = grid(8, 8, 0.1).unwrap();
    let split = frequency_decompose(&g, 0.5, 20).unwrap();
    assert!(split.high.iter().all(|h| h[2] == 0.0));
    // One step leaves vertices two rings away from the border in place.
    let one = frequency_decompose(&g, 0.5, 1).unwrap();
    for r in 2..6 {
        for c in 2..6 {
            assert!(math::norm(one.high[r * 8 + c]) < 1e-15);
        }
    }
}

#[test]
fn sine_grid_high_frequency_matches_independent_smoother() {
    let g = sine_grid(12, 0.05);
    let split = frequency_decompose(&g, 0.5, 20).unwrap();

    let adj = g.adjacency();
    let mut cur = g.vertices().to_vec();
    for _ in 0..20 {
        cur = (0..cur.len())
            .map(|i| {
                let nb = adj.neighbors(i);
                let mut m = [0.0; 3];
                for &j in nb {
                    m = math::add(m, cur[j]);
                }
                let m = math::scale(m, 1.0 / nb.len() as f64);
                math::add(math::scale(cur[i], 0.5), math::scale(m, 0.5))
            })
            .collect();
    }
    let mut total = 0.0;
    for i in 0..cur.len() {
        let expected = math::sub(g.vertices()[i], cur[i]);
        assert!(math::dist(expected, split.high[i]) < 1e-12);
        total += math::norm(split.high[i]);
    }
    assert!(total > 0.0);
}

#[test]
fn edges_are_sorted_and_unique() {
    let g = grid(4, 3, 1.0).unwrap();
    let e = g.edges();
    assert!(e.windows(2).all(|w| w[0] < w[1]));
    assert!(e.iter().all(|[a, b]| a < b));
    // 3*3 horizontal + 4*2 vertical + 3*2 diagonals.
    assert_eq!(e.len(), 9 + 8 + 6);
}

prop_compose! {
    fn random_mesh()(cols in 2usize..7, rows in 2usize..7, seed in any::<u64>())
        -> Mesh {
        let g = grid(cols, rows, 0.2).unwrap();
        let mut s = seed;
        let v = g.vertices().iter().map(|p| {
            let mut j = [0.0; 3];
            for c in j.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *c = ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.3;
            }
            math::add(*p, j)
        }).collect();
        g.with_vertices(v).unwrap()
    }
}

proptest! {
    #[test]
    fn decomposition_reconstructs(m in random_mesh(), lambda in 0.0f64..=1.0, iters in 0usize..30) {
        let split = frequency_decompose(&m, lambda, iters).unwrap();
        let smooth = laplacian_smooth(&m, lambda, iters).unwrap();
        prop_assert!(split.low.same_topology(&m));
        for (i, g) in m.vertices().iter().enumerate() {
            for a in 0..3 {
                let (l, s) = (split.low.vertices()[i][a], smooth.vertices()[i][a]);
                let scale = l.abs().max(split.high[i][a].abs());
                prop_assert!((l + split.high[i][a] - g[a]).abs() <= f64::EPSILON * scale);
                prop_assert!((l - s).abs() <= f64::EPSILON * s.abs().max(g[a].abs()));
                if s.abs() <= g[a].abs() {
                    prop_assert_eq!(l + split.high[i][a], g[a]);
                }
            }
        }
    }

    #[test]
    fn smoothing_never_grows_the_bounding_box(m in random_mesh(), lambda in 0.01f64..=1.0, iters in 1usize..20) {
        let s = laplacian_smooth(&m, lambda, iters).unwrap();
        prop_assert!(s.bbox_diagonal() <= m.bbox_diagonal() * (1.0 + 1e-12));
        prop_assert_eq!(s.triangles(), m.triangles());
    }

    #[test]
    fn normals_have_unit_length(m in random_mesh()) {
        for n in vertex_normals(&m).unwrap() {
            prop_assert!((math::norm(n) - 1.0).abs() < 1e-9);
        }
    }
}
