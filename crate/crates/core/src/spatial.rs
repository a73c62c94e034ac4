//! Exact nearest-vertex and closest-surface-point queries.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::{self, Vec3};
use crate::mesh::{self, Mesh};
use crate::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
struct KdNode {
    point: usize,
    axis: usize,
    left: usize,
    right: usize,
}

/// Balanced median-split KD-tree over 3D points.
///
/// Queries are exact and deterministic: among equidistant points the lowest
/// index wins, matching a linear scan.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<KdNode>,
    root: usize,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("cannot build a KD-tree over zero points"));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_node(points, &mut order, &mut nodes);
        Ok(KdTree {
            points: points.to_vec(),
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Depth of the deepest leaf; 0 for a single point.
    pub fn depth(&self) -> usize {
        fn rec(nodes: &[KdNode], n: usize) -> usize {
            let node = &nodes[n];
            let l = if node.left == NONE { 0 } else { 1 + rec(nodes, node.left) };
            let r = if node.right == NONE { 0 } else { 1 + rec(nodes, node.right) };
            l.max(r)
        }
        rec(&self.nodes, self.root)
    }

    /// Nearest stored point as `(index, distance)`.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let mut best = (f64::INFINITY, NONE);
        self.search(self.root, q, &mut best);
        (best.1, math::sqrt(best.0))
    }

    fn search(&self, n: usize, q: Vec3, best: &mut (f64, usize)) {
        let node = &self.nodes[n];
        let d2 = math::dist_sq(self.points[node.point], q);
        if d2 < best.0 || (d2 == best.0 && node.point < best.1) {
            *best = (d2, node.point);
        }
        let diff = q[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near != NONE {
            self.search(near, q, best);
        }
        // Equal distance still has to be visited: it may hold a lower index.
        if far != NONE && diff * diff <= best.0 {
            self.search(far, q, best);
        }
    }
}

fn build_node(points: &[Vec3], order: &mut [usize], nodes: &mut Vec<KdNode>) -> usize {
    if order.is_empty() {
        return NONE;
    }
    let axis = widest_axis(points, order);
    order.sort_unstable_by(|&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let id = nodes.len();
    nodes.push(KdNode {
        point: order[mid],
        axis,
        left: NONE,
        right: NONE,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_node(points, lo, nodes);
    let right = build_node(points, hi, nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id
}

fn widest_axis(points: &[Vec3], order: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for a in 1..3 {
        if spread[a] > spread[axis] {
            axis = a;
        }
    }
    axis
}

/// Per-cloth-vertex index of the nearest body vertex in the canonical pose.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding(Vec<usize>);

impl Binding {
    pub fn new(indices: Vec<usize>, body_vertices: usize) -> Result<Self> {
        if let Some((i, b)) = indices.iter().enumerate().find(|(_, &b)| b >= body_vertices) {
            return Err(Error::validation(format!(
                "binding entry {i} = {b} is out of range for {body_vertices} body vertices"
            )));
        }
        Ok(Binding(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Binding[i]` = nearest body vertex to cloth vertex `i`.
pub fn bind_cloth_to_body(cloth: &Mesh, body: &Mesh) -> Result<Binding> {
    if body.is_empty() {
        return Err(Error::validation("cannot bind cloth to an empty body mesh"));
    }
    let tree = KdTree::build(body.vertices())?;
    let idx = cloth.vertices().iter().map(|&v| tree.nearest(v).0).collect();
    Binding::new(idx, body.vertex_count())
}

/// Closest point on triangle `abc` to `p`, with barycentric weights.
///
/// Region-based evaluation (vertex, edge, face Voronoi regions).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = math::sub(b, a);
    let ac = math::sub(c, a);
    let ap = math::sub(p, a);
    let d1 = math::dot(ab, ap);
    let d2 = math::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = math::sub(p, b);
    let d3 = math::dot(ab, bp);
    let d4 = math::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (math::add(a, math::scale(ab, v)), [1.0 - v, v, 0.0]);
    }
    let cp = math::sub(p, c);
    let d5 = math::dot(ab, cp);
    let d6 = math::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (math::add(a, math::scale(ac, w)), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (math::add(b, math::scale(math::sub(c, b), w)), [0.0, 1.0 - w, w]);
    }
    let denom = va + vb + vc;
    if denom == 0.0 || !denom.is_finite() {
        // Collinear/degenerate: fall back to the best of the three edges.
        return closest_on_degenerate(p, a, b, c);
    }
    let inv = 1.0 / denom;
    let v = vb * inv;
    let w = vc * inv;
    (
        math::add(a, math::add(math::scale(ab, v), math::scale(ac, w))),
        [1.0 - v - w, v, w],
    )
}

fn closest_on_segment(p: Vec3, a: Vec3, b: Vec3) -> (Vec3, f64) {
    let ab = math::sub(b, a);
    let l2 = math::norm_sq(ab);
    if l2 == 0.0 {
        return (a, 0.0);
    }
    let t = (math::dot(math::sub(p, a), ab) / l2).clamp(0.0, 1.0);
    (math::add(a, math::scale(ab, t)), t)
}

fn closest_on_degenerate(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let (q0, t0) = closest_on_segment(p, a, b);
    let (q1, t1) = closest_on_segment(p, b, c);
    let (q2, t2) = closest_on_segment(p, a, c);
    let cands = [
        (math::dist_sq(p, q0), q0, [1.0 - t0, t0, 0.0]),
        (math::dist_sq(p, q1), q1, [0.0, 1.0 - t1, t1]),
        (math::dist_sq(p, q2), q2, [1.0 - t2, 0.0, t2]),
    ];
    let mut best = cands[0];
    for c in &cands[1..] {
        if c.0 < best.0 {
            best = *c;
        }
    }
    (best.1, best.2)
}

/// Result of a closest-surface-point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    /// Vertex normals interpolated at `point`, normalized.
    pub normal: Vec3,
    /// `dot(p - point, normal) < 0`.
    pub inside: bool,
    pub distance: f64,
    pub triangle: usize,
}

#[derive(Clone, Debug)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // Leaf when `count > 0`: triangles `order[start..start + count]`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

const LEAF_SIZE: usize = 4;

/// A mesh prepared for exact closest-point queries: vertex normals plus a
/// bounding volume hierarchy over its triangles.
#[derive(Clone, Debug)]
pub struct MeshSurface {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl MeshSurface {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.triangles().is_empty() {
            return Err(Error::validation("closest-point queries need a non-empty mesh"));
        }
        let normals = mesh::vertex_normals(mesh)?;
        let vertices = mesh.vertices().to_vec();
        let triangles = mesh.triangles().to_vec();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| {
                let s = math::add(math::add(vertices[t[0]], vertices[t[1]]), vertices[t[2]]);
                math::scale(s, 1.0 / 3.0)
            })
            .collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        build_bvh(&vertices, &triangles, &centroids, &mut order, 0, n, &mut nodes);
        Ok(MeshSurface {
            vertices,
            triangles,
            normals,
            order,
            nodes,
        })
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Exact closest point over all triangles. Ties go to the lowest
    /// triangle index.
    pub fn closest(&self, p: Vec3) -> SurfacePoint {
        let mut best_d2 = f64::INFINITY;
        let mut best_tri = NONE;
        let mut best_point = [0.0; 3];
        let mut best_bary = [0.0; 3];
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if box_dist_sq(p, node.lo, node.hi) > best_d2 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
                    let (q, bary) = closest_point_on_triangle(p, a, b, c);
                    let d2 = math::dist_sq(p, q);
                    if d2 < best_d2 || (d2 == best_d2 && t < best_tri) {
                        best_d2 = d2;
                        best_tri = t;
                        best_point = q;
                        best_bary = bary;
                    }
                }
            } else {
                let dl = box_dist_sq(p, self.nodes[node.left].lo, self.nodes[node.left].hi);
                let dr = box_dist_sq(p, self.nodes[node.right].lo, self.nodes[node.right].hi);
                // Pop order: nearer child first.
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        self.finish(p, best_tri, best_point, best_bary, best_d2)
    }

    /// Linear scan over every triangle; the reference the BVH must agree with.
    pub fn closest_brute_force(&self, p: Vec3) -> SurfacePoint {
        let mut best = (f64::INFINITY, NONE, [0.0; 3], [0.0; 3]);
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            let (q, bary) = closest_point_on_triangle(p, a, b, c);
            let d2 = math::dist_sq(p, q);
            if d2 < best.0 {
                best = (d2, t, q, bary);
            }
        }
        self.finish(p, best.1, best.2, best.3, best.0)
    }

    fn finish(&self, p: Vec3, tri: usize, point: Vec3, bary: [f64; 3], d2: f64) -> SurfacePoint {
        let t = self.triangles[tri];
        let mut n = [0.0; 3];
        for k in 0..3 {
            n = math::add(n, math::scale(self.normals[t[k]], bary[k]));
        }
        let normal = math::normalize(n).unwrap_or_else(|| {
            // Interpolated normals cancelled; fall back to the face normal.
            let [a, b, c] = t.map(|i| self.vertices[i]);
            math::normalize(math::cross(math::sub(b, a), math::sub(c, a))).unwrap_or([0.0, 0.0, 1.0])
        });
        SurfacePoint {
            point,
            normal,
            inside: math::dot(math::sub(p, point), normal) < 0.0,
            distance: math::sqrt(d2),
            triangle: tri,
        }
    }
}

fn box_dist_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if p[a] < lo[a] {
            lo[a] - p[a]
        } else if p[a] > hi[a] {
            p[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

fn build_bvh(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &t in &order[start..end] {
        for &v in &triangles[t] {
            for a in 0..3 {
                lo[a] = lo[a].min(vertices[v][a]);
                hi[a] = hi[a].max(vertices[v][a]);
            }
        }
    }
    let id = nodes.len();
    nodes.push(BvhNode {
        lo,
        hi,
        start,
        count: 0,
        left: NONE,
        right: NONE,
    });
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes[id].count = count;
        return id;
    }
    let pts: Vec<Vec3> = order[start..end].iter().map(|&t| centroids[t]).collect();
    let idx: Vec<usize> = (0..pts.len()).collect();
    let axis = widest_axis(&pts, &idx);
    order[start..end].sort_unstable_by(|&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = start + count / 2;
    let left = build_bvh(vertices, triangles, centroids, order, start, mid, nodes);
    let right = build_bvh(vertices, triangles, centroids, order, mid, end, nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id
}

/// One-off query; build a [`MeshSurface`] when issuing many.
pub fn closest_surface_point(mesh: &Mesh, p: Vec3) -> Result<SurfacePoint> {
    Ok(MeshSurface::new(mesh)?.closest(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_nearest(points: &[Vec3], q: Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = math::dist_sq(*p, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    #[test]
    fn single_point_tree() {
        let t = KdTree::build(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.nearest([-5.0, 0.0, 9.0]).0, 0);
    }

    #[test]
    fn empty_tree_rejected() {
        assert!(KdTree::build(&[]).is_err());
    }

    #[test]
    fn cube_corners_find_themselves() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        let t = KdTree::build(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(t.nearest(*p), (i, 0.0));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut pts = vec![[10.0, 10.0, 10.0]; 10];
        pts[3] = [1.0, 0.0, 0.0];
        pts[7] = [-1.0, 0.0, 0.0];
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.nearest([0.0, 0.0, 0.0]).0, 3);
        // Duplicates too.
        assert_eq!(t.nearest([10.0, 10.0, 10.0]).0, 0);
        assert_eq!(brute_nearest(&pts, [0.0, 0.0, 0.0]), 3);
    }

    #[test]
    fn binding_of_copy_is_identity() {
        let m = mesh::grid(5, 4, 0.1).unwrap();
        let b = bind_cloth_to_body(&m, &m).unwrap();
        assert_eq!(b.indices(), (0..20).collect::<Vec<_>>().as_slice());
        assert!(bind_cloth_to_body(&m, &Mesh::empty()).is_err());
    }

    #[test]
    fn projection_above_and_below_triangle() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let up = closest_surface_point(&m, [0.2, 0.3, 0.5]).unwrap();
        assert!(math::dist(up.point, [0.2, 0.3, 0.0]) < 1e-15);
        assert!(!up.inside);
        assert_eq!(up.normal, [0.0, 0.0, 1.0]);
        let down = closest_surface_point(&m, [0.2, 0.3, -0.5]).unwrap();
        assert!(math::dist(down.point, [0.2, 0.3, 0.0]) < 1e-15);
        assert!(down.inside);
        // On the surface: not inside (strict).
        assert!(!closest_surface_point(&m, [0.2, 0.3, 0.0]).unwrap().inside);
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(closest_point_on_triangle([-1.0, -1.0, 0.0], a, b, c).0, a);
        assert_eq!(closest_point_on_triangle([2.0, -0.5, 0.3], a, b, c).0, b);
        assert_eq!(closest_point_on_triangle([0.5, -1.0, 0.0], a, b, c).0, [0.5, 0.0, 0.0]);
        let (q, _) = closest_point_on_triangle([1.0, 1.0, 0.0], a, b, c);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
        // Degenerate (collinear) triangle.
        let (q, _) = closest_point_on_triangle([0.5, 1.0, 0.0], a, b, [2.0, 0.0, 0.0]);
        assert_eq!(q, [0.5, 0.0, 0.0]);
    }
}
