//! Triangle meshes, adjacency, vertex normals and Laplacian smoothing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Vec3};
use crate::{Error, Result};

/// Indexed triangle mesh with a derived, sorted edge list.
///
/// Edges are stored as `[lo, hi]` with `lo < hi`, sorted lexicographically, so
/// the edge order is a pure function of the triangle list.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
}

impl Default for Mesh {
    fn default() -> Self {
        Mesh::empty()
    }
}

impl Mesh {
    /// Validates index ranges and index-level degeneracy, then derives edges.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::validation(format!(
                    "triangle {t} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::validation(format!(
                    "triangle {t} repeats a vertex index: {tri:?}"
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::validation(format!("vertex {i} is not finite")));
        }
        let edges = derive_edges(&triangles);
        Ok(Mesh {
            vertices,
            triangles,
            edges,
        })
    }

    pub fn empty() -> Self {
        Mesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::validation(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::validation(format!("vertex {i} is not finite")));
        }
        Ok(Mesh {
            vertices,
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
        })
    }

    /// True when both meshes have the same triangle list (and vertex count).
    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.vertices.len(), &self.edges)
    }

    /// Axis-aligned bounds, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| math::dist(lo, hi))
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    let mut lo = first;
    let mut hi = first;
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

fn derive_edges(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = triangles
        .iter()
        .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
        .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Per-vertex sorted neighbour lists; the sparse form of the (0,1) adjacency
/// matrix. Symmetric, no self entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_edges(vertex_count: usize, edges: &[[usize; 2]]) -> Self {
        let mut neighbors = vec![Vec::new(); vertex_count];
        for &[a, b] in edges {
            if a == b {
                continue;
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Adjacency { neighbors }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// Area-weighted vertex normals.
///
/// Every vertex must belong to at least one triangle. A vertex whose
/// accumulated normal vanishes (all incident faces degenerate or cancelling)
/// gets `(0, 0, 1)`.
pub fn vertex_normals(mesh: &Mesh) -> Result<Vec<Vec3>> {
    if mesh.triangles.is_empty() {
        return Err(Error::validation("vertex normals need at least one triangle"));
    }
    let mut acc = vec![[0.0; 3]; mesh.vertices.len()];
    let mut used = vec![false; mesh.vertices.len()];
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        // |cross| is twice the area, so summing raw cross products is area weighting.
        let n = math::cross(math::sub(b, a), math::sub(c, a));
        for &i in tri {
            acc[i] = math::add(acc[i], n);
            used[i] = true;
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::validation(format!(
            "vertex {i} is not referenced by any triangle"
        )));
    }
    Ok(acc
        .into_iter()
        .map(|n| math::normalize(n).unwrap_or([0.0, 0.0, 1.0]))
        .collect())
}

/// Uniform-weight Laplacian smoothing:
/// `v_i <- (1 - lambda) v_i + lambda * mean(neighbours of i)`, applied `iters`
/// times with Jacobi (simultaneous) updates.
pub fn laplacian_smooth(mesh: &Mesh, lambda: f64, iters: usize) -> Result<Mesh> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::validation(format!(
            "smoothing lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let adj = mesh.adjacency();
    if let Some(i) = (0..adj.len()).find(|&i| adj.neighbors(i).is_empty()) {
        return Err(Error::validation(format!(
            "vertex {i} is isolated and cannot be smoothed"
        )));
    }
    let mut cur = mesh.vertices.clone();
    if lambda == 0.0 {
        return mesh.with_vertices(cur);
    }
    let mut next = cur.clone();
    for _ in 0..iters {
        for (i, out) in next.iter_mut().enumerate() {
            let nb = adj.neighbors(i);
            let mut mean = [0.0; 3];
            for &j in nb {
                mean = math::add(mean, cur[j]);
            }
            let mean = math::scale(mean, 1.0 / nb.len() as f64);
            let v = cur[i];
            for a in 0..3 {
                out[a] = (1.0 - lambda) * v[a] + lambda * mean[a];
            }
        }
        core::mem::swap(&mut cur, &mut next);
    }
    mesh.with_vertices(cur)
}

/// Low-frequency mesh plus per-vertex high-frequency offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySplit {
    pub low: Mesh,
    pub high: Vec<Vec3>,
}

/// Splits `gt` into a smoothed part and the residual wrinkle offsets.
///
/// `low + high == gt` holds bit for bit whenever some representable pair
/// within an ulp of the smoothed value allows it. When `gt` is much closer to
/// zero than the smoothed value no such pair exists, and the reconstruction is
/// off by at most one ulp of the larger operand.
pub fn frequency_decompose(gt: &Mesh, lambda: f64, iters: usize) -> Result<FrequencySplit> {
    let smooth = laplacian_smooth(gt, lambda, iters)?;
    let mut low = Vec::with_capacity(gt.vertex_count());
    let mut high = Vec::with_capacity(gt.vertex_count());
    for (g, s) in gt.vertices.iter().zip(smooth.vertices.iter()) {
        let mut l = [0.0; 3];
        let mut h = [0.0; 3];
        for a in 0..3 {
            (l[a], h[a]) = split_coordinate(g[a], s[a]);
        }
        low.push(l);
        high.push(h);
    }
    Ok(FrequencySplit {
        low: gt.with_vertices(low)?,
        high,
    })
}

fn split_coordinate(g: f64, s: f64) -> (f64, f64) {
    let h = g - s;
    if s + h == g {
        return (s, h);
    }
    let l = g - h;
    if l + h == g {
        return (l, h);
    }
    // Snap s onto g's ulp grid so g - l is exact.
    let u = next_up(math::abs(g)) - math::abs(g);
    let l = libm::round(s / u) * u;
    let h2 = g - l;
    if l + h2 == g && math::abs(l - s) <= u {
        return (l, h2);
    }
    (s, h)
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

/// Flat `cols x rows` grid in the z = 0 plane, counter-clockwise winding
/// (normals along +z). Handy for tests and procedural assets.
pub fn grid(cols: usize, rows: usize, spacing: f64) -> Result<Mesh> {
    if cols < 2 || rows < 2 {
        return Err(Error::validation("grid needs at least 2x2 vertices"));
    }
    let mut vertices = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            vertices.push([c as f64 * spacing, r as f64 * spacing, 0.0]);
        }
    }
    let mut triangles = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            let b = a + 1;
            let d = a + cols;
            let e = d + 1;
            triangles.push([a, b, e]);
            triangles.push([a, e, d]);
        }
    }
    Mesh::new(vertices, triangles)
}
