//! Penetration handling for predicted cloth and error metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{self, Vec3};
use crate::mesh::{vertex_normals, Mesh};
use crate::spatial::MeshSurface;
use crate::{Error, Result};

/// One cloth vertex found inside the character.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penetration {
    pub vertex: usize,
    /// Closest point on the character surface.
    pub point: Vec3,
    /// Interpolated unit normal at `point`.
    pub normal: Vec3,
    /// Distance from the vertex to `point`.
    pub depth: f64,
}

/// Penetrated vertices in ascending index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PenetrationReport {
    pub penetrations: Vec<Penetration>,
}

impl PenetrationReport {
    pub fn len(&self) -> usize {
        self.penetrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.penetrations.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.penetrations.iter().map(|p| p.vertex).collect()
    }
}

pub fn detect_penetrations(cloth: &Mesh, character: &Mesh) -> Result<PenetrationReport> {
    let surface = MeshSurface::new(character)?;
    Ok(detect_with(cloth.vertices(), &surface))
}

fn detect_with(vertices: &[Vec3], surface: &MeshSurface) -> PenetrationReport {
    let penetrations = vertices
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let sp = surface.closest(v);
            (sp.inside && sp.distance > 0.0).then_some(Penetration {
                vertex: i,
                point: sp.point,
                normal: sp.normal,
                depth: sp.distance,
            })
        })
        .collect();
    PenetrationReport { penetrations }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub cloth: Mesh,
    /// Penetrated count before each iteration, then after the last one.
    pub history: Vec<usize>,
    /// Vertices still inside after the final iteration.
    pub remaining: Vec<usize>,
}

/// Default pull-out distance: `1e-3` of the character's bounding-box diagonal.
pub fn default_epsilon(character: &Mesh) -> f64 {
    1e-3 * character.bbox_diagonal()
}

/// Moves every penetrated vertex to `closest + epsilon * normal`, then
/// re-detects, for at most `max_iters` rounds.
pub fn resolve_penetrations(cloth: &Mesh, character: &Mesh, epsilon: f64, max_iters: usize) -> Result<Resolution> {
    if !(epsilon > 0.0) {
        return Err(Error::validation(format!("epsilon must be > 0, got {epsilon}")));
    }
    let surface = MeshSurface::new(character)?;
    let mut v = cloth.vertices().to_vec();
    let mut report = detect_with(&v, &surface);
    let mut history = alloc::vec![report.len()];
    for _ in 0..max_iters {
        if report.is_empty() {
            break;
        }
        for p in &report.penetrations {
            v[p.vertex] = math::add(p.point, math::scale(p.normal, epsilon));
        }
        report = detect_with(&v, &surface);
        history.push(report.len());
    }
    Ok(Resolution {
        cloth: cloth.with_vertices(v)?,
        history,
        remaining: report.indices(),
    })
}

/// Position and normal errors between a prediction and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Mean vertex distance, meters.
    pub e_dist: f64,
    /// Mean vertex-normal angle, degrees.
    pub e_norm: f64,
    pub per_vertex_dist: Vec<f64>,
    pub per_vertex_angle: Vec<f64>,
}

pub fn eval_metrics(pred: &Mesh, gt: &Mesh) -> Result<Metrics> {
    if !pred.same_topology(gt) {
        return Err(Error::validation("prediction and ground truth have different topology"));
    }
    let np = vertex_normals(pred)?;
    let ng = vertex_normals(gt)?;
    let per_vertex_dist: Vec<f64> = pred
        .vertices()
        .iter()
        .zip(gt.vertices())
        .map(|(a, b)| math::dist(*a, *b))
        .collect();
    let per_vertex_angle: Vec<f64> = np
        .iter()
        .zip(&ng)
        .map(|(a, b)| math::angle_between(*a, *b).to_degrees())
        .collect();
    let n = per_vertex_dist.len().max(1) as f64;
    Ok(Metrics {
        e_dist: per_vertex_dist.iter().sum::<f64>() / n,
        e_norm: per_vertex_angle.iter().sum::<f64>() / n,
        per_vertex_dist,
        per_vertex_angle,
    })
}
