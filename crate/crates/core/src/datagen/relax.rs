use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Vec3};
use crate::mesh::Mesh;
use crate::skinning::{lbs_skin, Pose, RigAsset, SkinningWeights};
use crate::spatial::{bind_cloth_to_body, MeshSurface, SurfacePoint};
use crate::{Error, Result};

/// Mass-spring relaxation settings. Stiffnesses are in N/m, lengths in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub structural: f64,
    pub shear: f64,
    pub bend: f64,
    pub gravity: Vec3,
    /// Cloth areal density in kg/m^2, lumped to vertices.
    pub density: f64,
    /// Initial line-search step in m/N.
    pub step_size: f64,
    /// Convergence threshold on the largest free-vertex residual force, N.
    pub tolerance: f64,
    /// Iteration cap per substep.
    pub max_iters: usize,
    pub margin: f64,
    pub substeps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            structural: 80.0,
            shear: 40.0,
            bend: 4.0,
            gravity: [0.0, -9.8, 0.0],
            density: 0.2,
            step_size: 2e-3,
            tolerance: 1e-4,
            max_iters: 1000,
            margin: 2e-3,
            substeps: 8,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.structural > 0.0
            && self.shear > 0.0
            && self.bend > 0.0
            && self.tolerance > 0.0
            && self.margin >= 0.0
            && self.density >= 0.0
            && self.step_size > 0.0
            && self.substeps >= 1
            && self.max_iters >= 1
            && self.gravity.iter().all(|g| g.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid simulation parameters: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub stiffness: f64,
    pub kind: SpringKind,
}

/// Result of relaxing one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxOutcome {
    pub cloth: Mesh,
    /// Whether every substep met the force tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Largest residual force at the end of the last substep, N.
    pub residual: f64,
    /// Accepted iterations that raised the energy; zero for a descent method.
    pub energy_increases: usize,
}

/// Spring network, lumped masses and attachment data for one asset.
#[derive(Clone, Debug)]
pub struct ClothSim {
    pub params: SimParams,
    pub springs: Vec<Spring>,
    pub mass: Vec<f64>,
    pinned: Vec<bool>,
    template: Vec<Vec3>,
    cloth_weights: SkinningWeights,
    body: Mesh,
    body_weights: SkinningWeights,
    cloth: Mesh,
}

impl ClothSim {
    pub fn new(asset: &RigAsset, params: SimParams) -> Result<Self> {
        params.validate()?;
        let binding = bind_cloth_to_body(&asset.cloth, &asset.body)?;
        let cloth_weights = asset.initial_cloth_weights(&binding)?;
        let mut pinned = vec![false; asset.cloth.vertex_count()];
        for &p in &asset.pinned {
            pinned[p] = true;
        }
        Ok(ClothSim {
            springs: build_springs(&asset.cloth, &params),
            mass: lumped_mass(&asset.cloth, params.density),
            params,
            pinned,
            template: asset.cloth.vertices().to_vec(),
            cloth_weights,
            body: asset.body.clone(),
            body_weights: asset.body_weights.clone(),
            cloth: asset.cloth.clone(),
        })
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned[i]
    }

    /// Spring plus gravitational potential energy.
    pub fn energy(&self, x: &[Vec3]) -> f64 {
        let mut e = 0.0;
        for s in &self.springs {
            let d = math::dist(x[s.a], x[s.b]) - s.rest;
            e += 0.5 * s.stiffness * d * d;
        }
        for (p, &m) in x.iter().zip(&self.mass) {
            e -= m * math::dot(self.params.gravity, *p);
        }
        e
    }

    pub fn gradient(&self, x: &[Vec3]) -> Vec<Vec3> {
        let mut g: Vec<Vec3> = self.mass.iter().map(|&m| math::scale(self.params.gravity, -m)).collect();
        for s in &self.springs {
            let v = math::sub(x[s.a], x[s.b]);
            let l = math::norm(v);
            if l == 0.0 {
                continue;
            }
            let f = math::scale(v, s.stiffness * (l - s.rest) / l);
            g[s.a] = math::add(g[s.a], f);
            g[s.b] = math::sub(g[s.b], f);
        }
        g
    }

    fn skinned_template(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        lbs_skin(&self.template, pose, &self.cloth_weights)
    }

    /// Relaxes the cloth from `prev` (equilibrium at `from`) to equilibrium at `to`.
    pub fn relax(&self, from: &Pose, to: &Pose, prev: &Mesh) -> Result<RelaxOutcome> {
        if !prev.same_topology(&self.cloth) {
            return Err(Error::validation("previous cloth does not share the template topology"));
        }
        let mut x = prev.vertices().to_vec();
        let mut last_skin = self.skinned_template(from)?;
        let mut out = RelaxOutcome {
            cloth: prev.clone(),
            converged: true,
            iterations: 0,
            residual: 0.0,
            energy_increases: 0,
        };
        let steps = self.params.substeps;
        for s in 1..=steps {
            let pose = Pose::lerp(from, to, s as f64 / steps as f64)?;
            let skin = self.skinned_template(&pose)?;
            for (i, p) in x.iter_mut().enumerate() {
                *p = if self.pinned[i] {
                    skin[i]
                } else {
                    math::add(*p, math::sub(skin[i], last_skin[i]))
                };
            }
            last_skin = skin;
            let body = self.body.with_vertices(lbs_skin(self.body.vertices(), &pose, &self.body_weights)?)?;
            let surface = MeshSurface::new(&body)?;
            let stats = self.solve(&mut x, &surface);
            out.iterations += stats.iterations;
            out.residual = stats.residual;
            out.converged &= stats.converged;
            out.energy_increases += stats.energy_increases;
        }
        if x.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite { op: "relax_cloth" });
        }
        out.cloth = self.cloth.with_vertices(x)?;
        Ok(out)
    }

    fn solve(&self, x: &mut [Vec3], surface: &MeshSurface) -> SolveStats {
        let n = x.len();
        let mut contact = Contacts::new(n, self.params.margin);
        contact.project(x, &self.pinned, surface);
        let mut e = self.energy(x);
        let mut g = self.gradient(x);
        let mut d = vec![[0.0; 3]; n];
        let mut g_prev: Option<Vec<Vec3>> = None;
        let mut t_guess = self.params.step_size;
        let mut stats = SolveStats {
            iterations: 0,
            residual: f64::INFINITY,
            converged: false,
            energy_increases: 0,
        };
        for it in 0..self.params.max_iters {
            let mut sd = vec![[0.0; 3]; n];
            let mut residual: f64 = 0.0;
            for i in 0..n {
                if self.pinned[i] {
                    continue;
                }
                let f = contact.clip(i, math::scale(g[i], -1.0));
                residual = residual.max(math::norm(f));
                sd[i] = f;
            }
            stats.residual = residual;
            stats.iterations = it;
            if residual < self.params.tolerance {
                stats.converged = true;
                return stats;
            }
            // Polak-Ribiere+ with restarts.
            let beta = match &g_prev {
                Some(gp) => {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for i in 0..n {
                        if self.pinned[i] {
                            continue;
                        }
                        num += math::dot(g[i], math::sub(g[i], gp[i]));
                        den += math::norm_sq(gp[i]);
                    }
                    if den > 0.0 { (num / den).max(0.0) } else { 0.0 }
                }
                None => 0.0,
            };
            let mut slope = 0.0;
            for i in 0..n {
                if self.pinned[i] {
                    d[i] = [0.0; 3];
                    continue;
                }
                d[i] = contact.clip(i, math::add(sd[i], math::scale(d[i], beta)));
                slope += math::dot(g[i], d[i]);
            }
            if slope >= 0.0 {
                d.copy_from_slice(&sd);
                slope = -sd.iter().map(|v| math::norm_sq(*v)).sum::<f64>();
            }
            if slope >= 0.0 {
                break;
            }

            let mut t = t_guess;
            let mut accepted = None;
            for _ in 0..50 {
                let mut trial: Vec<Vec3> = x.iter().zip(&d).map(|(p, di)| math::add(*p, math::scale(*di, t))).collect();
                let mut trial_contact = contact.clone();
                trial_contact.project(&mut trial, &self.pinned, surface);
                let e_trial = self.energy(&trial);
                let moved: f64 = (0..n).map(|i| math::dot(g[i], math::sub(trial[i], x[i]))).sum();
                if moved < 0.0 && e_trial <= e + 1e-4 * moved {
                    accepted = Some((trial, trial_contact, e_trial));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, trial_contact, e_trial)) = accepted else {
                break;
            };
            if e_trial > e {
                stats.energy_increases += 1;
            }
            x.copy_from_slice(&trial);
            contact = trial_contact;
            e = e_trial;
            g_prev = Some(core::mem::replace(&mut g, self.gradient(x)));
            t_guess = t * 2.0;
            stats.iterations = it + 1;
        }
        stats
    }
}

struct SolveStats {
    iterations: usize,
    residual: f64,
    converged: bool,
    energy_increases: usize,
}

/// Collision pushout state with a per-vertex cache of the last query, used
/// to skip queries for vertices that cannot have reached the margin band.
#[derive(Clone)]
struct Contacts {
    margin: f64,
    cache: Vec<Option<(Vec3, f64)>>,
    normal: Vec<Option<Vec3>>,
}

impl Contacts {
    fn new(n: usize, margin: f64) -> Self {
        Contacts {
            margin,
            cache: vec![None; n],
            normal: vec![None; n],
        }
    }

    fn query(&mut self, i: usize, p: Vec3, surface: &MeshSurface) -> Option<SurfacePoint> {
        if let Some((q, d)) = self.cache[i] {
            if d - math::dist(p, q) > self.margin * 1.5 {
                return None;
            }
        }
        let sp = surface.closest(p);
        self.cache[i] = Some((p, if sp.inside { 0.0 } else { sp.distance }));
        Some(sp)
    }

    /// Pushes vertices that are inside the body or closer than the margin to
    /// `closest + margin * normal`.
    fn project(&mut self, x: &mut [Vec3], pinned: &[bool], surface: &MeshSurface) {
        for i in 0..x.len() {
            self.normal[i] = None;
            if pinned[i] {
                continue;
            }
            for _ in 0..4 {
                let Some(sp) = self.query(i, x[i], surface) else { break };
                if !sp.inside && sp.distance >= self.margin {
                    if sp.distance <= self.margin * (1.0 + 1e-9) + 1e-12 {
                        self.normal[i] = Some(sp.normal);
                    }
                    break;
                }
                x[i] = math::add(sp.point, math::scale(sp.normal, self.margin));
                self.normal[i] = Some(sp.normal);
                self.cache[i] = None;
            }
        }
    }

    /// Removes the component of `f` pushing a contact vertex into the body.
    fn clip(&self, i: usize, f: Vec3) -> Vec3 {
        match self.normal[i] {
            Some(n) => {
                let fn_ = math::dot(f, n);
                if fn_ < 0.0 {
                    math::sub(f, math::scale(n, fn_))
                } else {
                    f
                }
            }
            None => f,
        }
    }
}

/// Structural springs on triangle edges, shear springs on each triangle's
/// longest edge, and springs across every interior edge between the two
/// opposite vertices (bend across structural edges, shear across diagonals).
pub fn build_springs(cloth: &Mesh, params: &SimParams) -> Vec<Spring> {
    let x = cloth.vertices();
    let edges = cloth.edges();
    let edge_index = |a: usize, b: usize| {
        let key = [a.min(b), a.max(b)];
        edges.binary_search(&key).ok()
    };
    let mut diagonal = vec![false; edges.len()];
    let mut opposite: Vec<Vec<usize>> = vec![Vec::new(); edges.len()];
    for t in cloth.triangles() {
        let mut longest = (f64::NEG_INFINITY, 0);
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            if let Some(e) = edge_index(a, b) {
                let l = math::dist(x[a], x[b]);
                if l > longest.0 {
                    longest = (l, e);
                }
                opposite[e].push(c);
            }
        }
        diagonal[longest.1] = true;
    }
    let mut springs = Vec::new();
    for (e, &[a, b]) in edges.iter().enumerate() {
        let (stiffness, kind) = if diagonal[e] {
            (params.shear, SpringKind::Shear)
        } else {
            (params.structural, SpringKind::Structural)
        };
        springs.push(Spring {
            a,
            b,
            rest: math::dist(x[a], x[b]),
            stiffness,
            kind,
        });
    }
    for (e, opp) in opposite.iter().enumerate() {
        if let [c, d] = opp.as_slice() {
            let (stiffness, kind) = if diagonal[e] {
                (params.shear, SpringKind::Shear)
            } else {
                (params.bend, SpringKind::Bend)
            };
            springs.push(Spring {
                a: (*c).min(*d),
                b: (*c).max(*d),
                rest: math::dist(x[*c], x[*d]),
                stiffness,
                kind,
            });
        }
    }
    springs
}

fn lumped_mass(cloth: &Mesh, density: f64) -> Vec<f64> {
    let x = cloth.vertices();
    let mut m = vec![0.0; x.len()];
    for t in cloth.triangles() {
        let area = 0.5 * math::norm(math::cross(math::sub(x[t[1]], x[t[0]]), math::sub(x[t[2]], x[t[0]])));
        for &v in t {
            m[v] += density * area / 3.0;
        }
    }
    m
}

/// One-shot form of [`ClothSim::relax`].
pub fn relax_cloth(asset: &RigAsset, from: &Pose, to: &Pose, prev: &Mesh, params: &SimParams) -> Result<RelaxOutcome> {
    ClothSim::new(asset, params.clone())?.relax(from, to, prev)
}
