//! Constant-pressure particle relaxation.
//!
//! Particles repel each other with `a_i = -(2 p0 / rho) sum_j V_j grad W_ij`.
//! Inside a body the missing neighbors beyond the surface are replaced by a
//! continuous half-space, whose contribution is the kernel marginal
//! `W_plane(d)` along the outward normal. Particles closer to the surface
//! than `surface_offset * dp` are projected back along `grad phi`.
//! Below `q = 1/2`, where `|W'|` peaks, the repulsion is held at its peak
//! value so compressed pairs cannot merge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lattice::nearest_neighbor_cv;
use super::levelset::LevelSetGrid;
use crate::error::GeometryError;
use crate::math::{SmoothingKernel, Vect};
use crate::particles::CellGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxParams {
    pub steps: usize,
    pub background_pressure: f64,
    pub density: f64,
    /// Minimum distance to the surface, in units of `dp`.
    pub surface_offset: f64,
}

impl Default for RelaxParams {
    fn default() -> Self {
        Self { steps: 5000, background_pressure: 2.0, density: 1.0, surface_offset: 0.5 }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RelaxDomain<'a> {
    Body(&'a LevelSetGrid),
    Periodic { lower: Vect, upper: Vect },
}

#[derive(Debug, Clone)]
pub struct RelaxReport {
    pub positions: Vec<Vect>,
    pub cv_initial: f64,
    pub cv_final: f64,
}

/// `W_plane(d)`: integral of the kernel over the hyperplane at distance `d`.
struct PlaneTable {
    step: f64,
    values: Vec<f64>,
}

impl PlaneTable {
    fn new(kernel: &SmoothingKernel) -> Self {
        let cut = kernel.cutoff();
        let n = 256;
        let step = cut / n as f64;
        let values = (0..=n)
            .map(|i| {
                let d = i as f64 * step;
                let reach = (cut * cut - d * d).max(0.0).sqrt();
                let m = 400;
                let h = reach / m as f64;
                let f = |rho: f64| {
                    let w = kernel.value((d * d + rho * rho).sqrt().min(cut));
                    match kernel.dim() {
                        1 => 0.0,
                        2 => 2.0 * w,
                        _ => std::f64::consts::TAU * rho * w,
                    }
                };
                if kernel.dim() == 1 {
                    return kernel.value(d.min(cut));
                }
                // Composite Simpson rule.
                let mut s = f(0.0) + f(reach);
                for k in 1..m {
                    s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
                }
                s * h / 3.0
            })
            .collect();
        Self { step, values }
    }

    fn value(&self, d: f64) -> f64 {
        let s = d.abs() / self.step;
        let i = s.floor() as usize;
        if i + 1 >= self.values.len() {
            return 0.0;
        }
        let t = s - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// Images of points lying within `reach` of a periodic boundary; each image
/// carries the index of its source point.
fn periodic_images(points: &[Vect], dim: usize, lower: &Vect, upper: &Vect, reach: f64) -> (Vec<Vect>, Vec<usize>) {
    let mut all = points.to_vec();
    let mut source: Vec<usize> = (0..points.len()).collect();
    let len = upper - lower;
    for (i, p) in points.iter().enumerate() {
        let mut shifts: Vec<[f64; 3]> = vec![[0.0; 3]];
        for a in 0..dim {
            let mut options = vec![0.0];
            if p[a] - lower[a] < reach {
                options.push(len[a]);
            }
            if upper[a] - p[a] < reach {
                options.push(-len[a]);
            }
            shifts = shifts
                .into_iter()
                .flat_map(|s| {
                    options.iter().map(move |&o| {
                        let mut s = s;
                        s[a] = o;
                        s
                    })
                })
                .collect();
        }
        for s in shifts.into_iter().skip(1) {
            all.push(p + Vect::new(s[0], s[1], s[2]));
            source.push(i);
        }
    }
    (all, source)
}

fn wrap(p: &mut Vect, dim: usize, lower: &Vect, upper: &Vect) {
    for a in 0..dim {
        let len = upper[a] - lower[a];
        p[a] = lower[a] + (p[a] - lower[a]).rem_euclid(len);
    }
}

/// Moves `p` along `grad phi` until `phi(p) >= target`.
fn project(ls: &LevelSetGrid, p: &mut Vect, target: f64) {
    for _ in 0..4 {
        let phi = ls.value(p);
        if phi >= target {
            return;
        }
        let g = ls.gradient(p);
        let gg = g.norm_squared();
        if gg < 1e-12 {
            return;
        }
        *p += g * ((target - phi) / gg);
    }
}

pub fn relax_particles(
    points: Vec<Vect>,
    dim: usize,
    dp: f64,
    domain: RelaxDomain<'_>,
    params: &RelaxParams,
) -> Result<RelaxReport, GeometryError> {
    let kernel = SmoothingKernel::new(dim, dp);
    let cutoff = kernel.cutoff();
    let vol = dp.powi(dim as i32);
    let coeff = 2.0 * params.background_pressure / params.density;
    let table = PlaneTable::new(&kernel);
    let target = params.surface_offset * dp;
    let mut pos = points;
    if let RelaxDomain::Body(ls) = domain {
        pos.par_iter_mut().for_each(|p| project(ls, p, target));
    }
    let cv_initial = nearest_neighbor_cv(&pos, cutoff);
    let h = kernel.h();
    let r_peak = 0.5 * h;
    let dt_cap = 0.25 * h / coeff.sqrt();

    for step in 0..params.steps {
        let (ext, _) = match domain {
            RelaxDomain::Periodic { lower, upper } => periodic_images(&pos, dim, &lower, &upper, cutoff),
            RelaxDomain::Body(_) => (pos.clone(), Vec::new()),
        };
        let grid = CellGrid::new(&ext, cutoff);
        let acc: Vec<Vect> = pos
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut sum = Vect::zeros();
                grid.for_each_near(p, |j| {
                    if j == i {
                        return;
                    }
                    let d = p - ext[j];
                    let r = d.norm();
                    if r < cutoff && r > 0.0 {
                        sum += d * (kernel.gradient(r.max(r_peak)) / r * vol);
                    }
                });
                if let RelaxDomain::Body(ls) = domain {
                    let phi = ls.value(p);
                    if phi < cutoff {
                        let g = ls.gradient(p);
                        let n = g.norm();
                        if n > 1e-12 {
                            sum -= g / n * table.value(phi.max(0.0));
                        }
                    }
                }
                sum * -coeff
            })
            .collect();
        let a_max = acc.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if !a_max.is_finite() {
            return Err(GeometryError::RelaxationDiverged { step });
        }
        if a_max == 0.0 {
            break;
        }
        let dt = (0.25 * (h / a_max).sqrt()).min(dt_cap);
        pos.par_iter_mut().zip(acc.par_iter()).for_each(|(p, a)| {
            *p += a * (0.5 * dt * dt);
            match domain {
                RelaxDomain::Body(ls) => project(ls, p, target),
                RelaxDomain::Periodic { lower, upper } => wrap(p, dim, &lower, &upper),
            }
        });
        if pos.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::RelaxationDiverged { step });
        }
    }
    let cv_final = match domain {
        RelaxDomain::Periodic { lower, upper } => {
            let (ext, _) = periodic_images(&pos, dim, &lower, &upper, cutoff);
            let d = super::lattice::nearest_neighbor_distances(&ext, cutoff);
            let d = &d[..pos.len()];
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt() / mean
        }
        RelaxDomain::Body(_) => nearest_neighbor_cv(&pos, cutoff),
    };
    Ok(RelaxReport { positions: pos, cv_initial, cv_final })
}
