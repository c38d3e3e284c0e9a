//! Lattice seeding and point-distribution statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::levelset::LevelSetGrid;
use crate::error::GeometryError;
use crate::math::{SmoothingKernel, Vect};
use crate::particles::{CellGrid, ParticleSet};

/// One particle per lattice cell whose center has interpolated `phi > 0`.
/// Cells are anchored at the coordinate origin, so the lattice does not
/// depend on the grid margins.
pub fn generate_lattice_particles(ls: &LevelSetGrid, dp: f64) -> Result<ParticleSet, GeometryError> {
    let dim = ls.dim();
    let lo = ls.origin;
    let hi = ls.upper();
    let mut first = [0i64; 3];
    let mut count = [1i64; 3];
    for a in 0..dim {
        first[a] = (lo[a] / dp - 0.5).floor() as i64;
        count[a] = ((hi[a] / dp - 0.5).ceil() as i64 - first[a]).max(0) + 1;
    }
    let mut points = Vec::new();
    for k in 0..count[2] {
        for j in 0..count[1] {
            for i in 0..count[0] {
                let idx = [i, j, k];
                let mut p = Vect::zeros();
                for a in 0..dim {
                    p[a] = ((first[a] + idx[a]) as f64 + 0.5) * dp;
                }
                if (0..dim).any(|a| p[a] < lo[a] || p[a] > hi[a]) {
                    continue;
                }
                if ls.value(&p) > 0.0 {
                    points.push(p);
                }
            }
        }
    }
    if points.is_empty() {
        return Err(GeometryError::EmptyBody);
    }
    Ok(ParticleSet::uniform(dim, points, dp, 1.0)?)
}

/// Uniform random displacement in `[-amplitude, amplitude]` per active axis.
pub fn jitter(points: &mut [Vect], dim: usize, amplitude: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in points.iter_mut() {
        for a in 0..dim {
            p[a] += rng.random_range(-amplitude..=amplitude);
        }
    }
}

/// Distance from every point to its nearest other point within `radius`
/// (`radius` itself when there is none).
pub fn nearest_neighbor_distances(points: &[Vect], radius: f64) -> Vec<f64> {
    let grid = CellGrid::new(points, radius);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = radius * radius;
            grid.for_each_near(p, |j| {
                if j != i {
                    best = best.min((p - points[j]).norm_squared());
                }
            });
            best.sqrt()
        })
        .collect()
}

/// Coefficient of variation of the nearest-neighbor distance.
pub fn nearest_neighbor_cv(points: &[Vect], radius: f64) -> f64 {
    let d = nearest_neighbor_distances(points, radius);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Largest kernel density estimate `sum_j V_j W_ij` over the points.
pub fn max_kernel_sum(points: &[Vect], kernel: &SmoothingKernel) -> f64 {
    let vol = kernel.dp().powi(kernel.dim() as i32);
    let grid = CellGrid::new(points, kernel.cutoff());
    points
        .iter()
        .map(|p| {
            let mut s = 0.0;
            grid.for_each_near(p, |j| {
                let r = (p - points[j]).norm();
                if r < kernel.cutoff() {
                    s += vol * kernel.value(r);
                }
            });
            s
        })
        .fold(0.0, f64::max)
}
