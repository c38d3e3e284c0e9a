//! Reference-configuration particle data, fixed neighbor lists and the
//! kernel correction matrices.
//!
//! Neighbor lists are built once on the reference positions and never
//! updated. Each particle's list is sorted by neighbor index, so every
//! per-particle summation in the crate visits neighbors in the same order
//! regardless of thread count.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::ParticleError;
use crate::math::{invert, outer, pad_unused, Mat, SmoothingKernel, Vect};

#[derive(Debug, Clone)]
pub struct ParticleSet {
    dim: usize,
    r0: Vec<Vect>,
    volume: Vec<f64>,
    mass: Vec<f64>,
    rho0: Vec<f64>,
}

impl ParticleSet {
    pub fn new(dim: usize, r0: Vec<Vect>, volume: Vec<f64>, rho0: Vec<f64>) -> Result<Self, ParticleError> {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
        let n = r0.len();
        for (what, len) in [("volume", volume.len()), ("rho0", rho0.len())] {
            if len != n {
                return Err(ParticleError::LengthMismatch { what, expected: n, found: len });
            }
        }
        for (i, p) in r0.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(ParticleError::NonFinitePosition { particle: i });
            }
        }
        for (i, &v) in volume.iter().enumerate() {
            if !(v > 0.0) {
                return Err(ParticleError::NonPositiveVolume { particle: i, volume: v });
            }
        }
        let r0 = r0.into_iter().map(|p| crate::math::truncate(p, dim)).collect();
        let mass = volume.iter().zip(&rho0).map(|(v, r)| v * r).collect();
        Ok(Self { dim, r0, volume, mass, rho0 })
    }

    /// Particles of equal volume `dp^dim` and density `rho0`.
    pub fn uniform(dim: usize, r0: Vec<Vect>, dp: f64, rho0: f64) -> Result<Self, ParticleError> {
        let n = r0.len();
        Self::new(dim, r0, vec![dp.powi(dim as i32); n], vec![rho0; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.r0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r0.is_empty()
    }

    pub fn positions(&self) -> &[Vect] {
        &self.r0
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volume
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn densities(&self) -> &[f64] {
        &self.rho0
    }
}

/// One entry of a neighbor list, cached at the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub j: usize,
    /// Reference distance `|r0_i - r0_j|`.
    pub r: f64,
    /// Unit vector `(r0_i - r0_j) / r`.
    pub e: Vect,
    /// Kernel derivative `dW/dr` at `r`.
    pub dw: f64,
}

impl Neighbor {
    /// Kernel gradient with respect to the position of particle `i`.
    #[inline]
    pub fn grad(&self) -> Vect {
        self.e * self.dw
    }
}

/// Compressed per-particle neighbor lists.
#[derive(Debug, Clone, Default)]
pub struct NeighborList {
    offsets: Vec<usize>,
    entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn of(&self, i: usize) -> &[Neighbor] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn from_rows(rows: Vec<Vec<Neighbor>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut entries = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for row in rows {
            entries.extend(row);
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }
}

/// Uniform cell grid over a set of points, cell side `cell`.
pub(crate) struct CellGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl CellGrid {
    pub(crate) fn new(points: &[Vect], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vect, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Calls `f` for every stored index in the 3x3x3 block of cells around `p`.
    pub(crate) fn for_each_near(&self, p: &Vect, mut f: impl FnMut(usize)) {
        let k = Self::key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        list.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }
}

/// All pairs closer than `2h`, found through a cell grid of side `2h`.
pub fn build_neighbor_lists(set: &ParticleSet, kernel: &SmoothingKernel) -> NeighborList {
    build_neighbor_lists_for(set.positions(), kernel)
}

pub(crate) fn build_neighbor_lists_for(points: &[Vect], kernel: &SmoothingKernel) -> NeighborList {
    let cutoff = kernel.cutoff();
    let grid = CellGrid::new(points, cutoff);
    let rows: Vec<Vec<Neighbor>> = points
        .par_iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut row = Vec::new();
            grid.for_each_near(pi, |j| {
                if j == i {
                    return;
                }
                let d = pi - points[j];
                let r = d.norm();
                if r < cutoff {
                    let e = if r > 0.0 { d / r } else { Vect::zeros() };
                    row.push(Neighbor { j, r, e, dw: kernel.gradient(r) });
                }
            });
            row.sort_unstable_by_key(|n| n.j);
            row
        })
        .collect();
    NeighborList::from_rows(rows)
}

/// Kernel moment matrix `sum_j V_j (r0_j - r0_i) ⊗ grad_i W_ij`, padded.
pub fn moment_matrix(set: &ParticleSet, nl: &NeighborList, i: usize) -> Mat {
    let vol = set.volumes();
    let mut m = Mat::zeros();
    for nb in nl.of(i) {
        m += outer(&(-nb.e * nb.r), &nb.grad()) * vol[nb.j];
    }
    pad_unused(m, set.dim())
}

/// Inverse kernel moment matrices, computed once per reference configuration.
pub fn compute_correction_matrices(
    set: &ParticleSet,
    nl: &NeighborList,
    _kernel: &SmoothingKernel,
) -> Result<Vec<Mat>, ParticleError> {
    let dim = set.dim();
    // Moment matrices of a full neighborhood are close to the identity; a
    // determinant many orders below the diagonal scale means a degenerate
    // neighborhood.
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let m = moment_matrix(set, nl, i);
            let scale = (0..dim).map(|a| m[(a, a)].abs()).fold(0.0, f64::max);
            let det = m.determinant();
            if !(scale > 0.0) || det.abs() <= 1e-10 * scale.powi(dim as i32) || !det.is_finite() {
                return Err(ParticleError::SingularMoment { particle: i });
            }
            invert(&m).map_err(|_| ParticleError::SingularMoment { particle: i })
        })
        .collect()
}

/// Corrected gradient of a scalar field in the reference configuration.
pub fn gradient(set: &ParticleSet, nl: &NeighborList, b0: &[Mat], field: &[f64]) -> Vec<Vect> {
    let vol = set.volumes();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut g = Vect::zeros();
            for nb in nl.of(i) {
                g += nb.grad() * (vol[nb.j] * (field[nb.j] - field[i]));
            }
            b0[i].transpose() * g
        })
        .collect()
}

/// Kernel partition of unity estimate `sum_j V_j W_ij + V_i W(0)`.
pub fn kernel_sum(set: &ParticleSet, nl: &NeighborList, kernel: &SmoothingKernel) -> Vec<f64> {
    let vol = set.volumes();
    (0..set.len())
        .map(|i| {
            vol[i] * kernel.value(0.0)
                + nl.of(i).iter().map(|nb| vol[nb.j] * kernel.value(nb.r)).sum::<f64>()
        })
        .collect()
}

/// Regular lattice of spacing `dp` with cell-centered points filling the box
/// `[lower, upper]` in the first `dim` coordinates.
pub fn lattice_points(dim: usize, lower: &Vect, upper: &Vect, dp: f64) -> Vec<Vect> {
    let mut counts = [1usize; 3];
    for a in 0..dim {
        counts[a] = ((upper[a] - lower[a]) / dp - 1e-9).ceil().max(0.0) as usize;
    }
    let mut pts = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut p = Vect::zeros();
                for a in 0..dim {
                    p[a] = lower[a] + (idx[a] as f64 + 0.5) * dp;
                }
                pts.push(p);
            }
        }
    }
    pts
}
