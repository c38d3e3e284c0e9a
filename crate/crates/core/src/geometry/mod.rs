//! Geometry sources, particle generation and fiber reconstruction.

pub mod biventricle;
pub mod fibers;
pub mod lattice;
pub mod levelset;
pub mod pseudo;
pub mod relax;
pub mod stl;

pub use biventricle::{generate_biventricle, BiventricleSpec};
pub use fibers::{reconstruct_fibers, FiberAngles, FiberField};
pub use lattice::{generate_lattice_particles, jitter, nearest_neighbor_cv};
pub use levelset::{build_signed_distance, LevelSetGrid, Surface};
pub use pseudo::{label_nodes, solve_pseudo_distance, NodeLabel, PseudoDistance};
pub use relax::{relax_particles, RelaxDomain, RelaxParams, RelaxReport};
pub use stl::{parse_stl, StlMesh, TriangleMesh};

use crate::error::GeometryError;
use crate::math::Vect;

/// Pseudo-distance and fiber frames for particles inside a tagged grid.
pub fn fibers_for_body(
    ls: &LevelSetGrid,
    points: &[Vect],
    band: f64,
    angles: &FiberAngles,
    axis: &Vect,
) -> Result<FiberField, GeometryError> {
    let labels = label_nodes(ls, band);
    let sol = solve_pseudo_distance(ls, labels, 1e-8, 200_000)?;
    let psi: Vec<f64> = points.iter().map(|p| sol.at(ls, p).unwrap_or(0.5)).collect();
    Ok(reconstruct_fibers(points, ls, &psi, angles, axis))
}
