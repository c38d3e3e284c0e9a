//! Transmural pseudo-distance: a harmonic field that is 0 on the
//! endocardium and 1 on the epicardium, solved by SOR on the level-set grid.

use super::levelset::{LevelSetGrid, Surface};
use crate::error::GeometryError;
use crate::math::Vect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    /// Tissue node, unknown.
    Free,
    /// Exterior node next to the epicardium, fixed at 1.
    Epi,
    /// Cavity node next to the endocardium, fixed at 0.
    Endo,
    /// Not part of the problem; acts as a zero-flux boundary.
    Outside,
}

/// Labels nodes from the sign of `phi` and the surface tags. Exterior nodes
/// within `band` of the surface become Dirichlet nodes.
pub fn label_nodes(ls: &LevelSetGrid, band: f64) -> Vec<NodeLabel> {
    (0..ls.len())
        .map(|idx| {
            let phi = ls.phi[idx];
            if phi > 0.0 {
                return NodeLabel::Free;
            }
            if -phi > band {
                return NodeLabel::Outside;
            }
            match ls.surface.as_ref().map(|s| s[idx]) {
                Some(Surface::Epi) => NodeLabel::Epi,
                Some(Surface::Endo) => NodeLabel::Endo,
                _ => NodeLabel::Outside,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PseudoDistance {
    pub labels: Vec<NodeLabel>,
    /// Nodal values; `NaN` on `Outside` nodes.
    pub psi: Vec<f64>,
    pub iterations: usize,
}

/// SOR solve of the grid Laplacian. Stops when the largest update falls
/// below `tol`.
pub fn solve_pseudo_distance(
    ls: &LevelSetGrid,
    labels: Vec<NodeLabel>,
    tol: f64,
    max_iterations: usize,
) -> Result<PseudoDistance, GeometryError> {
    let has = |l: NodeLabel| labels.iter().any(|&x| x == l);
    if !has(NodeLabel::Epi) || !has(NodeLabel::Endo) {
        return Err(GeometryError::MissingBand);
    }
    let mut psi: Vec<f64> = labels
        .iter()
        .map(|l| match l {
            NodeLabel::Free => 0.5,
            NodeLabel::Epi => 1.0,
            NodeLabel::Endo => 0.0,
            NodeLabel::Outside => f64::NAN,
        })
        .collect();
    let dims = ls.dims;
    // Neighbor lists of the free nodes, restricted to nodes in the problem.
    let mut free = Vec::new();
    let mut offsets = vec![0usize];
    let mut adj = Vec::new();
    for idx in 0..ls.len() {
        if labels[idx] != NodeLabel::Free {
            continue;
        }
        let c = ls.coords(idx);
        for a in 0..3 {
            if dims[a] == 1 {
                continue;
            }
            for up in [false, true] {
                let mut n = c;
                if up {
                    if c[a] + 1 >= dims[a] {
                        continue;
                    }
                    n[a] += 1;
                } else {
                    if c[a] == 0 {
                        continue;
                    }
                    n[a] -= 1;
                }
                let j = ls.index(n[0], n[1], n[2]);
                if labels[j] != NodeLabel::Outside {
                    adj.push(j);
                }
            }
        }
        free.push(idx);
        offsets.push(adj.len());
    }
    let longest = *dims.iter().max().unwrap_or(&1) as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / longest).sin());
    let mut residual = f64::INFINITY;
    for it in 0..max_iterations {
        residual = 0.0;
        for (k, &idx) in free.iter().enumerate() {
            let nbrs = &adj[offsets[k]..offsets[k + 1]];
            if nbrs.is_empty() {
                continue;
            }
            let mean = nbrs.iter().map(|&j| psi[j]).sum::<f64>() / nbrs.len() as f64;
            let update = omega * (mean - psi[idx]);
            psi[idx] += update;
            residual = residual.max(update.abs());
        }
        if residual < tol {
            for &idx in &free {
                psi[idx] = psi[idx].clamp(0.0, 1.0);
            }
            return Ok(PseudoDistance { labels, psi, iterations: it + 1 });
        }
    }
    Err(GeometryError::NotConverged { iterations: max_iterations, residual })
}

impl PseudoDistance {
    /// Trilinear interpolation over the defined nodes of the stencil,
    /// renormalized; `None` when no stencil node is defined.
    pub fn at(&self, ls: &LevelSetGrid, p: &Vect) -> Option<f64> {
        let mut sum = 0.0;
        let mut weight = 0.0;
        for (idx, w) in ls.stencil(p) {
            if self.labels[idx] != NodeLabel::Outside && w > 0.0 {
                sum += w * self.psi[idx];
                weight += w;
            }
        }
        (weight > 1e-12).then(|| (sum / weight).clamp(0.0, 1.0))
    }
}
