//! Signed-distance grids (positive inside the body).

use std::io::Write;

use rayon::prelude::*;

use super::stl::TriangleMesh;
use crate::math::Vect;

/// Which boundary a grid node is nearest to. Used to set up the
/// pseudo-distance problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Epi,
    Endo,
    /// Truncation plane or any other boundary without a Dirichlet value.
    Open,
}

#[derive(Debug, Clone)]
pub struct LevelSetGrid {
    pub origin: Vect,
    pub spacing: f64,
    /// Node counts; `dims[2] == 1` for planar problems.
    pub dims: [usize; 3],
    pub phi: Vec<f64>,
    /// Nearest-boundary tag per node, when the source knows it.
    pub surface: Option<Vec<Surface>>,
    /// Distance field used for normals in fiber construction, when it
    /// differs from `phi` (for example without a truncation plane).
    pub orientation: Option<Vec<f64>>,
}

impl LevelSetGrid {
    /// Samples `f` at every node; nodes run x fastest.
    pub fn from_fn(origin: Vect, spacing: f64, dims: [usize; 3], f: impl Fn(&Vect) -> f64 + Sync) -> Self {
        let n = dims.iter().product();
        let phi = (0..n)
            .into_par_iter()
            .map(|idx| f(&node_position(origin, spacing, dims, idx)))
            .collect();
        Self { origin, spacing, dims, phi, surface: None, orientation: None }
    }

    /// Grid covering `[lower - margin, upper + margin]` in the first `dim`
    /// coordinates.
    pub fn covering(lower: Vect, upper: Vect, spacing: f64, margin: f64, dim: usize) -> (Vect, [usize; 3]) {
        let mut origin = Vect::zeros();
        let mut dims = [1usize; 3];
        for a in 0..dim {
            origin[a] = lower[a] - margin;
            dims[a] = ((upper[a] + margin - origin[a]) / spacing).ceil() as usize + 1;
        }
        (origin, dims)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn dim(&self) -> usize {
        if self.dims[2] > 1 {
            3
        } else if self.dims[1] > 1 {
            2
        } else {
            1
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn position(&self, idx: usize) -> Vect {
        node_position(self.origin, self.spacing, self.dims, idx)
    }

    pub fn upper(&self) -> Vect {
        let mut u = self.origin;
        for a in 0..3 {
            u[a] += (self.dims[a] - 1) as f64 * self.spacing;
        }
        u
    }

    /// Trilinear stencil of `p`: node indices and weights. Points outside the
    /// grid are clamped onto it.
    pub fn stencil(&self, p: &Vect) -> [(usize, f64); 8] {
        let mut base = [0usize; 3];
        let mut t = [0.0f64; 3];
        let mut step = [0usize; 3];
        for a in 0..3 {
            if self.dims[a] == 1 {
                continue;
            }
            let s = ((p[a] - self.origin[a]) / self.spacing).clamp(0.0, (self.dims[a] - 1) as f64);
            let b = (s.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            t[a] = s - b as f64;
            step[a] = 1;
        }
        let mut out = [(0usize, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if bits[a] == 1 { t[a] } else { 1.0 - t[a] };
            }
            let idx = self.index(base[0] + bits[0] * step[0], base[1] + bits[1] * step[1], base[2] + bits[2] * step[2]);
            *slot = (idx, w);
        }
        out
    }

    /// Trilinear interpolation of a nodal field.
    pub fn interpolate_field(&self, field: &[f64], p: &Vect) -> f64 {
        self.stencil(p).iter().map(|&(i, w)| w * field[i]).sum()
    }

    pub fn value(&self, p: &Vect) -> f64 {
        self.interpolate_field(&self.phi, p)
    }

    /// Central-difference gradient of the interpolated field.
    pub fn gradient_of(&self, field: &[f64], p: &Vect) -> Vect {
        let h = 0.5 * self.spacing;
        let mut g = Vect::zeros();
        for a in 0..3 {
            if self.dims[a] == 1 {
                continue;
            }
            let mut lo = *p;
            let mut hi = *p;
            lo[a] -= h;
            hi[a] += h;
            g[a] = (self.interpolate_field(field, &hi) - self.interpolate_field(field, &lo)) / (2.0 * h);
        }
        g
    }

    pub fn gradient(&self, p: &Vect) -> Vect {
        self.gradient_of(&self.phi, p)
    }

    /// Normal field source for fiber construction.
    pub fn orientation_field(&self) -> &[f64] {
        self.orientation.as_deref().unwrap_or(&self.phi)
    }

    /// Legacy VTK structured-points dump of `phi`.
    pub fn write_vtk(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "signed distance")?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET STRUCTURED_POINTS")?;
        writeln!(out, "DIMENSIONS {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        writeln!(out, "ORIGIN {} {} {}", self.origin.x, self.origin.y, self.origin.z)?;
        writeln!(out, "SPACING {0} {0} {0}", self.spacing)?;
        writeln!(out, "POINT_DATA {}", self.len())?;
        writeln!(out, "SCALARS phi double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in &self.phi {
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }
}

fn node_position(origin: Vect, spacing: f64, dims: [usize; 3], idx: usize) -> Vect {
    let i = idx % dims[0];
    let j = (idx / dims[0]) % dims[1];
    let k = idx / (dims[0] * dims[1]);
    origin + Vect::new(i as f64, j as f64, k as f64) * spacing
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vect, a: &Vect, b: &Vect, c: &Vect) -> Vect {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Möller-Trumbore ray/triangle test, counting hits with `t > 0`.
fn ray_hits(origin: &Vect, dir: &Vect, a: &Vect, b: &Vect, c: &Vect) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&qv) * inv > 0.0
}

/// Ray-parity inside test, majority over three skew directions.
pub fn is_inside(mesh: &TriangleMesh, p: &Vect) -> bool {
    let dirs = [
        Vect::new(0.5773, 0.5774, 0.5775).normalize(),
        Vect::new(-0.3141, 0.8660, -0.2718).normalize(),
        Vect::new(0.1732, -0.2236, 0.9591).normalize(),
    ];
    let votes = dirs
        .iter()
        .filter(|d| {
            let hits = (0..mesh.triangles.len())
                .filter(|&t| {
                    let [a, b, c] = mesh.corners(t);
                    ray_hits(p, d, &a, &b, &c)
                })
                .count();
            hits % 2 == 1
        })
        .count();
    votes >= 2
}

/// Unsigned distance from `p` to the mesh surface.
pub fn surface_distance(mesh: &TriangleMesh, p: &Vect) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            (p - closest_point_on_triangle(p, &a, &b, &c)).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Exact signed distance to a triangle mesh on a regular grid, positive
/// inside. A mesh that is not watertight gets a warning because its inside
/// test is ambiguous.
pub fn build_signed_distance(mesh: &TriangleMesh, origin: Vect, spacing: f64, dims: [usize; 3]) -> LevelSetGrid {
    if !mesh.is_watertight() {
        log::warn!("mesh is not watertight; inside/outside signs may be wrong");
    }
    LevelSetGrid::from_fn(origin, spacing, dims, |p| {
        let d = surface_distance(mesh, p);
        if is_inside(mesh, p) {
            d
        } else {
            -d
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_distances() {
        let cube = TriangleMesh::cuboid(Vect::zeros(), Vect::repeat(1.0));
        let g = build_signed_distance(&cube, Vect::new(0.5, 0.5, 0.5), 1.5, [2, 1, 1]);
        assert!((g.phi[0] - 0.5).abs() < 1e-14);
        assert!((g.phi[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vect::zeros(), Vect::x(), Vect::y());
        assert_eq!(closest_point_on_triangle(&Vect::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert!((closest_point_on_triangle(&Vect::new(0.2, 0.2, 3.0), &a, &b, &c) - Vect::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let q = closest_point_on_triangle(&Vect::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vect::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vect::new(0.5, -2.0, 1.0), &a, &b, &c), Vect::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn sphere_matches_analytic_distance() {
        let levels = 3;
        let mesh = TriangleMesh::icosphere(Vect::zeros(), 1.0, levels);
        // Largest facet circumradius bounds the sagitta 1 - cos(angle).
        let sagitta = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                let centroid = (a + b + c) / 3.0;
                1.0 - centroid.norm()
            })
            .fold(0.0, f64::max);
        let (origin, dims) = LevelSetGrid::covering(Vect::repeat(-1.0), Vect::repeat(1.0), 0.1, 0.3, 3);
        let g = build_signed_distance(&mesh, origin, 0.1, dims);
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            let p = g.position(idx);
            worst = worst.max((g.phi[idx] - (1.0 - p.norm())).abs());
        }
        assert!(worst <= 2.0 * sagitta, "{worst} vs {sagitta}");
    }

    #[test]
    fn eikonal_near_sphere_surface() {
        let mesh = TriangleMesh::icosphere(Vect::zeros(), 1.0, 3);
        let (origin, dims) = LevelSetGrid::covering(Vect::repeat(-1.0), Vect::repeat(1.0), 0.08, 0.4, 3);
        let g = build_signed_distance(&mesh, origin, 0.08, dims);
        let mut checked = 0;
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            if g.phi[idx].abs() > 3.0 * g.spacing || [i, j, k].iter().zip(&g.dims).any(|(&c, &n)| c == 0 || c + 1 == n) {
                continue;
            }
            let grad = Vect::new(
                g.phi[g.index(i + 1, j, k)] - g.phi[g.index(i - 1, j, k)],
                g.phi[g.index(i, j + 1, k)] - g.phi[g.index(i, j - 1, k)],
                g.phi[g.index(i, j, k + 1)] - g.phi[g.index(i, j, k - 1)],
            ) / (2.0 * g.spacing);
            assert!((0.9..=1.1).contains(&grad.norm()), "{}", grad.norm());
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = LevelSetGrid::from_fn(Vect::new(-1.0, 0.0, 0.5), 0.25, [9, 5, 4], |p| 2.0 * p.x - p.y + 0.5 * p.z);
        for p in [Vect::new(0.13, 0.6, 0.8), Vect::new(-0.6, 0.3, 0.9)] {
            assert!((g.value(&p) - (2.0 * p.x - p.y + 0.5 * p.z)).abs() < 1e-12);
            assert!((g.gradient(&p) - Vect::new(2.0, -1.0, 0.5)).norm() < 1e-10);
        }
        let flat = LevelSetGrid::from_fn(Vect::zeros(), 0.1, [11, 11, 1], |p| p.x + p.y);
        assert_eq!(flat.dim(), 2);
        assert!((flat.value(&Vect::new(0.33, 0.41, 0.0)) - 0.74).abs() < 1e-12);
        assert_eq!(flat.gradient(&Vect::new(0.5, 0.5, 0.0)).z, 0.0);
    }

    #[test]
    fn vtk_header() {
        let g = LevelSetGrid::from_fn(Vect::zeros(), 1.0, [2, 2, 2], |p| p.x);
        let mut buf = Vec::new();
        g.write_vtk(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("DIMENSIONS 2 2 2") && text.contains("POINT_DATA 8"));
        assert_eq!(text.lines().count(), 10 + 8);
    }
}
