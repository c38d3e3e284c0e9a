//! Two-ellipsoid biventricular geometry.
//!
//! Both cavities are ellipsoids with their long axis along `y`; the left one
//! is centered at the origin and the right one is shifted along `-x` so that
//! its cavity touches the left epicardium, which makes the left wall the
//! septum. Tissue is the union of the two thickened shells minus both
//! cavities, cut at `y = base_y` keeping the apex side (`y < base_y`).

use serde::{Deserialize, Serialize};

use super::levelset::{LevelSetGrid, Surface};
use crate::math::Vect;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiventricleSpec {
    pub a_lv: f64,
    pub b_lv: f64,
    pub c_lv: f64,
    pub a_rv: f64,
    pub b_rv: f64,
    pub c_rv: f64,
    pub wall_lv: f64,
    pub wall_rv: f64,
    /// Offset of the right cavity center along `x`; `None` places it at
    /// `-(a_lv + wall_lv + a_rv)`.
    pub rv_center_x: Option<f64>,
    pub base_y: f64,
}

impl Default for BiventricleSpec {
    fn default() -> Self {
        Self {
            a_lv: 45.0,
            b_lv: 54.0,
            c_lv: 24.0,
            a_rv: 18.0,
            b_rv: 58.0,
            c_rv: 18.0,
            wall_lv: 6.0,
            wall_rv: 12.0,
            rv_center_x: None,
            base_y: 0.0,
        }
    }
}

impl BiventricleSpec {
    pub fn rv_center(&self) -> Vect {
        Vect::new(self.rv_center_x.unwrap_or(-(self.a_lv + self.wall_lv + self.a_rv)), 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("a_lv", self.a_lv),
            ("b_lv", self.b_lv),
            ("c_lv", self.c_lv),
            ("a_rv", self.a_rv),
            ("b_rv", self.b_rv),
            ("c_rv", self.c_rv),
            ("wall_lv", self.wall_lv),
            ("wall_rv", self.wall_rv),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Signed distance to the left and right cavity surfaces (negative inside).
    pub fn cavity_distances(&self, p: &Vect) -> (f64, f64) {
        let lv = ellipsoid_signed_distance(&[self.a_lv, self.b_lv, self.c_lv], p);
        let rv = ellipsoid_signed_distance(&[self.a_rv, self.b_rv, self.c_rv], &(p - self.rv_center()));
        (lv, rv)
    }

    /// Level-set value without the base cut, and which boundary is active.
    pub fn wall(&self, p: &Vect) -> (f64, Surface) {
        let (d_lv, d_rv) = self.cavity_distances(p);
        let shell = (self.wall_lv - d_lv).max(self.wall_rv - d_rv);
        if shell <= d_lv.min(d_rv) {
            (shell, Surface::Epi)
        } else {
            (d_lv.min(d_rv), Surface::Endo)
        }
    }

    /// Composed level-set value (positive in tissue) and the active boundary.
    pub fn evaluate(&self, p: &Vect) -> (f64, Surface) {
        let (wall, tag) = self.wall(p);
        let cut = self.base_y - p.y;
        if cut < wall {
            (cut, Surface::Open)
        } else {
            (wall, tag)
        }
    }

    pub fn contains(&self, p: &Vect) -> bool {
        self.evaluate(p).0 > 0.0
    }

    /// Bounding box of the tissue region.
    pub fn bounds(&self) -> (Vect, Vect) {
        let rv = self.rv_center();
        let lo = Vect::new(
            (-self.a_lv - self.wall_lv).min(rv.x - self.a_rv - self.wall_rv),
            -(self.b_lv + self.wall_lv).max(self.b_rv + self.wall_rv),
            -(self.c_lv + self.wall_lv).max(self.c_rv + self.wall_rv),
        );
        let hi = Vect::new(
            (self.a_lv + self.wall_lv).max(rv.x + self.a_rv + self.wall_rv),
            self.base_y,
            (self.c_lv + self.wall_lv).max(self.c_rv + self.wall_rv),
        );
        (lo, hi)
    }
}

/// Samples the biventricle on a grid with surface tags and a cut-free
/// orientation field.
pub fn generate_biventricle(spec: &BiventricleSpec, origin: Vect, spacing: f64, dims: [usize; 3]) -> LevelSetGrid {
    let mut grid = LevelSetGrid::from_fn(origin, spacing, dims, |p| spec.evaluate(p).0);
    let (tags, wall): (Vec<Surface>, Vec<f64>) = (0..grid.len())
        .map(|idx| {
            let p = grid.position(idx);
            let (w, tag) = spec.wall(&p);
            (if spec.base_y - p.y < w { Surface::Open } else { tag }, w)
        })
        .unzip();
    grid.surface = Some(tags);
    grid.orientation = Some(wall);
    grid
}

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

/// Bisection for the root of `sum_i (n_i / (s + r_i))^2 = 1`.
fn root(n: &[f64], r: &[f64], g: f64) -> f64 {
    let last = n.len() - 1;
    let mut s0 = n[last] - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { robust_length(n) - 1.0 };
    let mut s = 0.0;
    for _ in 0..2000 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let val: f64 = n.iter().zip(r).map(|(ni, ri)| (ni / (s + ri)).powi(2)).sum::<f64>() - 1.0;
        if val > 0.0 {
            s0 = s;
        } else if val < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Distance from `(y0, y1)`, both non-negative, to the ellipse with
/// semi-axes `e0 >= e1`.
fn ellipse_distance(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let s = root(&[r0 * z0, z1], &[r0, 1.0], g);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

/// Distance from `y` (non-negative components) to the ellipsoid with
/// semi-axes `e0 >= e1 >= e2`.
fn sorted_ellipsoid_distance(e: [f64; 3], y: [f64; 3]) -> f64 {
    let [e0, e1, e2] = e;
    let [y0, y1, y2] = y;
    if y2 > 0.0 {
        if y1 > 0.0 {
            if y0 > 0.0 {
                let z = [y0 / e0, y1 / e1, y2 / e2];
                let g = z.iter().map(|v| v * v).sum::<f64>() - 1.0;
                if g == 0.0 {
                    return 0.0;
                }
                let r0 = (e0 / e2).powi(2);
                let r1 = (e1 / e2).powi(2);
                let s = root(&[r0 * z[0], r1 * z[1], z[2]], &[r0, r1, 1.0], g);
                let x = [r0 * y0 / (s + r0), r1 * y1 / (s + r1), y2 / (s + 1.0)];
                ((x[0] - y0).powi(2) + (x[1] - y1).powi(2) + (x[2] - y2).powi(2)).sqrt()
            } else {
                ellipse_distance(e1, e2, y1, y2)
            }
        } else if y0 > 0.0 {
            ellipse_distance(e0, e2, y0, y2)
        } else {
            (y2 - e2).abs()
        }
    } else {
        let denom0 = e0 * e0 - e2 * e2;
        let denom1 = e1 * e1 - e2 * e2;
        let numer0 = e0 * y0;
        let numer1 = e1 * y1;
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x = [e0 * xde0, e1 * xde1, e2 * discr.sqrt()];
                return ((x[0] - y0).powi(2) + (x[1] - y1).powi(2) + x[2] * x[2]).sqrt();
            }
        }
        ellipse_distance(e0, e1, y0, y1)
    }
}

/// Exact signed distance from `p` to an origin-centered, axis-aligned
/// ellipsoid, negative inside.
pub fn ellipsoid_signed_distance(semi_axes: &[f64; 3], p: &Vect) -> f64 {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| semi_axes[b].total_cmp(&semi_axes[a]));
    let e = order.map(|a| semi_axes[a]);
    let y = order.map(|a| p[a].abs());
    // Equal axes make the ellipse formulas divide by zero; nudge them apart.
    let e = [e[0], e[1].min(e[0] * (1.0 - 1e-12)), e[2].min(e[1] * (1.0 - 1e-12))];
    let d = sorted_ellipsoid_distance(e, y);
    let level: f64 = (0..3).map(|a| (y[a] / e[a]).powi(2)).sum();
    if level < 1.0 {
        -d
    } else {
        d
    }
}
