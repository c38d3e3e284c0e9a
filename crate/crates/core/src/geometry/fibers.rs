//! Rule-based fiber and sheet directions.
//!
//! The sheet direction is the level-set normal oriented towards the base,
//! `s0 = sign(N . e_y) N`. The reference fiber `f~ = s0 x e_y` is rotated
//! about `s0` by `theta(psi) = (theta_epi - theta_endo) psi + theta_endo`.

use serde::{Deserialize, Serialize};

use super::levelset::LevelSetGrid;
use crate::math::Vect;
use crate::solid::FiberFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberAngles {
    /// Degrees.
    pub epi: f64,
    /// Degrees.
    pub endo: f64,
}

impl Default for FiberAngles {
    fn default() -> Self {
        Self { epi: -70.0, endo: 80.0 }
    }
}

impl FiberAngles {
    /// Rotation angle in radians at pseudo-distance `psi`.
    pub fn theta(&self, psi: f64) -> f64 {
        ((self.epi - self.endo) * psi + self.endo).to_radians()
    }
}

/// Unrotated reference fiber `normalize(s0 x axis)`, or `None` when `s0`
/// is (nearly) parallel to the axis.
pub fn reference_fiber(s0: &Vect, axis: &Vect) -> Option<Vect> {
    let f = s0.cross(axis);
    let n = f.norm();
    (n > 1e-6).then(|| f / n)
}

/// Frame from an (unnormalized) level-set gradient, or `None` when the
/// gradient vanishes or is parallel to the axis.
pub fn fiber_frame(gradient: &Vect, axis: &Vect, theta: f64) -> Option<FiberFrame> {
    let n = gradient.norm();
    if !(n > 1e-9) {
        return None;
    }
    let normal = gradient / n;
    let s0 = if normal.dot(axis) >= 0.0 { normal } else { -normal };
    let ft = reference_fiber(&s0, axis)?;
    let f0 = ft * theta.cos() + s0.cross(&ft) * theta.sin();
    Some(FiberFrame { f0: f0.normalize(), s0 })
}

/// Rotation angle of `f0` about `s0` measured from the reference fiber.
pub fn recovered_angle(frame: &FiberFrame, axis: &Vect) -> Option<f64> {
    let ft = reference_fiber(&frame.s0, axis)?;
    Some(frame.f0.dot(&frame.s0.cross(&ft)).atan2(frame.f0.dot(&ft)))
}

#[derive(Debug, Clone)]
pub struct FiberField {
    pub frames: Vec<FiberFrame>,
    pub psi: Vec<f64>,
    /// Particles whose frame was copied from the nearest valid particle.
    pub flagged: Vec<bool>,
}

pub fn reconstruct_fibers(points: &[Vect], ls: &LevelSetGrid, psi: &[f64], angles: &FiberAngles, axis: &Vect) -> FiberField {
    let field = ls.orientation_field();
    let mut frames: Vec<Option<FiberFrame>> = points
        .iter()
        .zip(psi)
        .map(|(p, &s)| fiber_frame(&ls.gradient_of(field, p), axis, angles.theta(s)))
        .collect();
    let valid: Vec<usize> = (0..points.len()).filter(|&i| frames[i].is_some()).collect();
    let flagged: Vec<bool> = frames.iter().map(Option::is_none).collect();
    for i in 0..points.len() {
        if frames[i].is_some() {
            continue;
        }
        let nearest = valid
            .iter()
            .min_by(|&&a, &&b| (points[a] - points[i]).norm_squared().total_cmp(&(points[b] - points[i]).norm_squared()));
        frames[i] = Some(nearest.and_then(|&j| frames[j]).unwrap_or_default());
    }
    if flagged.iter().any(|&f| f) {
        log::warn!("{} particles have no valid fiber frame; copied from nearest neighbor", flagged.iter().filter(|&&f| f).count());
    }
    FiberField { frames: frames.into_iter().map(Option::unwrap).collect(), psi: psi.to_vec(), flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_quarter_turns() {
        let g = Vect::new(1.0, 0.3, 0.2);
        let axis = Vect::y();
        let zero = fiber_frame(&g, &axis, 0.0).unwrap();
        let ft = reference_fiber(&zero.s0, &axis).unwrap();
        assert!((zero.f0 - ft).norm() < 1e-15);
        let quarter = fiber_frame(&g, &axis, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((quarter.f0 - zero.s0.cross(&ft)).norm() < 1e-15);
    }

    #[test]
    fn endpoint_angles() {
        let a = FiberAngles::default();
        assert!((a.theta(0.0) - 80f64.to_radians()).abs() < 1e-15);
        assert!((a.theta(1.0) + 70f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn sheet_points_towards_the_base() {
        let f = fiber_frame(&Vect::new(0.2, -1.0, 0.1), &Vect::y(), 0.3).unwrap();
        assert!(f.s0.y > 0.0);
    }

    #[test]
    fn degenerate_normals_are_rejected() {
        assert!(fiber_frame(&Vect::zeros(), &Vect::y(), 0.0).is_none());
        assert!(fiber_frame(&Vect::new(0.0, -2.0, 0.0), &Vect::y(), 0.0).is_none());
    }

    #[test]
    fn fallback_copies_the_nearest_frame() {
        // Sphere distance: the normal at the poles is parallel to e_y.
        let ls = LevelSetGrid::from_fn(Vect::repeat(-1.2), 0.05, [49, 49, 49], |p| 1.0 - p.norm());
        let points = vec![Vect::new(0.0, 0.8, 0.0), Vect::new(0.6, 0.0, 0.0), Vect::new(0.05, 0.75, 0.0)];
        let field = reconstruct_fibers(&points, &ls, &[0.5; 3], &FiberAngles::default(), &Vect::y());
        assert_eq!(field.flagged, vec![true, false, false]);
        assert_eq!(field.frames[0], field.frames[2]);
    }

    proptest! {
        #[test]
        fn frames_are_orthonormal_and_angles_recoverable(
            gx in -1.0..1.0f64, gy in -1.0..1.0f64, gz in -1.0..1.0f64, psi in 0.0..1.0f64,
        ) {
            let g = Vect::new(gx, gy, gz);
            prop_assume!(g.norm() > 1e-3 && g.normalize().cross(&Vect::y()).norm() > 1e-3);
            let angles = FiberAngles::default();
            let f = fiber_frame(&g, &Vect::y(), angles.theta(psi)).unwrap();
            prop_assert!((f.f0.norm() - 1.0).abs() < 1e-10);
            prop_assert!((f.s0.norm() - 1.0).abs() < 1e-10);
            prop_assert!(f.f0.dot(&f.s0).abs() < 1e-6);
            let back = recovered_angle(&f, &Vect::y()).unwrap();
            prop_assert!((back - angles.theta(psi)).abs().to_degrees() < 0.5);
        }
    }
}
