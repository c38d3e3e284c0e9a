//! Total-Lagrangian SPH solid dynamics.
//!
//! All gradients are taken in the reference configuration with the fixed
//! neighbor lists and correction matrices of [`crate::particles`]. In 1D and
//! 2D the deformation gradient carries `1` in the unused diagonal slots
//! (plane strain).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolidError;
use crate::math::{invert, outer, truncate, Mat, Vect};
use crate::particles::{NeighborList, ParticleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeoHookeanParams {
    pub lambda: f64,
    pub mu: f64,
}

impl NeoHookeanParams {
    /// Lamé parameters from Young's modulus and Poisson ratio.
    pub fn from_young(young: f64, poisson: f64) -> Self {
        let mu = young / (2.0 * (1.0 + poisson));
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        Self { lambda, mu }
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.lambda + 2.0 * self.mu / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolzapfelOgdenParams {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub a_f: f64,
    #[serde(default)]
    pub b_f: f64,
    #[serde(default)]
    pub a_s: f64,
    #[serde(default)]
    pub b_s: f64,
    #[serde(default)]
    pub a_fs: f64,
    #[serde(default)]
    pub b_fs: f64,
    pub lambda_bulk: f64,
}

impl HolzapfelOgdenParams {
    /// Isotropic part only.
    pub fn isotropic(a: f64, b: f64, lambda_bulk: f64) -> Self {
        Self { a, b, a_f: 0.0, b_f: 0.0, a_s: 0.0, b_s: 0.0, a_fs: 0.0, b_fs: 0.0, lambda_bulk }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    NeoHookean(NeoHookeanParams),
    HolzapfelOgden(HolzapfelOgdenParams),
}

/// Local fiber and sheet directions in the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberFrame {
    pub f0: Vect,
    pub s0: Vect,
}

impl Default for FiberFrame {
    fn default() -> Self {
        Self { f0: Vect::x(), s0: Vect::y() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invariants {
    pub i1: f64,
    pub i_ff: f64,
    pub i_ss: f64,
    pub i_fs: f64,
    pub j: f64,
}

fn checked_det(f: &Mat, particle: usize) -> Result<f64, SolidError> {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det)
    } else {
        Err(SolidError::Inverted { particle, det })
    }
}

pub fn invariants(f: &Mat, frame: &FiberFrame) -> Result<Invariants, SolidError> {
    let j = checked_det(f, 0)?;
    let c = f.transpose() * f;
    Ok(Invariants {
        i1: c.trace(),
        i_ff: frame.f0.dot(&(c * frame.f0)),
        i_ss: frame.s0.dot(&(c * frame.s0)),
        i_fs: frame.f0.dot(&(c * frame.s0)),
        j,
    })
}

pub fn neo_hookean_pk2(f: &Mat, p: &NeoHookeanParams) -> Result<Mat, SolidError> {
    let j = checked_det(f, 0)?;
    let c_inv = invert(&(f.transpose() * f)).map_err(|_| SolidError::Inverted { particle: 0, det: j })?;
    Ok(Mat::identity() * p.mu + c_inv * (p.lambda * j.ln() - p.mu))
}

pub fn holzapfel_ogden_pk2(f: &Mat, frame: &FiberFrame, p: &HolzapfelOgdenParams) -> Result<Mat, SolidError> {
    let inv = invariants(f, frame)?;
    let c_inv = invert(&(f.transpose() * f)).map_err(|_| SolidError::Inverted { particle: 0, det: inv.j })?;
    let (fo, so) = (&frame.f0, &frame.s0);
    let mut s = Mat::identity() * (p.a * (p.b * (inv.i1 - 3.0)).exp()) + c_inv * (p.lambda_bulk * inv.j.ln() - p.a);
    let eff = inv.i_ff - 1.0;
    s += outer(fo, fo) * (2.0 * p.a_f * eff * (p.b_f * eff * eff).exp());
    let ess = inv.i_ss - 1.0;
    s += outer(so, so) * (2.0 * p.a_s * ess * (p.b_s * ess * ess).exp());
    s += (outer(fo, so) + outer(so, fo)) * (p.a_fs * inv.i_fs * (p.b_fs * inv.i_fs * inv.i_fs).exp());
    Ok(s)
}

/// `a / (2b) (exp(b x) - 1)` with its `b -> 0` limit.
fn exp_energy(a: f64, b: f64, x: f64) -> f64 {
    if b == 0.0 {
        0.5 * a * x
    } else {
        a / (2.0 * b) * (b * x).exp_m1()
    }
}

impl Material {
    pub fn pk2(&self, f: &Mat, frame: &FiberFrame) -> Result<Mat, SolidError> {
        match self {
            Material::NeoHookean(p) => neo_hookean_pk2(f, p),
            Material::HolzapfelOgden(p) => holzapfel_ogden_pk2(f, frame, p),
        }
    }

    /// Strain energy per unit reference volume as a function of `C = FᵀF`.
    pub fn energy(&self, c: &Mat, frame: &FiberFrame) -> f64 {
        let ln_j = 0.5 * c.determinant().ln();
        let (fo, so) = (&frame.f0, &frame.s0);
        match self {
            Material::NeoHookean(p) => 0.5 * p.mu * (c.trace() - 3.0) - p.mu * ln_j + 0.5 * p.lambda * ln_j * ln_j,
            Material::HolzapfelOgden(p) => {
                let i_ff = fo.dot(&(c * fo));
                let i_ss = so.dot(&(c * so));
                let i_fs = fo.dot(&(c * so));
                exp_energy(p.a, p.b, c.trace() - 3.0) - p.a * ln_j
                    + 0.5 * p.lambda_bulk * ln_j * ln_j
                    + exp_energy(p.a_f, p.b_f, (i_ff - 1.0).powi(2))
                    + exp_energy(p.a_s, p.b_s, (i_ss - 1.0).powi(2))
                    + exp_energy(p.a_fs, p.b_fs, i_fs * i_fs)
            }
        }
    }

    /// Shear modulus used in the sound-speed estimate.
    pub fn effective_shear(&self) -> f64 {
        match self {
            Material::NeoHookean(p) => p.mu,
            Material::HolzapfelOgden(p) => p.a + 2.0 * p.a_f.max(p.a_s),
        }
    }

    pub fn bulk_lambda(&self) -> f64 {
        match self {
            Material::NeoHookean(p) => p.lambda,
            Material::HolzapfelOgden(p) => p.lambda_bulk,
        }
    }

    /// `sqrt((lambda + 2 mu_eff) / rho0)`.
    pub fn sound_speed(&self, rho0: f64) -> f64 {
        ((self.bulk_lambda() + 2.0 * self.effective_shear()) / rho0).sqrt()
    }
}

/// Active first Piola-Kirchhoff stress `T_a F f0⊗f0`.
pub fn active_pk1(t_a: f64, f: &Mat, f0: &Vect) -> Mat {
    f * outer(f0, f0) * t_a
}

/// Cauchy stress `J^{-1} P Fᵀ`.
pub fn cauchy_stress(p: &Mat, f: &Mat) -> Mat {
    p * f.transpose() / f.determinant()
}

/// `[sum_j V_j (x_j - x_i) ⊗ grad_i W_ij] B0_i` for a vector field `x`.
pub fn reference_gradient(set: &ParticleSet, nl: &NeighborList, b0: &[Mat], field: &[Vect]) -> Vec<Mat> {
    let vol = set.volumes();
    let dim = set.dim();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut g = Mat::zeros();
            for nb in nl.of(i) {
                g += outer(&(field[nb.j] - field[i]), &nb.grad()) * vol[nb.j];
            }
            let mut g = g * b0[i];
            for a in dim..3 {
                for b in 0..3 {
                    g[(a, b)] = 0.0;
                    g[(b, a)] = 0.0;
                }
            }
            g
        })
        .collect()
}

/// Deformation gradient from a displacement field.
pub fn compute_deformation_gradient(set: &ParticleSet, nl: &NeighborList, b0: &[Mat], u: &[Vect]) -> Vec<Mat> {
    reference_gradient(set, nl, b0, u).into_iter().map(|g| g + Mat::identity()).collect()
}

/// `dv_i/dt = (2/m_i) sum_j V_i V_j ½(P_i B0_i + P_j B0_j) grad_i W_ij`.
pub fn momentum_rate(set: &ParticleSet, nl: &NeighborList, b0: &[Mat], p: &[Mat]) -> Vec<Vect> {
    let vol = set.volumes();
    let mass = set.masses();
    let dim = set.dim();
    let pb: Vec<Mat> = p.par_iter().zip(b0.par_iter()).map(|(p, b)| p * b).collect();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = Vect::zeros();
            for nb in nl.of(i) {
                acc += (pb[i] + pb[nb.j]) * nb.grad() * vol[nb.j];
            }
            truncate(acc * (vol[i] / mass[i]), dim)
        })
        .collect()
}

/// Mechanical stability limit `0.6 min(h / (c + |v|max), sqrt(h / |a|max))`.
pub fn timestep_mechanics(h: f64, sound_speed: f64, v_max: f64, a_max: f64) -> f64 {
    let acoustic = h / (sound_speed + v_max);
    let force = if a_max > 0.0 { (h / a_max).sqrt() } else { f64::INFINITY };
    0.6 * acoustic.min(force)
}

/// Evolving mechanical state.
#[derive(Debug, Clone)]
pub struct MechState {
    pub position: Vec<Vect>,
    pub velocity: Vec<Vect>,
    pub deformation: Vec<Mat>,
    pub density: Vec<f64>,
    /// Accelerations of the most recent velocity kick, before constraints.
    pub acceleration: Vec<Vect>,
}

impl MechState {
    pub fn at_rest(set: &ParticleSet) -> Self {
        let n = set.len();
        Self {
            position: set.positions().to_vec(),
            velocity: vec![Vect::zeros(); n],
            deformation: vec![Mat::identity(); n],
            density: set.densities().to_vec(),
            acceleration: vec![Vect::zeros(); n],
        }
    }

    pub fn displacement(&self, set: &ParticleSet, i: usize) -> Vect {
        self.position[i] - set.positions()[i]
    }

    pub fn max_speed(&self) -> f64 {
        self.velocity.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_acceleration(&self) -> f64 {
        self.acceleration.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

/// Holds particles of `mask` at zero velocity and their reference position.
pub fn apply_constraints(set: &ParticleSet, state: &mut MechState, mask: &[bool]) {
    for (i, &fixed) in mask.iter().enumerate() {
        if fixed {
            state.velocity[i] = Vect::zeros();
            state.position[i] = set.positions()[i];
        }
    }
}

/// A solid body: particles, material, fiber frames and constraints.
#[derive(Debug, Clone)]
pub struct SolidBody {
    pub set: ParticleSet,
    pub nl: NeighborList,
    pub b0: Vec<Mat>,
    pub material: Material,
    pub frames: Vec<FiberFrame>,
    pub constrained: Vec<bool>,
    /// Linear velocity damping rate, applied semi-implicitly in the kick.
    pub damping: f64,
    pub h: f64,
}

impl SolidBody {
    /// Total first Piola-Kirchhoff stress, passive plus optional active part.
    pub fn stress(&self, deformation: &[Mat], active: Option<&[f64]>) -> Result<Vec<Mat>, SolidError> {
        (0..self.set.len())
            .into_par_iter()
            .map(|i| {
                let f = &deformation[i];
                let s = self
                    .material
                    .pk2(f, &self.frames[i])
                    .map_err(|e| match e {
                        SolidError::Inverted { det, .. } => SolidError::Inverted { particle: i, det },
                    })?;
                let mut p = f * s;
                if let Some(t) = active {
                    p += active_pk1(t[i], f, &self.frames[i].f0);
                }
                Ok(p)
            })
            .collect()
    }

    pub fn accelerations(&self, deformation: &[Mat], active: Option<&[f64]>) -> Result<Vec<Vect>, SolidError> {
        let p = self.stress(deformation, active)?;
        Ok(momentum_rate(&self.set, &self.nl, &self.b0, &p))
    }

    fn half_update(&self, state: &mut MechState, dt: f64) {
        let rate = reference_gradient(&self.set, &self.nl, &self.b0, &state.velocity);
        let rho0 = self.set.densities();
        let half = 0.5 * dt;
        state
            .deformation
            .par_iter_mut()
            .zip(state.position.par_iter_mut())
            .zip(state.density.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((f, r), rho))| {
                *f += rate[i] * half;
                *r += state.velocity[i] * half;
                *rho = rho0[i] / f.determinant();
            });
    }

    /// One position-based Verlet step.
    pub fn step(&self, state: &mut MechState, dt: f64, active: Option<&[f64]>) -> Result<(), SolidError> {
        self.half_update(state, dt);
        let acc = self.accelerations(&state.deformation, active)?;
        let damp = 1.0 / (1.0 + self.damping * dt);
        state.velocity.par_iter_mut().zip(acc.par_iter()).for_each(|(v, a)| {
            *v = (*v + a * dt) * damp;
        });
        state.acceleration = acc;
        apply_constraints(&self.set, state, &self.constrained);
        self.half_update(state, dt);
        apply_constraints(&self.set, state, &self.constrained);
        Ok(())
    }

    pub fn stable_timestep(&self, state: &MechState) -> f64 {
        let rho0 = self.set.densities().iter().copied().fold(f64::INFINITY, f64::min);
        timestep_mechanics(self.h, self.material.sound_speed(rho0), state.max_speed(), state.max_acceleration())
    }

    pub fn kinetic_energy(&self, state: &MechState) -> f64 {
        state.velocity.iter().zip(self.set.masses()).map(|(v, m)| 0.5 * m * v.norm_squared()).sum()
    }

    pub fn strain_energy(&self, state: &MechState) -> f64 {
        state
            .deformation
            .iter()
            .zip(self.set.volumes())
            .zip(&self.frames)
            .map(|((f, v), frame)| v * self.material.energy(&(f.transpose() * f), frame))
            .sum()
    }

    /// Von Mises stress of the Cauchy stress of every particle.
    pub fn von_mises(&self, state: &MechState, active: Option<&[f64]>) -> Result<Vec<f64>, SolidError> {
        let p = self.stress(&state.deformation, active)?;
        Ok(p.iter()
            .zip(&state.deformation)
            .map(|(p, f)| crate::math::von_mises(&cauchy_stress(p, f)))
            .collect())
    }
}
