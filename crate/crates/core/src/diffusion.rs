//! Anisotropic SPH diffusion operator.
//!
//! The rate of particle `i` is
//!
//! ```text
//! dphi_i/dt = (2 / C_m) sum_j V_j (phi_i - phi_j) c_ij kappa_ij W'(r_ij) / r_ij
//! ```
//!
//! where `kappa_ij` is the directional conductivity of the pair and `c_ij` an
//! optional correction factor. Both are symmetric in `i` and `j`, so pairwise
//! fluxes cancel exactly and the volume-weighted total is conserved.
//!
//! Three corrections are available:
//!
//! * none (`c_ij = 1`);
//! * kernel: `c_ij = e·B̄e` with `B̄` the mean of the two kernel correction
//!   matrices;
//! * Laplacian: each particle carries a symmetric matrix `C_i` chosen so that
//!   the second moment `sum_j V_j (-r W') kappa_ij (e·C_i e) e⊗e` equals its own
//!   conductivity tensor `D_i`, and `c_ij = e·(C_i + C_j)/2 e`. On a regular
//!   neighborhood this makes the discrete operator exact for quadratic fields
//!   with any anisotropy; for an isotropic tensor `C_i` reduces to the kernel
//!   correction matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConductivityError;
use crate::math::{cholesky_lower, invert, invert_lower_triangular, outer, pad_unused, Mat, SmoothingKernel, Vect};
use crate::particles::{compute_correction_matrices, NeighborList, ParticleSet};
use crate::error::ParticleError;

/// `D = d_iso I + d_ani f0⊗f0` restricted to the active dimensions.
pub fn assemble_conductivity(d_iso: f64, d_ani: f64, f0: &Vect, dim: usize) -> Result<Mat, ConductivityError> {
    let mut d = Mat::identity() * d_iso;
    if d_ani != 0.0 {
        let f = crate::math::truncate(*f0, dim);
        let norm = f.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ConductivityError::NonUnitFiber { norm });
        }
        d += outer(&f, &f) * d_ani;
    }
    Ok(pad_unused(d, dim))
}

/// Inverse lower Cholesky factors `L̃_i = L_i^{-1}` with `D_i = L_i L_iᵀ`.
pub fn precompute_factors(d: &[Mat], dim: usize) -> Result<Vec<Mat>, ConductivityError> {
    d.iter()
        .enumerate()
        .map(|(i, di)| {
            let l = cholesky_lower(di, dim).map_err(|source| ConductivityError::Decomposition { particle: i, source })?;
            invert_lower_triangular(&l).map_err(|source| ConductivityError::Decomposition { particle: i, source })
        })
        .collect()
}

/// `1 / |M e|²` with `M` the mean of the two inverse factors.
#[inline]
pub fn pairwise_directional_conductivity(li: &Mat, lj: &Mat, e: &Vect) -> f64 {
    let me = (li + lj) * e * 0.5;
    1.0 / me.norm_squared()
}

/// Directional conductivity from the Cholesky factor of the harmonic mean
/// `2 (D_i^{-1} + D_j^{-1})^{-1}`, decomposed for every pair.
pub fn pairwise_cholesky_conductivity(di: &Mat, dj: &Mat, e: &Vect, dim: usize) -> Result<f64, ConductivityError> {
    let inv = |m: &Mat| invert(&pad_unused(*m, dim)).map_err(|source| ConductivityError::Decomposition { particle: 0, source });
    let mean = invert(&((inv(di)? + inv(dj)?) * 0.5)).map_err(|source| ConductivityError::Decomposition { particle: 0, source })?;
    let sym = (mean + mean.transpose()) * 0.5;
    let l = cholesky_lower(&sym, dim).map_err(|source| ConductivityError::Decomposition { particle: 0, source })?;
    let lt = invert_lower_triangular(&l).map_err(|source| ConductivityError::Decomposition { particle: 0, source })?;
    Ok(1.0 / (lt * e).norm_squared())
}

/// Explicit stability limit `0.5 h² / (dim · max tr D)`.
pub fn diffusion_timestep(h: f64, dim: usize, max_trace: f64) -> f64 {
    0.5 * h * h / (dim as f64 * max_trace)
}

/// Per-particle conductivity tensors and their inverse Cholesky factors.
#[derive(Debug, Clone)]
pub struct ConductivityModel {
    dim: usize,
    d: Vec<Mat>,
    ltilde: Vec<Mat>,
    c_m: f64,
}

impl ConductivityModel {
    pub fn new(dim: usize, d: Vec<Mat>, c_m: f64) -> Result<Self, ConductivityError> {
        let d: Vec<Mat> = d.into_iter().map(|m| pad_unused(m, dim)).collect();
        let ltilde = precompute_factors(&d, dim)?;
        Ok(Self { dim, d, ltilde, c_m })
    }

    pub fn homogeneous(dim: usize, count: usize, d: Mat, c_m: f64) -> Result<Self, ConductivityError> {
        Self::new(dim, vec![d; count], c_m)
    }

    /// Tensors `d_iso I + d_ani f⊗f` for a per-particle fiber field.
    pub fn from_fibers(dim: usize, d_iso: f64, d_ani: f64, fibers: &[Vect], c_m: f64) -> Result<Self, ConductivityError> {
        let d = fibers
            .iter()
            .map(|f| assemble_conductivity(d_iso, d_ani, f, dim))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dim, d, c_m)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tensor(&self, i: usize) -> &Mat {
        &self.d[i]
    }

    pub fn factor(&self, i: usize) -> &Mat {
        &self.ltilde[i]
    }

    pub fn capacitance(&self) -> f64 {
        self.c_m
    }

    /// Largest trace of the active block over all particles.
    pub fn max_trace(&self) -> f64 {
        self.d
            .iter()
            .map(|m| (0..self.dim).map(|a| m[(a, a)]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConductivity {
    /// One decomposition per particle, mean of inverse factors per pair.
    #[default]
    MeanInverseFactor,
    /// One decomposition per pair of the harmonic-mean tensor.
    PairwiseCholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    None,
    Kernel,
    #[default]
    Laplacian,
}

fn pair_kappa(
    model: &ConductivityModel,
    pair: PairConductivity,
    i: usize,
    j: usize,
    e: &Vect,
) -> Result<f64, ConductivityError> {
    match pair {
        PairConductivity::MeanInverseFactor => Ok(pairwise_directional_conductivity(model.factor(i), model.factor(j), e)),
        PairConductivity::PairwiseCholesky => pairwise_cholesky_conductivity(model.tensor(i), model.tensor(j), e, model.dim())
            .map_err(|err| match err {
                ConductivityError::Decomposition { source, .. } => ConductivityError::Decomposition { particle: i, source },
                other => other,
            }),
    }
}

/// Number of independent entries of a symmetric `dim x dim` matrix.
fn sym_size(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Index pairs of the independent entries of a symmetric matrix.
fn sym_index(dim: usize) -> Vec<(usize, usize)> {
    let mut idx: Vec<(usize, usize)> = (0..dim).map(|a| (a, a)).collect();
    for a in 0..dim {
        for b in (a + 1)..dim {
            idx.push((a, b));
        }
    }
    idx
}

/// Solves `sum_k w_k (e_k·C e_k) e_k⊗e_k = D` for a symmetric `C`.
///
/// Returns `None` when the fourth-moment system is singular or the result is
/// not positive definite.
fn solve_laplacian_correction(dim: usize, samples: &[(f64, Vect)], d: &Mat) -> Option<Mat> {
    let idx = sym_index(dim);
    let m = sym_size(dim);
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (w, e) in samples {
        for (row, &(p, q)) in idx.iter().enumerate() {
            let er = e[p] * e[q];
            for (col, &(s, t)) in idx.iter().enumerate() {
                let basis = if s == t { e[s] * e[s] } else { 2.0 * e[s] * e[t] };
                a[(row, col)] += w * er * basis;
            }
        }
    }
    let rhs = DVector::from_iterator(m, idx.iter().map(|&(p, q)| d[(p, q)]));
    let x = a.lu().solve(&rhs)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut c = Mat::zeros();
    for (k, &(p, q)) in idx.iter().enumerate() {
        c[(p, q)] = x[k];
        c[(q, p)] = x[k];
    }
    let c = pad_unused(c, dim);
    let eig = c.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Reject indefinite or badly conditioned solutions.
    if lo <= 0.0 || hi / lo > 25.0 {
        return None;
    }
    Some(c)
}

/// Offsets of a full lattice neighborhood of spacing `dp` inside the support.
fn lattice_neighborhood(kernel: &SmoothingKernel) -> Vec<(f64, Vect)> {
    let dim = kernel.dim();
    let dp = kernel.dp();
    let reach = (kernel.cutoff() / dp).ceil() as i64;
    let range = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
    let mut out = Vec::new();
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let d = Vect::new(i as f64, j as f64, k as f64) * dp;
                let r = d.norm();
                if r > 0.0 && r < kernel.cutoff() {
                    out.push((r, d / r));
                }
            }
        }
    }
    out
}

/// Scalar `C = s I` matching only the trace of the second moment.
fn trace_matching_correction(dim: usize, samples: &[(f64, Vect)], d: &Mat) -> Mat {
    let moment: f64 = samples.iter().map(|(w, e)| w * crate::math::truncate(*e, dim).norm_squared()).sum();
    let trace: f64 = (0..dim).map(|a| d[(a, a)]).sum();
    let s = if moment > 0.0 { trace / moment } else { 1.0 };
    pad_unused(Mat::identity() * s, dim)
}

/// Per-particle Laplacian correction matrices `C_i`.
///
/// Particles with a nearly full kernel support use their actual neighbors;
/// particles near a free surface use a full regular neighborhood of spacing
/// `dp` with their own tensor. When the fourth-moment system has no
/// well-conditioned positive-definite solution (strong anisotropy oblique to
/// the particle arrangement) the particle falls back to a scalar correction
/// that matches the trace of its tensor.
pub fn laplacian_corrections(
    set: &ParticleSet,
    nl: &NeighborList,
    kernel: &SmoothingKernel,
    model: &ConductivityModel,
    pair: PairConductivity,
) -> Result<Vec<Mat>, ConductivityError> {
    let dim = set.dim();
    let vol = set.volumes();
    let virtual_nb = lattice_neighborhood(kernel);
    let cell = kernel.dp().powi(dim as i32);
    let partition = crate::particles::kernel_sum(set, nl, kernel);
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let target = model.tensor(i);
            let samples: Vec<(f64, Vect)> = if partition[i] > 0.97 {
                nl.of(i)
                    .iter()
                    .map(|nb| Ok((vol[nb.j] * (-nb.r * nb.dw) * pair_kappa(model, pair, i, nb.j, &nb.e)?, nb.e)))
                    .collect::<Result<_, ConductivityError>>()?
            } else {
                virtual_nb
                    .iter()
                    .map(|(r, e)| {
                        let kappa = pairwise_directional_conductivity(model.factor(i), model.factor(i), e);
                        (cell * (-r * kernel.gradient(*r)) * kappa, *e)
                    })
                    .collect()
            };
            Ok(solve_laplacian_correction(dim, &samples, target)
                .unwrap_or_else(|| trace_matching_correction(dim, &samples, target)))
        })
        .collect()
}

#[derive(Debug)]
pub enum OperatorError {
    Conductivity(ConductivityError),
    Particle(ParticleError),
}

impl From<ConductivityError> for OperatorError {
    fn from(e: ConductivityError) -> Self {
        OperatorError::Conductivity(e)
    }
}

impl From<ParticleError> for OperatorError {
    fn from(e: ParticleError) -> Self {
        OperatorError::Particle(e)
    }
}

impl std::fmt::Display for OperatorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorError::Conductivity(e) => e.fmt(f),
            OperatorError::Particle(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for OperatorError {}

/// Diffusion operator with all pair coefficients precomputed, so that one
/// evaluation is a sparse matrix-vector product.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    coef: Vec<f64>,
    max_trace: f64,
    dim: usize,
    h: f64,
}

impl DiffusionOperator {
    pub fn build(
        set: &ParticleSet,
        nl: &NeighborList,
        kernel: &SmoothingKernel,
        model: &ConductivityModel,
        pair: PairConductivity,
        correction: CorrectionKind,
    ) -> Result<Self, OperatorError> {
        if model.len() != set.len() {
            return Err(ConductivityError::LengthMismatch { expected: set.len(), found: model.len() }.into());
        }
        let corr: Option<Vec<Mat>> = match correction {
            CorrectionKind::None => None,
            CorrectionKind::Kernel => Some(compute_correction_matrices(set, nl, kernel)?),
            CorrectionKind::Laplacian => Some(laplacian_corrections(set, nl, kernel, model, pair)?),
        };
        let vol = set.volumes();
        let scale = 2.0 / model.capacitance();
        let rows: Vec<Vec<(usize, f64)>> = (0..set.len())
            .into_par_iter()
            .map(|i| {
                nl.of(i)
                    .iter()
                    .filter(|nb| nb.r > 0.0)
                    .map(|nb| {
                        let kappa = pair_kappa(model, pair, i, nb.j, &nb.e)?;
                        let c = match &corr {
                            None => 1.0,
                            Some(m) => nb.e.dot(&((m[i] + m[nb.j]) * nb.e)) * 0.5,
                        };
                        Ok((nb.j, scale * vol[nb.j] * c * kappa * nb.dw / nb.r))
                    })
                    .collect::<Result<Vec<_>, ConductivityError>>()
            })
            .collect::<Result<_, _>>()?;
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut coef = Vec::new();
        for row in rows {
            for (j, c) in row {
                cols.push(j);
                coef.push(c);
            }
            offsets.push(cols.len());
        }
        Ok(Self { offsets, cols, coef, max_trace: model.max_trace(), dim: set.dim(), h: kernel.h() })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `dphi/dt` into `out`.
    pub fn rate_into(&self, phi: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut s = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                s += self.coef[k] * (phi[i] - phi[self.cols[k]]);
            }
            *o = s;
        });
    }

    pub fn rate(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; phi.len()];
        self.rate_into(phi, &mut out);
        out
    }

    /// Largest stable explicit step `0.5 h² / (dim · max tr D)`.
    pub fn stable_timestep(&self) -> f64 {
        diffusion_timestep(self.h, self.dim, self.max_trace)
    }

    /// Forward Euler step in place; `scratch` must have the field length.
    pub fn advance(&self, phi: &mut [f64], dt: f64, scratch: &mut [f64]) {
        self.rate_into(phi, scratch);
        phi.par_iter_mut().zip(scratch.par_iter()).for_each(|(p, r)| *p += dt * r);
    }
}

/// Direct evaluation of the diffusion rate with the mean-inverse-factor pair
/// conductivity and an optional kernel correction.
pub fn diffusion_rate(
    phi: &[f64],
    set: &ParticleSet,
    nl: &NeighborList,
    model: &ConductivityModel,
    b0: Option<&[Mat]>,
) -> Vec<f64> {
    let vol = set.volumes();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for nb in nl.of(i).iter().filter(|nb| nb.r > 0.0) {
                let kappa = pairwise_directional_conductivity(model.factor(i), model.factor(nb.j), &nb.e);
                let c = b0.map_or(1.0, |b| nb.e.dot(&((b[i] + b[nb.j]) * nb.e)) * 0.5);
                s += vol[nb.j] * (phi[i] - phi[nb.j]) * c * kappa * nb.dw / nb.r;
            }
            2.0 * s / model.capacitance()
        })
        .collect()
}
