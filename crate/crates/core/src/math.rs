//! Small dense linear algebra and the Wendland smoothing kernel.
//!
//! Every vector and matrix is stored as a 3-component / 3x3 nalgebra value
//! regardless of the spatial dimension of the problem. In 1D and 2D the unused
//! components are zero for vectors, and matrices that must be invertible
//! (moment matrices, conductivity tensors) carry the identity in the unused
//! diagonal slots. [`pad_unused`] applies that convention.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::MathError;

pub type Vect = Vector3<f64>;
pub type Mat = Matrix3<f64>;

/// Ratio of smoothing length to particle spacing used by every scene.
pub const H_OVER_DP: f64 = 1.3;

/// Writes the identity into the diagonal slots beyond `dim` and zeroes the
/// corresponding off-diagonal entries.
pub fn pad_unused(mut m: Mat, dim: usize) -> Mat {
    for a in dim..3 {
        for b in 0..3 {
            m[(a, b)] = 0.0;
            m[(b, a)] = 0.0;
        }
        m[(a, a)] = 1.0;
    }
    m
}

/// Zeroes vector components beyond `dim`.
pub fn truncate(mut v: Vect, dim: usize) -> Vect {
    for a in dim..3 {
        v[a] = 0.0;
    }
    v
}

/// Quintic Wendland (C2) kernel with compact support `2h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingKernel {
    h: f64,
    dim: usize,
    dp: f64,
    sigma: f64,
}

impl SmoothingKernel {
    /// Kernel for particle spacing `dp` with the standard `h = 1.3 dp`.
    pub fn new(dim: usize, dp: f64) -> Self {
        Self::with_smoothing_length(dim, dp, H_OVER_DP * dp)
    }

    pub fn with_smoothing_length(dim: usize, dp: f64, h: f64) -> Self {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
        assert!(h > 0.0 && dp > 0.0, "smoothing length and spacing must be positive");
        let sigma = match dim {
            1 => 3.0 / (4.0 * h),
            2 => 7.0 / (4.0 * PI * h * h),
            _ => 21.0 / (16.0 * PI * h * h * h),
        };
        Self { h, dim, dp, sigma }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dp(&self) -> f64 {
        self.dp
    }

    pub fn cutoff(&self) -> f64 {
        2.0 * self.h
    }

    /// Normalization constant, equal to `W(0)`.
    pub fn normalization(&self) -> f64 {
        self.sigma
    }

    /// `W(r)`.
    pub fn value(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "kernel evaluated at negative distance {r}");
        let q = r / self.h;
        if q >= 2.0 {
            return 0.0;
        }
        let t = 1.0 - 0.5 * q;
        let t2 = t * t;
        self.sigma * t2 * t2 * (2.0 * q + 1.0)
    }

    /// `dW/dr`, non-positive on the whole support.
    pub fn gradient(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "kernel gradient evaluated at negative distance {r}");
        let q = r / self.h;
        if q >= 2.0 {
            return 0.0;
        }
        let t = 1.0 - 0.5 * q;
        -5.0 * self.sigma * q * t * t * t / self.h
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix restricted
/// to the leading `dim x dim` block; the remaining block is the identity.
pub fn cholesky_lower(d: &Mat, dim: usize) -> Result<Mat, MathError> {
    let d = pad_unused(*d, dim);
    let scale = d.diagonal().abs().max().max(f64::MIN_POSITIVE);
    for a in 0..3 {
        for b in 0..a {
            if (d[(a, b)] - d[(b, a)]).abs() > 1e-12 * scale {
                return Err(MathError::NotSymmetric { row: a, col: b });
            }
        }
    }
    let mut l = Mat::zeros();
    for j in 0..3 {
        let mut pivot = d[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(MathError::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..3 {
            let mut s = d[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn invert_lower_triangular(l: &Mat) -> Result<Mat, MathError> {
    for a in 0..3 {
        if l[(a, a)] == 0.0 || !l[(a, a)].is_finite() {
            return Err(MathError::Singular { index: a });
        }
    }
    let mut inv = Mat::zeros();
    for col in 0..3 {
        for row in col..3 {
            let mut s = if row == col { 1.0 } else { 0.0 };
            for k in col..row {
                s -= l[(row, k)] * inv[(k, col)];
            }
            inv[(row, col)] = s / l[(row, row)];
        }
    }
    Ok(inv)
}

/// Inverse of a general 3x3 matrix, or an error naming the failure.
pub fn invert(m: &Mat) -> Result<Mat, MathError> {
    m.try_inverse().ok_or(MathError::Singular { index: 0 })
}

/// Von Mises equivalent stress of a symmetric Cauchy stress.
pub fn von_mises(sigma: &Mat) -> f64 {
    let s = sigma;
    let d01 = s[(0, 0)] - s[(1, 1)];
    let d12 = s[(1, 1)] - s[(2, 2)];
    let d20 = s[(2, 2)] - s[(0, 0)];
    let shear = s[(0, 1)] * s[(0, 1)] + s[(1, 2)] * s[(1, 2)] + s[(0, 2)] * s[(0, 2)];
    (0.5 * (d01 * d01 + d12 * d12 + d20 * d20) + 3.0 * shear).max(0.0).sqrt()
}

/// Outer product `a ⊗ b = a bᵀ`.
#[inline]
pub fn outer(a: &Vect, b: &Vect) -> Mat {
    a * b.transpose()
}
