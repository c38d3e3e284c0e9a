//! Analytic reference solutions of the diffusion benchmarks and error norms.

use std::f64::consts::PI;

/// Smoothed band: `C0/2 erfc((z1 - z)/sqrt(4dt))` below the band center,
/// `C0/2 erfc((z - z2)/sqrt(4dt))` above it.
pub fn oracle_band_diffusion(z: f64, t: f64, c0: f64, d: f64, z0: f64, z1: f64, z2: f64) -> f64 {
    let s = (4.0 * d * t).sqrt();
    if z <= z0 {
        0.5 * c0 * libm::erfc((z1 - z) / s)
    } else {
        0.5 * c0 * libm::erfc((z - z2) / s)
    }
}

/// Spreading Gaussian `C0/sqrt(t + t0) exp(-(z - z0)²/(4d(t + t0)))`.
pub fn oracle_exp_diffusion(z: f64, t: f64, c0: f64, d: f64, z0: f64, t0: f64) -> f64 {
    let tt = t + t0;
    c0 / tt.sqrt() * (-(z - z0).powi(2) / (4.0 * d * tt)).exp()
}

/// Fundamental solution of anisotropic diffusion with diagonal tensor.
pub fn oracle_aniso_gaussian(x: f64, y: f64, t: f64, dxx: f64, dyy: f64, x0: f64, y0: f64) -> f64 {
    1.0 / (4.0 * PI * t * (dxx * dyy).sqrt())
        * (-(x - x0).powi(2) / (4.0 * t * dxx)).exp()
        * (-(y - y0).powi(2) / (4.0 * t * dyy)).exp()
}

/// Volume-weighted L2 and pointwise maximum error.
pub fn error_norms(numerical: &[f64], oracle: &[f64], volumes: &[f64]) -> (f64, f64) {
    assert_eq!(numerical.len(), oracle.len());
    assert_eq!(numerical.len(), volumes.len());
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for ((a, b), v) in numerical.iter().zip(oracle).zip(volumes) {
        let e = a - b;
        l2 += v * e * e;
        linf = linf.max(e.abs());
    }
    (l2.sqrt(), linf)
}
