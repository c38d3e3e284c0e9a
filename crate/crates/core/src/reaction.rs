//! Two-variable ionic models, the quasi-steady-state integrator and the
//! active-stress evolution law.
//!
//! Each reaction equation is written as `dy/dt = q - p*y` with `q` and `p`
//! frozen at the start of a sub-step, which the exponential update
//! [`qss_step`] then integrates exactly.

use serde::{Deserialize, Serialize};

use crate::error::ReactionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlievPanfilovParams {
    pub k: f64,
    pub a: f64,
    pub b: f64,
    pub eps0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl AlievPanfilovParams {
    /// Parameter set used for planar pulse propagation.
    pub const PULSE: Self = Self { k: 8.0, a: 0.15, b: 0.15, eps0: 0.002, mu1: 0.2, mu2: 0.3 };
    /// Lower excitation threshold used for the biventricle scenes.
    pub const LOW_THRESHOLD: Self = Self { k: 8.0, a: 0.01, b: 0.15, eps0: 0.002, mu1: 0.2, mu2: 0.3 };

    /// Recovery rate `eps0 + mu1*w/(mu2 + V)`.
    pub fn recovery_rate(&self, v: f64, w: f64) -> Result<f64, ReactionError> {
        let denom = self.mu2 + v;
        if denom == 0.0 {
            return Err(ReactionError::RecoveryPole { v });
        }
        Ok(self.eps0 + self.mu1 * w / denom)
    }
}

impl Default for AlievPanfilovParams {
    fn default() -> Self {
        Self::PULSE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitzHughNagumoParams {
    pub a: f64,
    pub eps0: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl FitzHughNagumoParams {
    pub const SPIRAL: Self = Self { a: 0.1, eps0: 0.01, beta: 0.5, gamma: 1.0, sigma: 0.0 };
}

impl Default for FitzHughNagumoParams {
    fn default() -> Self {
        Self::SPIRAL
    }
}

/// Transmembrane potential and gating variable of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElectroState {
    pub v: f64,
    pub w: f64,
}

impl ElectroState {
    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }
}

pub fn ap_rates(s: ElectroState, c_m: f64, p: &AlievPanfilovParams) -> Result<(f64, f64), ReactionError> {
    let ElectroState { v, w } = s;
    let eps = p.recovery_rate(v, w)?;
    let dv = (-p.k * v * (v - p.a) * (v - 1.0) - w * v) / c_m;
    let dw = eps * (-p.k * v * (v - p.b - 1.0) - w);
    Ok((dv, dw))
}

pub fn fhn_rates(s: ElectroState, c_m: f64, p: &FitzHughNagumoParams) -> (f64, f64) {
    let ElectroState { v, w } = s;
    let dv = (-v * (v - p.a) * (v - 1.0) - w) / c_m;
    let dw = p.eps0 * (p.beta * v - p.gamma * w - p.sigma);
    (dv, dw)
}

/// Exponential update of `dy/dt = q - p*y` over `dt` with frozen `q`, `p`.
pub fn qss_step(y: f64, q: f64, p: f64, dt: f64) -> f64 {
    let x = p * dt;
    if x.abs() < 1e-8 {
        return y + (q - p * y) * dt;
    }
    let decay = (-x).exp();
    y * decay + q / p * (1.0 - decay)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IonicModel {
    AlievPanfilov(AlievPanfilovParams),
    FitzHughNagumo(FitzHughNagumoParams),
}

/// Order of the two sub-reactions inside a half step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOrder {
    /// Potential first, then gating variable.
    Forward,
    /// Gating variable first, then potential.
    Backward,
}

impl IonicModel {
    pub fn rates(&self, s: ElectroState, c_m: f64) -> Result<(f64, f64), ReactionError> {
        match self {
            IonicModel::AlievPanfilov(p) => ap_rates(s, c_m, p),
            IonicModel::FitzHughNagumo(p) => Ok(fhn_rates(s, c_m, p)),
        }
    }

    /// Production and loss rates of the potential equation.
    pub fn potential_terms(&self, s: ElectroState, c_m: f64) -> (f64, f64) {
        let ElectroState { v, w } = s;
        let (q, p) = match self {
            IonicModel::AlievPanfilov(m) => (m.k * (1.0 + m.a) * v * v, m.k * v * v + m.k * m.a + w),
            IonicModel::FitzHughNagumo(m) => ((1.0 + m.a) * v * v - w, v * v + m.a),
        };
        (q / c_m, p / c_m)
    }

    /// Production and loss rates of the gating equation.
    pub fn gating_terms(&self, s: ElectroState) -> Result<(f64, f64), ReactionError> {
        let ElectroState { v, w } = s;
        match self {
            IonicModel::AlievPanfilov(m) => {
                let eps = m.recovery_rate(v, w)?;
                Ok((eps * m.k * v * (m.b + 1.0 - v), eps))
            }
            IonicModel::FitzHughNagumo(m) => Ok((m.eps0 * (m.beta * v - m.sigma), m.eps0 * m.gamma)),
        }
    }

    fn potential_step(&self, s: ElectroState, c_m: f64, dt: f64) -> ElectroState {
        let (q, p) = self.potential_terms(s, c_m);
        ElectroState { v: qss_step(s.v, q, p, dt), w: s.w }
    }

    fn gating_step(&self, s: ElectroState, dt: f64) -> Result<ElectroState, ReactionError> {
        let (q, p) = self.gating_terms(s)?;
        Ok(ElectroState { v: s.v, w: qss_step(s.w, q, p, dt) })
    }

    /// Integrates both reactions over `dt / 2`, each by one QSS sub-step.
    pub fn half_step(&self, s: ElectroState, c_m: f64, dt: f64, order: SplitOrder) -> Result<ElectroState, ReactionError> {
        if dt == 0.0 {
            return Ok(s);
        }
        let half = 0.5 * dt;
        match order {
            SplitOrder::Forward => self.gating_step(self.potential_step(s, c_m, half), half),
            SplitOrder::Backward => Ok(self.potential_step(self.gating_step(s, half)?, c_m, half)),
        }
    }

    /// One full reaction step: forward half step followed by backward half step.
    pub fn full_step(&self, s: ElectroState, c_m: f64, dt: f64) -> Result<ElectroState, ReactionError> {
        let s = self.half_step(s, c_m, dt, SplitOrder::Forward)?;
        self.half_step(s, c_m, dt, SplitOrder::Backward)
    }
}

pub fn reaction_half_step(
    s: ElectroState,
    dt: f64,
    model: &IonicModel,
    c_m: f64,
    order: SplitOrder,
) -> Result<ElectroState, ReactionError> {
    model.half_step(s, c_m, dt, order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveStressParams {
    pub k_a: f64,
    pub v_r: f64,
    pub eps0: f64,
    pub eps_inf: f64,
    pub eps_minus_inf: f64,
    pub xi: f64,
    pub v_bar: f64,
}

impl Default for ActiveStressParams {
    fn default() -> Self {
        Self { k_a: 1.0, v_r: 0.0, eps0: 0.1, eps_inf: 1.0, eps_minus_inf: 0.1, xi: 1.0, v_bar: 0.0 }
    }
}

impl ActiveStressParams {
    /// Activation-dependent rate of the active-stress law.
    pub fn rate(&self, v: f64) -> f64 {
        self.eps0 + (self.eps_inf - self.eps_minus_inf) * (-(-self.xi * (v - self.v_bar)).exp()).exp()
    }
}

/// Exact update of `dT/dt = eps(V) (k_a (V - V_r) - T)` with `V` frozen.
pub fn active_stress_step(t_a: f64, v: f64, dt: f64, p: &ActiveStressParams) -> f64 {
    let eps = p.rate(v);
    qss_step(t_a, eps * p.k_a * (v - p.v_r), eps, dt)
}

/// Dimensional potential in mV and time in ms.
pub fn to_physical(v: f64, t: f64) -> (f64, f64) {
    (100.0 * v - 80.0, 12.9 * t)
}
