//! Scene files.
//!
//! A scene is a TOML document with the sections below. Every section rejects
//! unknown keys.
//!
//! ```toml
//! [scene]            # name, dim, dp, t_end, seed, dt_max
//! [geometry]         # kind = box | ball | stl | biventricle
//! [electrophysiology]
//! model = { kind = "aliev_panfilov", k = 8.0, a = 0.15, b = 0.15, eps0 = 0.002, mu1 = 0.2, mu2 = 0.3 }
//! d_iso = 1.0
//! [[electrophysiology.initial]]
//! field = "v"
//! profile = { kind = "gaussian", center = [1.0, 0.0, 0.0], width = 0.25, amplitude = 1.0 }
//! [[stimulus]]       # label, region, t_on, t_off, value
//! [mechanics]        # material, density, damping, initial_velocity, active
//! [[constraint]]     # region
//! [coupling]         # enabled
//! [[probe]]          # name, location, quantity
//! [output]           # dir, probe_every, snapshot_every, snapshot_format
//! [oracle]           # analytic reference for error norms
//! ```

use serde::{Deserialize, Serialize};

use crate::diffusion::{CorrectionKind, PairConductivity};
use crate::error::{ConfigIssue, SimError};
use crate::geometry::{BiventricleSpec, FiberAngles};
use crate::reaction::{ActiveStressParams, IonicModel};
use crate::solid::Material;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub scene: SceneSection,
    pub geometry: GeometryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrophysiology: Option<EpConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stimulus: Vec<StimulusConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanics: Option<MechanicsConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraint: Vec<ConstraintConfig>,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe: Vec<ProbeConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub name: String,
    pub dim: usize,
    pub dp: f64,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on the time step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    #[default]
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

fn default_fiber() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_sheet() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_band() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxOptions {
    pub steps: usize,
    /// Seed jitter amplitude in units of `dp`.
    pub jitter: f64,
    pub background_pressure: f64,
    pub density: f64,
    pub surface_offset: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { steps: 0, jitter: 0.0, background_pressure: 2.0, density: 1.0, surface_offset: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    /// Lattice block, optionally extended by constrained holder layers below
    /// `lower` along `holder_axis`.
    Box {
        lower: [f64; 3],
        upper: [f64; 3],
        #[serde(default)]
        holder_layers: usize,
        #[serde(default)]
        holder_axis: Axis,
        #[serde(default = "default_fiber")]
        fiber: [f64; 3],
        #[serde(default = "default_sheet")]
        sheet: [f64; 3],
    },
    /// Disk (2D) or ball (3D).
    Ball {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        relax: RelaxOptions,
        #[serde(default = "default_fiber")]
        fiber: [f64; 3],
        #[serde(default = "default_sheet")]
        sheet: [f64; 3],
    },
    Stl {
        path: String,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        relax: RelaxOptions,
        #[serde(default = "default_fiber")]
        fiber: [f64; 3],
        #[serde(default = "default_sheet")]
        sheet: [f64; 3],
    },
    Biventricle {
        #[serde(default)]
        spec: BiventricleSpec,
        #[serde(default)]
        relax: RelaxOptions,
        #[serde(default)]
        angles: FiberAngles,
        /// Dirichlet band width of the pseudo-distance problem, in units of `dp`.
        #[serde(default = "default_band")]
        band: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateField {
    V,
    W,
}

/// Initial profiles. The spiral profiles depend on the field they are
/// assigned to: the potential gets the excited quadrant, the gating variable
/// the refractory region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Uniform { value: f64 },
    /// `amplitude exp(-|x - center|² / width)`.
    Gaussian { center: [f64; 3], width: f64, amplitude: f64 },
    /// Square split at `split`: the potential is excited in the lower-left
    /// quadrant, the gating variable is raised in the upper half.
    QuadrantSpiral { split: f64, value: f64 },
    /// Disk of radius `radius` centered at `(radius, radius)`.
    CircleSpiral { radius: f64, value: f64 },
    /// `value` for `lower <= x[axis] <= upper`, zero elsewhere.
    Band { axis: Axis, lower: f64, upper: f64, value: f64 },
    /// `amplitude / sqrt(t0) exp(-(x[axis] - center)² / (4 d t0))`.
    ExpProfile { axis: Axis, center: f64, t0: f64, d: f64, amplitude: f64 },
    /// Anisotropic Gaussian evaluated at time `time`.
    AnisoGaussian { center: [f64; 3], time: f64, dxx: f64, dyy: f64 },
    /// `offset + gradient . x`.
    Linear { gradient: [f64; 3], offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub field: StateField,
    pub profile: Profile,
}

fn default_capacitance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpConfig {
    /// Ionic model; omitted for pure diffusion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<IonicModel>,
    #[serde(default = "default_capacitance")]
    pub c_m: f64,
    pub d_iso: f64,
    #[serde(default)]
    pub d_ani: f64,
    #[serde(default)]
    pub correction: CorrectionKind,
    #[serde(default)]
    pub pair: PairConductivity,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<InitialCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    All,
    /// Axis-aligned box; `inf` bounds are allowed.
    Box { lower: [f64; 3], upper: [f64; 3] },
    Ball { center: [f64; 3], radius: f64 },
}

impl Region {
    pub fn contains(&self, p: &crate::math::Vect) -> bool {
        match self {
            Region::All => true,
            Region::Box { lower, upper } => (0..3).all(|a| p[a] >= lower[a] && p[a] <= upper[a]),
            Region::Ball { center, radius } => {
                (p - crate::math::Vect::from(*center)).norm() <= *radius
            }
        }
    }
}

fn default_label() -> String {
    "custom".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusMode {
    /// `V_m` is held at `value` inside the window.
    #[default]
    Clamp,
    /// `value` is added to `dV_m/dt` inside the window.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub region: Region,
    pub t_on: f64,
    pub t_off: f64,
    pub value: f64,
    #[serde(default)]
    pub mode: StimulusMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActiveLaw {
    /// Activation-gated relaxation towards `k_a (V - V_r)`.
    Ode {
        #[serde(default)]
        params: ActiveStressParams,
    },
    /// `T_a = factor V`.
    Proportional { factor: f64 },
    /// `T_a = value`.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveConfig {
    pub law: ActiveLaw,
    /// Static potential used when the scene has no electrophysiology.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Profile>,
}

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<Material>,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub damping: f64,
    /// Uniform initial velocity of the unconstrained particles.
    #[serde(default)]
    pub initial_velocity: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    V,
    W,
    TA,
    Displacement,
    Velocity,
}

impl Quantity {
    pub fn components(self) -> &'static [&'static str] {
        match self {
            Quantity::V => &["v"],
            Quantity::W => &["w"],
            Quantity::TA => &["t_a"],
            Quantity::Displacement => &["ux", "uy", "uz"],
            Quantity::Velocity => &["vx", "vy", "vz"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub name: String,
    pub location: [f64; 3],
    pub quantity: Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Vtk,
    Csv,
    Both,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Probe sampling interval; zero samples every step.
    #[serde(default)]
    pub probe_every: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub snapshot_format: SnapshotFormat,
}

/// Analytic reference solutions for the potential field at the end time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Band { axis: Axis, c0: f64, d: f64, z1: f64, z2: f64 },
    Exp { axis: Axis, c0: f64, d: f64, z0: f64, t0: f64 },
    /// `t_start` is the analytic time of the initial state.
    AnisoGaussian { center: [f64; 3], dxx: f64, dyy: f64, t_start: f64 },
}

fn issue(issues: &mut Vec<ConfigIssue>, path: impl Into<String>, message: impl Into<String>) {
    issues.push(ConfigIssue { path: path.into(), message: message.into() });
}

fn positive(issues: &mut Vec<ConfigIssue>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        issue(issues, path, format!("must be positive, got {v}"));
    }
}

fn non_negative(issues: &mut Vec<ConfigIssue>, path: &str, v: f64) {
    if !(v >= 0.0 && v.is_finite()) {
        issue(issues, path, format!("must be non-negative, got {v}"));
    }
}

impl SceneConfig {
    /// Collects every semantic problem of a parsed scene.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let s = &self.scene;
        if !(1..=3).contains(&s.dim) {
            issue(&mut out, "scene.dim", format!("must be 1, 2 or 3, got {}", s.dim));
        }
        positive(&mut out, "scene.dp", s.dp);
        positive(&mut out, "scene.t_end", s.t_end);
        if let Some(dt) = s.dt_max {
            positive(&mut out, "scene.dt_max", dt);
        }
        match &self.geometry {
            GeometryConfig::Box { lower, upper, .. } => {
                for a in 0..s.dim.min(3) {
                    if !(upper[a] > lower[a]) {
                        issue(&mut out, "geometry.upper", format!("must exceed lower along axis {a}"));
                    }
                }
            }
            GeometryConfig::Ball { radius, relax, .. } => {
                positive(&mut out, "geometry.radius", *radius);
                non_negative(&mut out, "geometry.relax.jitter", relax.jitter);
            }
            GeometryConfig::Stl { scale, relax, .. } => {
                positive(&mut out, "geometry.scale", *scale);
                non_negative(&mut out, "geometry.relax.jitter", relax.jitter);
                if s.dim != 3 {
                    issue(&mut out, "geometry.kind", "stl geometry requires dim = 3");
                }
            }
            GeometryConfig::Biventricle { spec, relax, band, .. } => {
                if let Err(m) = spec.validate() {
                    issue(&mut out, "geometry.spec", m);
                }
                non_negative(&mut out, "geometry.relax.jitter", relax.jitter);
                positive(&mut out, "geometry.band", *band);
                if s.dim != 3 {
                    issue(&mut out, "geometry.kind", "biventricle geometry requires dim = 3");
                }
            }
        }
        if let Some(ep) = &self.electrophysiology {
            non_negative(&mut out, "electrophysiology.d_iso", ep.d_iso);
            positive(&mut out, "electrophysiology.c_m", ep.c_m);
            if ep.d_iso + ep.d_ani.min(0.0) <= 0.0 && ep.d_iso > 0.0 {
                issue(&mut out, "electrophysiology.d_ani", "d_iso + d_ani must stay positive");
            }
            for (i, ic) in ep.initial.iter().enumerate() {
                validate_profile(&mut out, &format!("electrophysiology.initial[{i}].profile"), &ic.profile);
            }
        }
        for (i, st) in self.stimulus.iter().enumerate() {
            if st.t_off < st.t_on {
                issue(&mut out, format!("stimulus[{i}].t_off"), "must not precede t_on");
            }
            if self.electrophysiology.is_none() {
                issue(&mut out, format!("stimulus[{i}]"), "stimuli need an [electrophysiology] block");
            }
        }
        if let Some(m) = &self.mechanics {
            if m.material.is_none() {
                issue(&mut out, "mechanics.material", "missing material block");
            }
            positive(&mut out, "mechanics.density", m.density);
            non_negative(&mut out, "mechanics.damping", m.damping);
            if let Some(a) = &m.active {
                if self.electrophysiology.is_none() && a.potential.is_none() {
                    issue(&mut out, "mechanics.active.potential", "required when the scene has no electrophysiology");
                }
                if let Some(p) = &a.potential {
                    validate_profile(&mut out, "mechanics.active.potential", p);
                }
            }
        }
        if self.coupling.enabled {
            if self.electrophysiology.is_none() {
                issue(&mut out, "electrophysiology", "missing block required by coupling");
            }
            match &self.mechanics {
                None => issue(&mut out, "mechanics", "missing block required by coupling"),
                Some(m) if m.active.is_none() => issue(&mut out, "mechanics.active", "missing block required by coupling"),
                _ => {}
            }
        }
        if !self.constraint.is_empty() && self.mechanics.is_none() {
            issue(&mut out, "constraint", "constraints need a [mechanics] block");
        }
        for (i, p) in self.probe.iter().enumerate() {
            let needs_mech = matches!(p.quantity, Quantity::Displacement | Quantity::Velocity);
            let needs_ep = matches!(p.quantity, Quantity::V | Quantity::W);
            if needs_mech && self.mechanics.is_none() {
                issue(&mut out, format!("probe[{i}].quantity"), "needs a [mechanics] block");
            }
            if needs_ep && self.electrophysiology.is_none() {
                issue(&mut out, format!("probe[{i}].quantity"), "needs an [electrophysiology] block");
            }
        }
        non_negative(&mut out, "output.probe_every", self.output.probe_every);
        if let Some(v) = self.output.snapshot_every {
            positive(&mut out, "output.snapshot_every", v);
        }
        if self.oracle.is_some() && self.electrophysiology.is_none() {
            issue(&mut out, "oracle", "needs an [electrophysiology] block");
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serialization cannot fail")
    }
}

fn validate_profile(out: &mut Vec<ConfigIssue>, path: &str, p: &Profile) {
    match p {
        Profile::Gaussian { width, .. } => positive(out, &format!("{path}.width"), *width),
        Profile::ExpProfile { t0, d, .. } => {
            positive(out, &format!("{path}.t0"), *t0);
            positive(out, &format!("{path}.d"), *d);
        }
        Profile::AnisoGaussian { time, dxx, dyy, .. } => {
            positive(out, &format!("{path}.time"), *time);
            positive(out, &format!("{path}.dxx"), *dxx);
            positive(out, &format!("{path}.dyy"), *dyy);
        }
        Profile::CircleSpiral { radius, .. } => positive(out, &format!("{path}.radius"), *radius),
        _ => {}
    }
}

/// Parses and validates a scene; all problems are reported together.
pub fn load_scene(text: &str) -> Result<SceneConfig, SimError> {
    let cfg: SceneConfig = toml::from_str(text).map_err(|e| {
        let path = e.span().map(|s| locate(text, s.start)).unwrap_or_else(|| "<scene>".into());
        SimError::Config(vec![ConfigIssue { path, message: e.message().to_string() }])
    })?;
    let issues = cfg.validate();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(SimError::Config(issues))
    }
}

/// `line N` of a byte offset, prefixed by the enclosing table header.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let table = before
        .lines()
        .rev()
        .find_map(|l| {
            let t = l.trim();
            t.starts_with('[').then(|| t.trim_matches(|c| c == '[' || c == ']').to_string())
        })
        .unwrap_or_default();
    if table.is_empty() {
        format!("line {line}")
    } else {
        format!("{table} (line {line})")
    }
}
