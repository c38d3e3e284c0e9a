//! Scene assembly and the time loop.
//!
//! Each step advances the potential by a forward reaction half step,
//! one explicit diffusion step and a backward reaction half step, with
//! clamped stimuli imposed before and after. Mechanics, when present,
//! follows with the active stress update and one Verlet step.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::diffusion::{ConductivityModel, DiffusionOperator, OperatorError};
use crate::error::{ConfigIssue, GeometryError, SimError};
use crate::geometry::{
    build_signed_distance, fibers_for_body, generate_biventricle, generate_lattice_particles, jitter, nearest_neighbor_cv,
    parse_stl, relax_particles, LevelSetGrid, RelaxDomain, RelaxParams,
};
use crate::math::{SmoothingKernel, Vect};
use crate::particles::{build_neighbor_lists, compute_correction_matrices, lattice_points, NeighborList, ParticleSet};
use crate::reaction::{active_stress_step, ElectroState, IonicModel, SplitOrder};
use crate::solid::{FiberFrame, MechState, SolidBody};

use super::oracle::{error_norms, oracle_aniso_gaussian, oracle_band_diffusion, oracle_exp_diffusion};
use super::output::{ProbeTable, Snapshot};
use super::scene::{
    ActiveLaw, GeometryConfig, OracleConfig, Profile, Quantity, RelaxOptions, SceneConfig, SnapshotFormat, StateField,
    StimulusConfig, StimulusMode,
};

/// Steps between two scans for non-finite values.
pub const NAN_CHECK_INTERVAL: usize = 100;

impl From<OperatorError> for SimError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Conductivity(e) => SimError::Conductivity(e),
            OperatorError::Particle(e) => SimError::Particle(e),
        }
    }
}

/// Particles and microstructure of a scene before any physics is attached.
#[derive(Debug, Clone)]
pub struct BuiltGeometry {
    pub dim: usize,
    pub points: Vec<Vect>,
    pub frames: Vec<FiberFrame>,
    /// Particles held fixed by the geometry itself (holder layers).
    pub holder: Vec<bool>,
    pub level_set: Option<LevelSetGrid>,
    /// Nearest-neighbor distance CV before and after relaxation.
    pub relax_cv: Option<(f64, f64)>,
    pub psi: Option<Vec<f64>>,
    pub fiber_flagged: Vec<bool>,
}

fn uniform_frame(fiber: &[f64; 3], sheet: &[f64; 3]) -> Result<FiberFrame, SimError> {
    let f0 = Vect::from(*fiber);
    let s = Vect::from(*sheet);
    let bad = |path: &str, message: &str| SimError::Config(vec![ConfigIssue { path: path.into(), message: message.into() }]);
    let f0 = f0.try_normalize(1e-12).ok_or_else(|| bad("geometry.fiber", "must be non-zero"))?;
    let s0 = (s - f0 * s.dot(&f0))
        .try_normalize(1e-12)
        .ok_or_else(|| bad("geometry.sheet", "must not be parallel to the fiber"))?;
    Ok(FiberFrame { f0, s0 })
}

fn relax_params(o: &RelaxOptions) -> RelaxParams {
    RelaxParams {
        steps: o.steps,
        background_pressure: o.background_pressure,
        density: o.density,
        surface_offset: o.surface_offset,
    }
}

/// Lattice seeding, optional jitter and relaxation inside a level set.
fn seed_body(ls: &LevelSetGrid, dim: usize, dp: f64, relax: &RelaxOptions, seed: u64) -> Result<(Vec<Vect>, Option<(f64, f64)>), SimError> {
    let set = generate_lattice_particles(ls, dp)?;
    let mut points = set.positions().to_vec();
    if relax.jitter > 0.0 {
        jitter(&mut points, dim, relax.jitter * dp, seed);
    }
    if relax.steps == 0 {
        return Ok((points, None));
    }
    let report = relax_particles(points, dim, dp, RelaxDomain::Body(ls), &relax_params(relax))?;
    log::info!("relaxation: nearest-neighbor CV {:.4} -> {:.4}", report.cv_initial, report.cv_final);
    Ok((report.positions, Some((report.cv_initial, report.cv_final))))
}

/// Builds particles, holder flags and fiber frames; `base` resolves relative
/// STL paths.
pub fn build_geometry(cfg: &SceneConfig, base: &Path) -> Result<BuiltGeometry, SimError> {
    let dim = cfg.scene.dim;
    let dp = cfg.scene.dp;
    let seed = cfg.scene.seed;
    let mut out = BuiltGeometry {
        dim,
        points: Vec::new(),
        frames: Vec::new(),
        holder: Vec::new(),
        level_set: None,
        relax_cv: None,
        psi: None,
        fiber_flagged: Vec::new(),
    };
    let frame = match &cfg.geometry {
        GeometryConfig::Box { lower, upper, holder_layers, holder_axis, fiber, sheet } => {
            let mut lo = Vect::from(*lower);
            let hi = Vect::from(*upper);
            let axis = holder_axis.index();
            lo[axis] -= *holder_layers as f64 * dp;
            out.points = lattice_points(dim, &lo, &hi, dp);
            out.holder = out.points.iter().map(|p| *holder_layers > 0 && p[axis] < lower[axis]).collect();
            uniform_frame(fiber, sheet)?
        }
        GeometryConfig::Ball { center, radius, relax, fiber, sheet } => {
            let c = Vect::from(*center);
            let mut lo = c;
            let mut hi = c;
            for a in 0..dim {
                lo[a] -= radius;
                hi[a] += radius;
            }
            let (origin, dims) = LevelSetGrid::covering(lo, hi, 0.5 * dp, 3.0 * dp, dim);
            let r = *radius;
            let ls = LevelSetGrid::from_fn(origin, 0.5 * dp, dims, |p| {
                let mut d = p - c;
                for a in dim..3 {
                    d[a] = 0.0;
                }
                r - d.norm()
            });
            let (points, cv) = seed_body(&ls, dim, dp, relax, seed)?;
            out.points = points;
            out.relax_cv = cv;
            out.level_set = Some(ls);
            uniform_frame(fiber, sheet)?
        }
        GeometryConfig::Stl { path, scale, relax, fiber, sheet } => {
            let full = base.join(path);
            let bytes = fs::read(&full).map_err(|e| SimError::io(&full, e))?;
            let parsed = parse_stl(&bytes)?;
            if parsed.dropped > 0 {
                log::warn!("{}: dropped {} degenerate facets", full.display(), parsed.dropped);
            }
            let mut mesh = parsed.mesh;
            for v in &mut mesh.vertices {
                *v *= *scale;
            }
            let (lo, hi) = mesh.bounding_box();
            let (origin, dims) = LevelSetGrid::covering(lo, hi, 0.5 * dp, 3.0 * dp, 3);
            let ls = build_signed_distance(&mesh, origin, 0.5 * dp, dims);
            let (points, cv) = seed_body(&ls, dim, dp, relax, seed)?;
            out.points = points;
            out.relax_cv = cv;
            out.level_set = Some(ls);
            uniform_frame(fiber, sheet)?
        }
        GeometryConfig::Biventricle { spec, relax, angles, band } => {
            let (lo, hi) = spec.bounds();
            let spacing = 0.5 * dp;
            let (origin, dims) = LevelSetGrid::covering(lo, hi, spacing, (band + 2.0) * dp, 3);
            let ls = generate_biventricle(spec, origin, spacing, dims);
            let (points, cv) = seed_body(&ls, dim, dp, relax, seed)?;
            let field = fibers_for_body(&ls, &points, band * dp, angles, &Vect::y())?;
            out.frames = field.frames;
            out.psi = Some(field.psi);
            out.fiber_flagged = field.flagged;
            out.points = points;
            out.relax_cv = cv;
            out.level_set = Some(ls);
            FiberFrame::default()
        }
    };
    if out.points.is_empty() {
        return Err(GeometryError::EmptyBody.into());
    }
    let n = out.points.len();
    if out.frames.is_empty() {
        out.frames = vec![frame; n];
        out.fiber_flagged = vec![false; n];
    }
    if out.holder.is_empty() {
        out.holder = vec![false; n];
    }
    Ok(out)
}

/// Value of an initial or static profile at a reference position. The band
/// profile is averaged over the particle's cell of width `cell` along its
/// axis (point-sampled when `cell` is zero).
pub fn profile_value(profile: &Profile, field: StateField, x: &Vect, cell: f64) -> f64 {
    match *profile {
        Profile::Uniform { value } => value,
        Profile::Gaussian { center, width, amplitude } => {
            amplitude * (-(x - Vect::from(center)).norm_squared() / width).exp()
        }
        Profile::QuadrantSpiral { split, value } => match field {
            StateField::V if x.x <= split && x.y < split => value,
            StateField::W if x.y >= split => value,
            _ => 0.0,
        },
        Profile::CircleSpiral { radius: r, value } => {
            let chord = |t: f64| {
                let s = r * r - (r - t) * (r - t);
                (s >= 0.0).then(|| s.sqrt())
            };
            let (Some(sy), Some(sx)) = (chord(x.y), chord(x.x)) else {
                return 0.0;
            };
            let inside = match field {
                StateField::V => r - sy < x.x && x.x <= r && r - sx < x.y && x.y <= r,
                StateField::W => r - sy < x.x && x.x < r + sy && r <= x.y && x.y < r + sx,
            };
            if inside {
                value
            } else {
                0.0
            }
        }
        Profile::Band { axis, lower, upper, value } => {
            let z = x[axis.index()];
            if cell > 0.0 {
                let overlap = (z + 0.5 * cell).min(upper) - (z - 0.5 * cell).max(lower);
                value * overlap.max(0.0) / cell
            } else if z >= lower && z <= upper {
                value
            } else {
                0.0
            }
        }
        Profile::ExpProfile { axis, center, t0, d, amplitude } => {
            oracle_exp_diffusion(x[axis.index()], 0.0, amplitude, d, center, t0)
        }
        Profile::AnisoGaussian { center, time, dxx, dyy } => {
            oracle_aniso_gaussian(x.x, x.y, time, dxx, dyy, center[0], center[1])
        }
        Profile::Linear { gradient, offset } => offset + Vect::from(gradient).dot(x),
    }
}

#[derive(Debug, Clone)]
pub struct Stimulus {
    pub config: StimulusConfig,
    pub members: Vec<usize>,
}

impl Stimulus {
    pub fn active(&self, t: f64) -> bool {
        t >= self.config.t_on && t <= self.config.t_off
    }
}

/// Sets `V_m` to the clamp value of every stimulus active at `t`.
pub fn apply_stimuli(v: &mut [f64], stimuli: &[Stimulus], t: f64) {
    for s in stimuli {
        if s.config.mode == StimulusMode::Clamp && s.active(t) {
            for &i in &s.members {
                v[i] = s.config.value;
            }
        }
    }
}

/// Electrophysiology state and operators.
#[derive(Debug)]
pub struct Electro {
    /// `None` for pure diffusion.
    pub model: Option<IonicModel>,
    pub c_m: f64,
    pub operator: DiffusionOperator,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    scratch: Vec<f64>,
}

impl Electro {
    fn reaction(&mut self, dt: f64, order: SplitOrder) -> Result<(), SimError> {
        use rayon::prelude::*;
        let Some(model) = self.model else { return Ok(()) };
        let c_m = self.c_m;
        let new: Vec<ElectroState> = self
            .v
            .par_iter()
            .zip(self.w.par_iter())
            .map(|(&v, &w)| model.half_step(ElectroState { v, w }, c_m, dt, order))
            .collect::<Result<_, _>>()?;
        for (i, s) in new.into_iter().enumerate() {
            self.v[i] = s.v;
            self.w[i] = s.w;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Mechanics {
    pub body: SolidBody,
    pub state: MechState,
    pub active: Option<ActiveLaw>,
    /// Potential used by the active law when there is no electrophysiology.
    pub static_potential: Option<Vec<f64>>,
    pub t_a: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolvedProbe {
    pub name: String,
    pub particle: usize,
    pub quantity: Quantity,
}

/// Time step components of the most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub dt: f64,
    pub dt_p: Option<f64>,
    pub dt_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub steps: usize,
    pub time: f64,
    pub particles: usize,
    pub wall_seconds: f64,
    /// `(L2, Linf)` error against the scene oracle at the end time.
    pub oracle_error: Option<(f64, f64)>,
    pub warnings: Vec<String>,
    pub probe_file: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Simulation {
    pub config: SceneConfig,
    pub geometry: BuiltGeometry,
    pub set: ParticleSet,
    pub nl: NeighborList,
    pub kernel: SmoothingKernel,
    pub electro: Option<Electro>,
    pub stimuli: Vec<Stimulus>,
    pub mechanics: Option<Mechanics>,
    pub probes: Vec<ResolvedProbe>,
    pub table: ProbeTable,
    pub time: f64,
    pub steps: usize,
    pub last_step: StepInfo,
    pub warnings: Vec<String>,
    next_probe: u64,
    next_snapshot: u64,
    snapshots_written: usize,
}

impl Simulation {
    /// Assembles a validated scene. Relative file paths resolve against `base`.
    pub fn build(config: SceneConfig, base: &Path) -> Result<Self, SimError> {
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(SimError::Config(issues));
        }
        let geometry = build_geometry(&config, base)?;
        let dim = geometry.dim;
        let dp = config.scene.dp;
        let density = config.mechanics.as_ref().map_or(1.0, |m| m.density);
        let set = ParticleSet::uniform(dim, geometry.points.clone(), dp, density)?;
        let kernel = SmoothingKernel::new(dim, dp);
        let nl = build_neighbor_lists(&set, &kernel);
        let n = set.len();
        let mut warnings = Vec::new();

        let electro = match &config.electrophysiology {
            None => None,
            Some(ep) => {
                let fibers: Vec<Vect> = geometry.frames.iter().map(|f| f.f0).collect();
                let model = ConductivityModel::from_fibers(dim, ep.d_iso, ep.d_ani, &fibers, ep.c_m)?;
                let operator = DiffusionOperator::build(&set, &nl, &kernel, &model, ep.pair, ep.correction)?;
                let mut v = vec![0.0; n];
                let mut w = vec![0.0; n];
                for ic in &ep.initial {
                    let target = match ic.field {
                        StateField::V => &mut v,
                        StateField::W => &mut w,
                    };
                    for (t, x) in target.iter_mut().zip(set.positions()) {
                        *t = profile_value(&ic.profile, ic.field, x, dp);
                    }
                }
                Some(Electro { model: ep.model, c_m: ep.c_m, operator, v, w, scratch: vec![0.0; n] })
            }
        };

        let stimuli: Vec<Stimulus> = config
            .stimulus
            .iter()
            .map(|s| {
                let members: Vec<usize> = (0..n).filter(|&i| s.region.contains(&set.positions()[i])).collect();
                if members.is_empty() {
                    let msg = format!("stimulus '{}' matches no particles", s.label);
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                Stimulus { config: s.clone(), members }
            })
            .collect();

        let mechanics = match &config.mechanics {
            None => None,
            Some(m) => {
                let material = m.material.clone().expect("validated");
                let b0 = compute_correction_matrices(&set, &nl, &kernel)?;
                let mut constrained = geometry.holder.clone();
                for c in &config.constraint {
                    for (i, p) in set.positions().iter().enumerate() {
                        if c.region.contains(p) {
                            constrained[i] = true;
                        }
                    }
                }
                if !config.constraint.is_empty() && constrained.iter().all(|&c| !c) {
                    warnings.push("constraints match no particles".into());
                }
                let body = SolidBody {
                    set: set.clone(),
                    nl: nl.clone(),
                    b0,
                    material,
                    frames: geometry.frames.clone(),
                    constrained,
                    damping: m.damping,
                    h: kernel.h(),
                };
                let mut state = MechState::at_rest(&set);
                let v0 = Vect::from(m.initial_velocity);
                for (v, &fixed) in state.velocity.iter_mut().zip(&body.constrained) {
                    if !fixed {
                        *v = v0;
                    }
                }
                let static_potential = m.active.as_ref().and_then(|a| a.potential.as_ref()).map(|p| {
                    set.positions().iter().map(|x| profile_value(p, StateField::V, x, dp)).collect()
                });
                Some(Mechanics {
                    body,
                    state,
                    active: m.active.as_ref().map(|a| a.law.clone()),
                    static_potential,
                    t_a: vec![0.0; n],
                })
            }
        };

        let mut probes = Vec::new();
        let mut issues = Vec::new();
        for (k, p) in config.probe.iter().enumerate() {
            let loc = Vect::from(p.location);
            let nearest = set
                .positions()
                .iter()
                .enumerate()
                .map(|(i, x)| (i, (x - loc).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match nearest {
                Some((i, d)) if d <= kernel.h() => probes.push(ResolvedProbe { name: p.name.clone(), particle: i, quantity: p.quantity }),
                _ => issues.push(ConfigIssue {
                    path: format!("probe[{k}].location"),
                    message: format!("no particle within h = {} of {:?}", kernel.h(), p.location),
                }),
            }
            if p.quantity == Quantity::TA && mechanics.as_ref().is_none_or(|m| m.active.is_none()) {
                issues.push(ConfigIssue { path: format!("probe[{k}].quantity"), message: "needs [mechanics.active]".into() });
            }
        }
        if !issues.is_empty() {
            return Err(SimError::Config(issues));
        }
        let mut columns = vec!["time".to_string()];
        for p in &probes {
            columns.extend(p.quantity.components().iter().map(|c| format!("{}.{c}", p.name)));
        }

        let mut sim = Self {
            config,
            geometry,
            set,
            nl,
            kernel,
            electro,
            stimuli,
            mechanics,
            probes,
            table: ProbeTable::new(columns),
            time: 0.0,
            steps: 0,
            last_step: StepInfo::default(),
            warnings,
            next_probe: 0,
            next_snapshot: 0,
            snapshots_written: 0,
        };
        if let Some(e) = sim.electro.as_mut() {
            apply_stimuli(&mut e.v, &sim.stimuli, 0.0);
        }
        sim.update_active(0.0);
        Ok(sim)
    }

    /// Reads a scene file and builds it; relative paths resolve against the
    /// scene's directory.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let config = super::scene::load_scene(&text)?;
        Self::build(config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.electro.as_ref().map(|e| e.v.as_slice())
    }

    pub fn gating(&self) -> Option<&[f64]> {
        self.electro.as_ref().map(|e| e.w.as_slice())
    }

    pub fn displacements(&self) -> Option<Vec<Vect>> {
        self.mechanics
            .as_ref()
            .map(|m| (0..self.set.len()).map(|i| m.state.displacement(&self.set, i)).collect())
    }

    /// Candidate step sizes: diffusion, mechanics and the remaining time,
    /// shortened to land on stimulus window edges.
    fn choose_dt(&self) -> StepInfo {
        let dt_p = self.electro.as_ref().map(|e| e.operator.stable_timestep()).filter(|d| d.is_finite());
        let dt_m = self.mechanics.as_ref().map(|m| m.body.stable_timestep(&m.state));
        let mut dt = f64::INFINITY;
        for d in [dt_p, dt_m, self.config.scene.dt_max].into_iter().flatten() {
            dt = dt.min(d);
        }
        let t = self.time;
        let remaining = self.config.scene.t_end - t;
        if !dt.is_finite() {
            dt = remaining;
        }
        dt = dt.min(remaining);
        let eps = 1e-12 * self.config.scene.t_end.max(1.0);
        for s in &self.stimuli {
            for edge in [s.config.t_on, s.config.t_off] {
                if edge > t + eps && edge < t + dt {
                    dt = edge - t;
                }
            }
        }
        StepInfo { dt, dt_p, dt_m }
    }

    fn update_active(&mut self, dt: f64) {
        let Some(m) = self.mechanics.as_mut() else { return };
        let Some(law) = &m.active else { return };
        let v: &[f64] = match (&self.electro, &m.static_potential) {
            (Some(e), _) => &e.v,
            (None, Some(p)) => p,
            (None, None) => return,
        };
        match law {
            ActiveLaw::Ode { params } => {
                if dt > 0.0 {
                    for (t, &vi) in m.t_a.iter_mut().zip(v) {
                        *t = active_stress_step(*t, vi, dt, params);
                    }
                }
            }
            ActiveLaw::Proportional { factor } => {
                for (t, &vi) in m.t_a.iter_mut().zip(v) {
                    *t = factor * vi;
                }
            }
            ActiveLaw::Constant { value } => m.t_a.iter_mut().for_each(|t| *t = *value),
        }
    }

    /// Advances one step and returns the step sizes used.
    pub fn step(&mut self) -> Result<StepInfo, SimError> {
        let info = self.choose_dt();
        let dt = info.dt;
        let t = self.time;
        if let Some(e) = self.electro.as_mut() {
            apply_stimuli(&mut e.v, &self.stimuli, t);
            e.reaction(dt, SplitOrder::Forward)?;
            let Electro { operator, v, scratch, .. } = e;
            operator.advance(v, dt, scratch);
            for s in &self.stimuli {
                if s.config.mode == StimulusMode::Current && s.active(t) {
                    for &i in &s.members {
                        e.v[i] += s.config.value * dt;
                    }
                }
            }
            e.reaction(dt, SplitOrder::Backward)?;
            apply_stimuli(&mut e.v, &self.stimuli, t + dt);
        }
        self.update_active(dt);
        if let Some(m) = self.mechanics.as_mut() {
            let active = m.active.as_ref().map(|_| m.t_a.as_slice());
            m.body.step(&mut m.state, dt, active)?;
        }
        self.time = if self.config.scene.t_end - (t + dt) <= 1e-12 * self.config.scene.t_end {
            self.config.scene.t_end
        } else {
            t + dt
        };
        self.steps += 1;
        self.last_step = info;
        Ok(info)
    }

    /// First field containing a non-finite value.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        if let Some(e) = &self.electro {
            if e.v.iter().any(|x| !x.is_finite()) {
                return Some("V_m");
            }
            if e.w.iter().any(|x| !x.is_finite()) {
                return Some("w");
            }
        }
        if let Some(m) = &self.mechanics {
            if m.t_a.iter().any(|x| !x.is_finite()) {
                return Some("T_a");
            }
            if m.state.position.iter().chain(&m.state.velocity).any(|x| !x.iter().all(|c| c.is_finite())) {
                return Some("position");
            }
        }
        None
    }

    /// Appends one probe row at the current time.
    pub fn sample_probes(&mut self) {
        let mut row = vec![self.time];
        for p in &self.probes {
            let i = p.particle;
            match p.quantity {
                Quantity::V => row.push(self.electro.as_ref().map_or(0.0, |e| e.v[i])),
                Quantity::W => row.push(self.electro.as_ref().map_or(0.0, |e| e.w[i])),
                Quantity::TA => row.push(self.mechanics.as_ref().map_or(0.0, |m| m.t_a[i])),
                Quantity::Displacement => {
                    let u = self.mechanics.as_ref().map_or(Vect::zeros(), |m| m.state.displacement(&self.set, i));
                    row.extend(u.iter());
                }
                Quantity::Velocity => {
                    let v = self.mechanics.as_ref().map_or(Vect::zeros(), |m| m.state.velocity[i]);
                    row.extend(v.iter());
                }
            }
        }
        self.table.push(row);
    }

    fn probe_due(&mut self) -> bool {
        let every = self.config.output.probe_every;
        if every <= 0.0 {
            return true;
        }
        let t = self.time;
        let slot = self.next_probe as f64 * every;
        if t + 1e-9 * every >= slot || t >= self.config.scene.t_end {
            self.next_probe = ((t + 1e-9 * every) / every).floor() as u64 + 1;
            true
        } else {
            false
        }
    }

    fn snapshot_due(&mut self) -> bool {
        let Some(every) = self.config.output.snapshot_every else { return false };
        let t = self.time;
        if t + 1e-9 * every >= self.next_snapshot as f64 * every {
            self.next_snapshot = ((t + 1e-9 * every) / every).floor() as u64 + 1;
            true
        } else {
            false
        }
    }

    /// Writes the current fields as `<stem>.vtk` and/or `<stem>.csv`.
    pub fn write_snapshot(&self, dir: &Path, stem: &str, format: SnapshotFormat) -> Result<(), SimError> {
        let n = self.set.len();
        let positions: Vec<Vect> = match &self.mechanics {
            Some(m) => m.state.position.clone(),
            None => self.set.positions().to_vec(),
        };
        let displacement = self.displacements();
        let von_mises = match &self.mechanics {
            Some(m) => {
                let active = m.active.as_ref().map(|_| m.t_a.as_slice());
                Some(m.body.von_mises(&m.state, active).unwrap_or_else(|_| vec![f64::NAN; n]))
            }
            None => None,
        };
        let mut snap = Snapshot { positions: &positions, ..Default::default() };
        if let Some(e) = &self.electro {
            snap.scalars.push(("V_m", &e.v));
            snap.scalars.push(("w", &e.w));
        }
        if let Some(m) = &self.mechanics {
            if m.active.is_some() {
                snap.scalars.push(("T_a", &m.t_a));
            }
        }
        if let Some(vm) = &von_mises {
            snap.scalars.push(("von_mises", vm));
        }
        if let Some(u) = &displacement {
            snap.vectors.push(("displacement", u));
        }
        let fibers: Vec<Vect> = self.geometry.frames.iter().map(|f| f.f0).collect();
        snap.vectors.push(("fiber", &fibers));
        let title = format!("{} t = {}", self.config.scene.name, self.time);
        if matches!(format, SnapshotFormat::Vtk | SnapshotFormat::Both) {
            let path = dir.join(format!("{stem}.vtk"));
            let file = fs::File::create(&path).map_err(|e| SimError::io(&path, e))?;
            snap.write_vtk(&title, std::io::BufWriter::new(file)).map_err(|e| SimError::io(&path, e))?;
        }
        if matches!(format, SnapshotFormat::Csv | SnapshotFormat::Both) {
            let path = dir.join(format!("{stem}.csv"));
            let file = fs::File::create(&path).map_err(|e| SimError::io(&path, e))?;
            snap.write_csv(std::io::BufWriter::new(file)).map_err(|e| SimError::io(&path, e))?;
        }
        Ok(())
    }

    /// `(L2, Linf)` error of the potential against the scene oracle.
    pub fn oracle_error(&self) -> Option<(f64, f64)> {
        let oracle = self.config.oracle.as_ref()?;
        let v = self.potential()?;
        let t = self.time;
        let exact: Vec<f64> = self
            .set
            .positions()
            .iter()
            .map(|x| match *oracle {
                OracleConfig::Band { axis, c0, d, z1, z2 } => {
                    oracle_band_diffusion(x[axis.index()], t, c0, d, 0.5 * (z1 + z2), z1, z2)
                }
                OracleConfig::Exp { axis, c0, d, z0, t0 } => oracle_exp_diffusion(x[axis.index()], t, c0, d, z0, t0),
                OracleConfig::AnisoGaussian { center, dxx, dyy, t_start } => {
                    oracle_aniso_gaussian(x.x, x.y, t_start + t, dxx, dyy, center[0], center[1])
                }
            })
            .collect();
        Some(error_norms(v, &exact, self.set.volumes()))
    }

    /// Runs to the end time. With `out`, probes, snapshots and a diagnostic
    /// snapshot on numerical failure are written there.
    pub fn run(&mut self, out: Option<&Path>) -> Result<RunSummary, SimError> {
        self.run_observed(out, |_| {})
    }

    /// Like [`Simulation::run`], calling `observe` on the initial state and
    /// after every step.
    pub fn run_observed(&mut self, out: Option<&Path>, mut observe: impl FnMut(&Simulation)) -> Result<RunSummary, SimError> {
        let start = Instant::now();
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        }
        let format = self.config.output.snapshot_format;
        if self.table.rows.is_empty() && self.probe_due() {
            self.sample_probes();
        }
        if let Some(dir) = out {
            if self.snapshot_due() {
                self.write_snapshot(dir, &format!("snapshot_{:05}", self.snapshots_written), format)?;
                self.snapshots_written += 1;
            }
        }
        observe(self);
        while self.time < self.config.scene.t_end {
            let result = self.step();
            let failure = match result {
                Err(e) => Some(e.to_string()),
                Ok(_) if self.steps % NAN_CHECK_INTERVAL == 0 || self.time >= self.config.scene.t_end => {
                    self.non_finite_field().map(|f| format!("non-finite values in {f}"))
                }
                Ok(_) => None,
            };
            if let Some(message) = failure {
                if let Some(dir) = out {
                    self.write_snapshot(dir, "diagnostic", SnapshotFormat::Vtk)?;
                }
                return Err(SimError::Numerical { step: self.steps, time: self.time, message });
            }
            observe(self);
            if self.probe_due() {
                self.sample_probes();
            }
            if let Some(dir) = out {
                if self.snapshot_due() {
                    self.write_snapshot(dir, &format!("snapshot_{:05}", self.snapshots_written), format)?;
                    self.snapshots_written += 1;
                }
            }
        }
        let mut probe_file = None;
        if let Some(dir) = out {
            let path = dir.join("probes.csv");
            fs::write(&path, self.table.to_csv()).map_err(|e| SimError::io(&path, e))?;
            probe_file = Some(path);
        }
        Ok(RunSummary {
            name: self.config.scene.name.clone(),
            steps: self.steps,
            time: self.time,
            particles: self.set.len(),
            wall_seconds: start.elapsed().as_secs_f64(),
            oracle_error: self.oracle_error(),
            warnings: self.warnings.clone(),
            probe_file,
        })
    }
}

/// Builds and runs a scene.
pub fn run(config: SceneConfig, base: &Path, out: Option<&Path>) -> Result<RunSummary, SimError> {
    Simulation::build(config, base)?.run(out)
}

/// Nearest-neighbor CV of a point cloud at the kernel cutoff of `dp`.
pub fn distribution_cv(points: &[Vect], dim: usize, dp: f64) -> f64 {
    nearest_neighbor_cv(points, SmoothingKernel::new(dim, dp).cutoff())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::scene::load_scene;

    const REST: &str = r#"
[scene]
name = "rest"
dim = 2
dp = 0.05
t_end = 2.0

[geometry]
kind = "box"
lower = [0.0, 0.0, 0.0]
upper = [1.0, 1.0, 0.0]

[electrophysiology]
model = { kind = "aliev_panfilov", k = 8.0, a = 0.15, b = 0.15, eps0 = 0.002, mu1 = 0.2, mu2 = 0.3 }
d_iso = 1.0

[[probe]]
name = "p"
location = [0.3, 0.7, 0.0]
quantity = "v"
"#;

    fn build(text: &str) -> Simulation {
        Simulation::build(load_scene(text).unwrap(), Path::new(".")).unwrap()
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let mut sim = build(REST);
        sim.run(None).unwrap();
        assert!(sim.table.rows.len() > 2);
        assert!(sim.potential().unwrap().iter().all(|&v| v == 0.0));
        assert!(sim.table.rows.iter().all(|r| r[1] == 0.0));
        assert_eq!(sim.time, 2.0);
    }

    #[test]
    fn pure_diffusion_loop_conserves_mass() {
        let text = REST.replace(
            "model = { kind = \"aliev_panfilov\", k = 8.0, a = 0.15, b = 0.15, eps0 = 0.002, mu1 = 0.2, mu2 = 0.3 }\n",
            "",
        ) + "\n[[electrophysiology.initial]]\nfield = \"v\"\nprofile = { kind = \"gaussian\", center = [0.5, 0.5, 0.0], width = 0.05, amplitude = 1.0 }\n";
        for corr in ["none", "kernel", "laplacian"] {
            let t = text.replace("d_iso = 1.0", &format!("d_iso = 1.0\ncorrection = \"{corr}\""));
            let mut sim = build(&t);
            let vol = sim.set.volumes().to_vec();
            let mass = |s: &Simulation| s.potential().unwrap().iter().zip(&vol).map(|(v, a)| v * a).sum::<f64>();
            let m0 = mass(&sim);
            for _ in 0..50 {
                sim.step().unwrap();
            }
            assert!((mass(&sim) - m0).abs() < 1e-12 * m0, "{corr}");
        }
    }

    #[test]
    fn stimulus_clamps_inside_window_only() {
        let text = format!(
            "{REST}\n[[stimulus]]\nlabel = \"S2\"\nregion = {{ kind = \"box\", lower = [0.0, 0.0, -1.0], upper = [0.3, 0.3, 1.0] }}\nt_on = 0.5\nt_off = 0.7\nvalue = 0.95\n"
        );
        let mut sim = build(&text);
        let members = sim.stimuli[0].members.clone();
        let expected: Vec<usize> = (0..sim.len())
            .filter(|&i| {
                let p = sim.set.positions()[i];
                p.x <= 0.3 && p.y <= 0.3
            })
            .collect();
        assert_eq!(members, expected);
        let mut hit_on = false;
        while sim.time < 1.0 {
            let before = sim.time;
            sim.step().unwrap();
            let v = sim.potential().unwrap();
            if before < 0.5 && sim.time < 0.5 {
                assert!(v.iter().all(|&x| x == 0.0));
            }
            if (sim.time - 0.5).abs() < 1e-12 || (sim.time > 0.5 && sim.time <= 0.7) {
                hit_on |= (sim.time - 0.5).abs() < 1e-12;
                let max = members.iter().map(|&i| v[i]).fold(f64::MIN, f64::max);
                assert_eq!(max, 0.95);
            }
        }
        assert!(hit_on);
    }

    #[test]
    fn empty_stimulus_region_warns() {
        let text = format!(
            "{REST}\n[[stimulus]]\nregion = {{ kind = \"ball\", center = [5.0, 5.0, 0.0], radius = 0.1 }}\nt_on = 0.0\nt_off = 1.0\nvalue = 1.0\n"
        );
        let sim = build(&text);
        assert_eq!(sim.warnings.len(), 1);
    }

    #[test]
    fn unresolvable_probe_is_a_config_error() {
        let text = REST.replace("location = [0.3, 0.7, 0.0]", "location = [3.0, 0.7, 0.0]");
        match Simulation::build(load_scene(&text).unwrap(), Path::new(".")) {
            Err(SimError::Config(issues)) => assert_eq!(issues[0].path, "probe[0].location"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coupled_step_uses_the_smaller_time_step() {
        let text = format!(
            "{REST}\n[mechanics]\nmaterial = {{ kind = \"neo_hookean\", lambda = 10.0, mu = 2.0 }}\n[mechanics.active]\nlaw = {{ mode = \"proportional\", factor = -0.5 }}\n[coupling]\nenabled = true\n"
        );
        let mut sim = build(&text);
        for _ in 0..20 {
            let info = sim.step().unwrap();
            assert_eq!(info.dt, info.dt_p.unwrap().min(info.dt_m.unwrap()));
        }
    }

    #[test]
    fn profiles() {
        let v = |p: &Profile, f, x: f64, y: f64| profile_value(p, f, &Vect::new(x, y, 0.0), 0.0);
        let q = Profile::QuadrantSpiral { split: 1.25, value: 1.0 };
        assert_eq!(v(&q, StateField::V, 0.5, 0.5), 1.0);
        assert_eq!(v(&q, StateField::V, 0.5, 2.0), 0.0);
        assert_eq!(v(&q, StateField::W, 0.5, 0.5), 0.0);
        assert_eq!(v(&q, StateField::W, 0.5, 2.0), 1.0);
        assert_eq!(v(&q, StateField::W, 2.0, 2.0), 1.0);
        assert_eq!(v(&q, StateField::W, 2.0, 0.5), 0.0);
        let c = Profile::CircleSpiral { radius: 1.25, value: 0.1 };
        assert_eq!(v(&c, StateField::V, 1.0, 1.0), 0.1);
        assert_eq!(v(&c, StateField::V, 0.05, 0.05), 0.0);
        assert_eq!(v(&c, StateField::V, 1.5, 1.0), 0.0);
        assert_eq!(v(&c, StateField::W, 1.0, 1.5), 0.1);
        assert_eq!(v(&c, StateField::W, 1.0, 1.0), 0.0);
        let l = Profile::Linear { gradient: [0.0, 0.0, 30.0], offset: 0.0 };
        assert_eq!(profile_value(&l, StateField::V, &Vect::new(0.3, 0.2, 0.5), 0.1), 15.0);
        let b = Profile::Band { axis: crate::driver::scene::Axis::Y, lower: 0.45, upper: 0.55, value: 1.0 };
        assert_eq!(v(&b, StateField::V, 0.0, 0.5), 1.0);
        assert_eq!(v(&b, StateField::V, 0.0, 0.44), 0.0);
        let avg = profile_value(&b, StateField::V, &Vect::new(0.0, 0.45, 0.0), 0.02);
        assert!((avg - 0.5).abs() < 1e-12);
    }

    #[test]
    fn holder_layers_are_constrained() {
        let text = r#"
[scene]
name = "column"
dim = 3
dp = 0.25
t_end = 0.01

[geometry]
kind = "box"
lower = [0.0, 0.0, 0.0]
upper = [1.0, 1.0, 2.0]
holder_layers = 2
holder_axis = "z"

[mechanics]
material = { kind = "neo_hookean", lambda = 100.0, mu = 10.0 }
initial_velocity = [1.0, 0.0, 0.0]
"#;
        let mut sim = build(text);
        assert_eq!(sim.len(), 4 * 4 * 10);
        let held = sim.geometry.holder.iter().filter(|&&h| h).count();
        assert_eq!(held, 32);
        sim.run(None).unwrap();
        let m = sim.mechanics.as_ref().unwrap();
        for (i, &h) in sim.geometry.holder.iter().enumerate() {
            if h {
                assert_eq!(m.state.position[i], sim.set.positions()[i]);
            }
        }
    }
}
