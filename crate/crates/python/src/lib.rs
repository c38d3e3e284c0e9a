//! Python bindings: scene loading, simulation stepping and field access.

use std::path::{Path, PathBuf};

use cardiac_sph::driver::{load_scene, SceneConfig, Simulation as CoreSimulation};
use cardiac_sph::error::SimError;
use cardiac_sph::math::SmoothingKernel;
use cardiac_sph::reaction::{AlievPanfilovParams, ElectroState, IonicModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: SimError) -> PyErr {
    match e {
        SimError::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Parsed, validated scene description.
#[pyclass(module = "pycardiac", skip_from_py_object)]
#[derive(Clone)]
struct Scene {
    inner: SceneConfig,
}

#[pymethods]
impl Scene {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        load_scene(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| to_py(SimError::io(&path, e)))?;
        Self::from_toml(&text)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Semantic problems as `path: message` strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().iter().map(|i| format!("{}: {}", i.path, i.message)).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.scene.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.scene.dim
    }

    #[getter]
    fn dp(&self) -> f64 {
        self.inner.scene.dp
    }

    #[setter]
    fn set_dp(&mut self, dp: f64) {
        self.inner.scene.dp = dp;
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.scene.t_end
    }

    #[setter]
    fn set_t_end(&mut self, t_end: f64) {
        self.inner.scene.t_end = t_end;
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.scene;
        format!("Scene(name={:?}, dim={}, dp={}, t_end={})", s.name, s.dim, s.dp, s.t_end)
    }
}

/// A built simulation; relative paths in the scene resolve against `base_dir`.
#[pyclass(module = "pycardiac")]
struct Simulation {
    inner: CoreSimulation,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (scene, base_dir = None))]
    fn new(scene: &Scene, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
        CoreSimulation::build(scene.inner.clone(), &base).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        CoreSimulation::from_file(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    /// Advances one step and returns its size.
    fn step(&mut self) -> PyResult<f64> {
        self.inner.step().map(|info| info.dt).map_err(to_py)
    }

    /// Steps until `time` is reached or the scene ends; returns the step count.
    fn advance(&mut self, time: f64) -> PyResult<usize> {
        let t = time.min(self.inner.config.scene.t_end);
        let mut n = 0;
        while self.inner.time < t - 1e-12 {
            self.inner.step().map_err(to_py)?;
            n += 1;
        }
        Ok(n)
    }

    /// Runs to the end time, writing output to `out_dir` when given.
    #[pyo3(signature = (out_dir = None))]
    fn run<'py>(&mut self, py: Python<'py>, out_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.run(out_dir.as_deref()).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("name", s.name)?;
        d.set_item("steps", s.steps)?;
        d.set_item("time", s.time)?;
        d.set_item("particles", s.particles)?;
        d.set_item("wall_seconds", s.wall_seconds)?;
        d.set_item("oracle_error", s.oracle_error)?;
        d.set_item("warnings", s.warnings)?;
        d.set_item("probe_file", s.probe_file)?;
        Ok(d)
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.set.positions().iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    fn potential(&self) -> Option<Vec<f64>> {
        self.inner.potential().map(<[f64]>::to_vec)
    }

    fn gating(&self) -> Option<Vec<f64>> {
        self.inner.gating().map(<[f64]>::to_vec)
    }

    fn displacements(&self) -> Option<Vec<(f64, f64, f64)>> {
        self.inner.displacements().map(|u| u.iter().map(|p| (p.x, p.y, p.z)).collect())
    }

    /// Probe samples keyed by column name; `time` holds the sample times.
    fn probes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let table = &self.inner.table;
        let d = PyDict::new(py);
        for name in &table.columns {
            d.set_item(name, table.column(name))?;
        }
        Ok(d)
    }

    fn probes_csv(&self) -> String {
        self.inner.table.to_csv()
    }

    /// `(L2, Linf)` error against the scene's analytic solution at the current time.
    fn oracle_error(&self) -> Option<(f64, f64)> {
        self.inner.oracle_error()
    }

    /// Writes the current fields to `dir/stem.vtk`.
    fn write_snapshot(&self, dir: PathBuf, stem: &str) -> PyResult<()> {
        self.inner
            .write_snapshot(Path::new(&dir), stem, cardiac_sph::driver::scene::SnapshotFormat::Vtk)
            .map_err(to_py)
    }
}

/// One split reaction step of the Aliev-Panfilov model with the pulse parameters.
#[pyfunction]
#[pyo3(signature = (v, w, dt, c_m = 1.0))]
fn aliev_panfilov_step(v: f64, w: f64, dt: f64, c_m: f64) -> PyResult<(f64, f64)> {
    let model = IonicModel::AlievPanfilov(AlievPanfilovParams::PULSE);
    model
        .full_step(ElectroState::new(v, w), c_m, dt)
        .map(|s| (s.v, s.w))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Wendland C2 kernel value and radial derivative at distance `r`.
#[pyfunction]
fn wendland(dim: usize, dp: f64, r: f64) -> (f64, f64) {
    let k = SmoothingKernel::new(dim, dp);
    (k.value(r), k.gradient(r))
}

#[pymodule]
fn pycardiac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(aliev_panfilov_step, m)?)?;
    m.add_function(wrap_pyfunction!(wendland, m)?)?;
    Ok(())
}
