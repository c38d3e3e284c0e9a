//! Scene files, the time loop, outputs and analytic oracles.

pub mod oracle;
pub mod output;
pub mod scene;
pub mod sim;

pub use oracle::{error_norms, oracle_aniso_gaussian, oracle_band_diffusion, oracle_exp_diffusion};
pub use output::{ProbeTable, Snapshot};
pub use scene::{load_scene, SceneConfig};
pub use sim::{build_geometry, run, BuiltGeometry, RunSummary, Simulation, StepInfo};
