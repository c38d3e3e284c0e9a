//! Meshless SPH engine for cardiac electrophysiology and electromechanics.
//!
//! The crate is organized bottom-up:
//!
//! * [`math`]: smoothing kernel and small dense linear algebra;
//! * [`particles`]: reference particle sets, neighbor lists, correction matrices;
//! * [`reaction`]: ionic models, the QSS integrator and active stress;
//! * [`diffusion`]: the anisotropic diffusion operator;
//! * [`solid`]: total-Lagrangian solid dynamics;
//! * [`geometry`]: STL input, signed distances, particle generation and fibers;
//! * [`driver`]: scene files, the time loop, probes, outputs and oracles.

pub mod diffusion;
pub mod driver;
pub mod error;
pub mod geometry;
pub mod math;
pub mod particles;
pub mod reaction;
pub mod solid;
