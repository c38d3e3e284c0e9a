use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("matrix is not symmetric at entry ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("Cholesky decomposition failed: pivot {pivot} is {value}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is singular (diagonal entry {index})")]
    Singular { index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParticleError {
    #[error("particle {particle}: kernel moment matrix is singular")]
    SingularMoment { particle: usize },
    #[error("particle {particle}: non-positive volume {volume}")]
    NonPositiveVolume { particle: usize, volume: f64 },
    #[error("particle {particle}: non-finite position")]
    NonFinitePosition { particle: usize },
    #[error("array length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReactionError {
    #[error("recovery rate is singular at V = {v} (pole at V = -mu2)")]
    RecoveryPole { v: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConductivityError {
    #[error("fiber direction has norm {norm}, expected a unit vector")]
    NonUnitFiber { norm: f64 },
    #[error("particle {particle}: conductivity tensor is not SPD ({source})")]
    Decomposition { particle: usize, source: MathError },
    #[error("conductivity array has {found} entries for {expected} particles")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolidError {
    #[error("particle {particle}: inverted deformation (det F = {det})")]
    Inverted { particle: usize, det: f64 },
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("STL parse error at byte {offset}: {message}")]
    Stl { offset: usize, message: String },
    #[error("STL facet count mismatch: header declares {expected}, found {found}")]
    FacetCount { expected: usize, found: usize },
    #[error("no particles generated: body thinner than the particle spacing")]
    EmptyBody,
    #[error("relaxation diverged at step {step}")]
    RelaxationDiverged { step: usize },
    #[error("pseudo-distance solve did not converge after {iterations} iterations (residual {residual})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("pseudo-distance problem needs both an epicardial and an endocardial band")]
    MissingBand,
    #[error(transparent)]
    Particle(#[from] ParticleError),
}

/// One validation failure in a scene description, located by its key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("numerical failure at step {step} (t = {time}): {message}")]
    Numerical { step: usize, time: f64, message: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Particle(#[from] ParticleError),
    #[error(transparent)]
    Conductivity(#[from] ConductivityError),
    #[error(transparent)]
    Solid(#[from] SolidError),
    #[error(transparent)]
    Reaction(#[from] ReactionError),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            SimError::Io { .. } => 3,
            SimError::Geometry(GeometryError::Stl { .. })
            | SimError::Geometry(GeometryError::FacetCount { .. }) => 1,
            _ => 2,
        }
    }
}
