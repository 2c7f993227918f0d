//! Sequential Monte Carlo methods for joint state and static-parameter
//! estimation in separable state-space models.
//!
//! The crate provides four filtering algorithms over models whose states and
//! observations decompose into non-interacting subsystems that share a global
//! static parameter vector:
//!
//! * a standard particle filter (`Spf`) with random-walk parameter dynamics,
//! * a density-assisted particle filter (`Dapf`) that redraws from a
//!   moment-matched Gaussian,
//! * multiple particle filtering without information exchange (`MpfNoFusion`),
//! * multiple particle filtering with optimal Bayesian fusion of the shared
//!   parameter marginals (`MpfFusion`).
//!
//! Supporting modules cover weighted-particle arithmetic, multivariate
//! Gaussian algebra (marginals, conditionals, the fusion rule), a benchmark
//! nonlinear model, and a reproducible Monte Carlo experiment harness.
//!
//! With the default `parallel` feature, realizations of an experiment and the
//! per-subsystem phases of the multiple-filter steps run on rayon; disabling
//! the feature falls back to sequential loops with bit-identical output.

pub mod error;
pub mod experiment;
pub mod filters;
pub mod gaussian;
pub mod model;
pub mod particles;

pub use error::Error;
pub use experiment::{Algorithm, ExperimentConfig, ResultTable};
pub use filters::{Estimates, FilterKind, FilterParams, FilterState};
pub use gaussian::{Gaussian, FusionOutcome};
pub use model::{BenchmarkModel, ParamLayout, Partitioning, SeparableModel, Trajectory};
pub use particles::ParticleCloud;
