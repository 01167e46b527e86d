//! Aggregation with nonlocal velocity alignment.
//!
//! The first-order model transports a density `ρ` with a velocity `u` defined
//! implicitly by
//!
//! ```text
//! Φ(x) u(x) = ∫ φ(|x−y|) ρ(y) u(y) dy − ∇K∗ρ(x),     Φ(x) = ∫ φ(|x−y|) ρ(y) dy,
//! ```
//!
//! with zero total momentum. The crate provides the kernels, the velocity
//! solver, a grid transport scheme, the kinetic particle system with inertia
//! and the diagnostics used to compare them with known steady states.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod kernels;
pub mod kinetic;
pub mod solver;
pub mod transport;
pub mod validation;

pub use analysis::{wasserstein1_1d, DiscreteMeasure, SteadyState, TargetMetric};
pub use config::{SimConfig, SweepConfig};
pub use error::{Error, Result};
pub use kernels::{InfluenceFunction, InteractionPotential};
pub use kinetic::{epsilon_sweep, Integrator, KineticState, SweepRow};
pub use solver::{assemble, solve_velocity, VelocitySolution, VelocitySystem, WeightedConfiguration};
pub use transport::{
    run, Diagnostics, DensityField, Grid, InitialCondition, RunObserver, RunSummary, TransportScheme,
};
