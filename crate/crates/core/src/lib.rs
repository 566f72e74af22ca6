//! Lagrangian equilibria of deterministic mean field games of controls with
//! mixed state-control constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: problem data, built-in models and sampled assumption checks;
//! * [`pointwise`]: the constrained Hamiltonian minimizer `v[x, r]` and the
//!   price fixed point on a state-costate snapshot;
//! * [`ocp`]: one agent's problem against frozen coupling signals, with
//!   optimality residuals;
//! * [`measures`]: particle measures, marginals, Wasserstein-1 distances and
//!   diagnostics;
//! * [`equilibrium`]: fictitious play, certificates and the uniqueness run.

pub mod equilibrium;
pub mod measures;
pub mod model;
pub mod ocp;
pub mod pointwise;

pub use equilibrium::{solve_equilibrium, Damping, EquilibriumReport, SolveConfig, Status};
pub use measures::{ParticleMeasure, WeightedPoints};
pub use model::{InitialDistribution, ModelSpec};
pub use ocp::{AgentOptions, AgentTrajectory, CouplingSignals, TimeGrid};
