//! Three-tangle of three-qubit mixed states.
//!
//! The convex roof `τ3(ρ) = min Σ_i p_i τ3(Ψ_i)` over pure-state
//! decompositions of `ρ` is computed by minimizing the penalty energy
//! `Σ_i p_i τ3(Ψ_i) + κ·R²` with replica-exchange Monte Carlo, where `R²`
//! measures how far the decomposition is from reproducing `ρ`.
//!
//! * [`qstate`]: pure states, density matrices, tangle and concurrence.
//! * [`roof`]: decompositions, residual and energy.
//! * [`ptmc`]: the tempering engine, ladder tuning and an annealing baseline.
//! * [`harness`]: scenario runs, sweeps, run records and CSV output.

pub mod error;
pub mod harness;
pub mod ptmc;
pub mod qstate;
pub mod roof;

pub use error::{Result, TangleError};
pub use ptmc::{csa_minimize, minimize, EngineConfig, Ladder, RoofResult};
pub use qstate::{
    concurrence_pure, make_density, make_pure, three_tangle_pure, validate_density, DensityMatrix,
    PureState, ScenarioSpec, StateFamily, TwoQubitState,
};
pub use roof::{average_tangle, energy, residual_r2, Decomposition, EnergyParams};
