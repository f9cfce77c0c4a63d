//! Replica-exchange Monte Carlo minimization of the roof energy, with an
//! adaptive temperature ladder and a simulated-annealing baseline.

mod csa;
mod engine;
mod ladder;
mod replica;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TangleError};
use crate::qstate::DIM;
use crate::roof::Decomposition;

pub use csa::csa_minimize;
pub use engine::{minimize, tune_ladder, Engine, TuneReport};
pub use ladder::{update_ladder, ExchangeStats, Ladder, MIN_GAP_FRACTION};
pub use replica::{
    attempt_exchange, exchange_accept, metropolis_accept, propose_move, BestPoint, MoveStats,
    Objective, Proposal, Replica, P_AMPLITUDE, P_MIX, P_WEIGHT,
};

/// Within-replica acceptance the step-size adaptation aims for.
pub const TARGET_MOVE_ACCEPTANCE: f64 = 0.4;

/// Number of real variables `N_p + 2·N_c·N_p`; one sweep makes this many
/// Metropolis steps per replica.
pub fn variable_count(np: usize) -> usize {
    np + 2 * DIM * np
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Number of replicas `M`.
    pub replicas: usize,
    pub t_max: f64,
    pub t_min: f64,
    /// Ladder recursion damping.
    pub ladder_c: f64,
    /// Production sweeps.
    pub sweeps: u64,
    /// Sweeps between exchange rounds.
    pub exchange_period: u64,
    pub kappa: f64,
    /// Partition count `N_p`.
    pub np: usize,
    pub seed: u64,
    pub tune_iterations: usize,
    pub pilot_sweeps: u64,
    /// Feasibility threshold on R².
    pub residual_threshold: f64,
    /// Threads advancing replicas; results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            replicas: 64,
            t_max: 100.0,
            t_min: 1e-6,
            ladder_c: 0.7,
            sweeps: 200_000,
            exchange_period: 1,
            kappa: 1e6,
            np: 4,
            seed: 0,
            tune_iterations: 30,
            pilot_sweeps: 50,
            residual_threshold: 1e-10,
            workers: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.replicas < 2 {
            return Err(TangleError::InvalidConfig(format!(
                "need at least 2 replicas, got {}",
                self.replicas
            )));
        }
        if !(self.t_max > self.t_min) {
            return Err(TangleError::InvalidConfig(format!(
                "need tmin < tmax, got tmin={}, tmax={}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    /// Checks shared by the replica-exchange engine and the annealing
    /// baseline (which also accepts `t_max == t_min` and one replica).
    pub(crate) fn validate_common(&self) -> Result<()> {
        let bad = |msg: String| Err(TangleError::InvalidConfig(msg));
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        if self.sweeps == 0 || self.exchange_period == 0 || self.pilot_sweeps == 0 {
            return bad("sweeps, exchange period and pilot sweeps must be positive".into());
        }
        if self.np == 0 {
            return bad("np must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if !(1e3..=1e12).contains(&self.kappa) {
            return bad(format!("kappa {} outside [1e3, 1e12]", self.kappa));
        }
        if !(self.t_min > 0.0 && self.t_max >= self.t_min && self.t_max.is_finite()) {
            return bad(format!(
                "need 0 < tmin <= tmax, got tmin={}, tmax={}",
                self.t_min, self.t_max
            ));
        }
        if !(self.ladder_c > 0.0 && self.ladder_c < 1.0) {
            return bad(format!("ladder c {} outside (0, 1)", self.ladder_c));
        }
        if !(self.residual_threshold > 0.0) {
            return bad("residual threshold must be positive".into());
        }
        Ok(())
    }

    /// Metropolis steps per replica per sweep.
    pub fn steps_per_sweep(&self) -> usize {
        variable_count(self.np)
    }

    /// Total Metropolis steps of a replica-exchange run, tuning included.
    pub fn move_budget(&self) -> u64 {
        let sweeps = self.sweeps + self.tune_iterations as u64 * self.pilot_sweeps;
        self.replicas as u64 * sweeps * self.steps_per_sweep() as u64
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoofResult {
    /// Lowest average tangle over the projected candidates: each walker's
    /// best feasible point and its final configuration.
    pub tau3: f64,
    pub r2: f64,
    pub best_dec: Decomposition,
    /// Lowest replica energy at the end of each production sweep (one entry
    /// per annealing block for the baseline).
    pub energy_trace: Vec<f64>,
    /// Per-pair exchange rates over the production run.
    pub exchange_rates: Vec<f64>,
    /// Frozen production ladder; absent for the annealing baseline.
    pub ladder: Option<Ladder>,
    pub tuning: Option<TuneReport>,
    /// Temperature slot whose walker produced the best point.
    pub best_slot: usize,
}
