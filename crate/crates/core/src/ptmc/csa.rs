use super::engine::{adapt_steps, initial_step, select_best, stream_rng, INITIAL_MIX};
use super::replica::{Objective, Replica};
use super::{EngineConfig, RoofResult};
use crate::error::{Result, TangleError};
use crate::roof::{random_feasible_decomposition, EnergyParams};

/// Blocks between step-size adaptations.
const ADAPT_EVERY: u64 = 20;

/// Single-chain constrained simulated annealing: geometric cooling from
/// `t_max` to `t_min` over the same move budget as [`super::minimize`],
/// with the same move kernel and feasibility accounting.
///
/// Moves come in blocks of `N_v` steps at a common temperature; the step size
/// is adapted towards the target acceptance every few blocks.
pub fn csa_minimize(config: &EngineConfig, params: &EnergyParams) -> Result<RoofResult> {
    config.validate_common()?;
    let objective = Objective::new(params, config.residual_threshold);
    let steps = config.steps_per_sweep();
    let blocks = (config.move_budget() / steps as u64).max(1);

    let mut rng = stream_rng(config.seed, u64::MAX);
    let dec = random_feasible_decomposition(&params.target, config.np, &mut rng)?;
    let step = initial_step(config.t_max, config.kappa);
    let mut chain = Replica::new(dec, &objective, 1.0 / config.t_max, step, INITIAL_MIX, rng);

    let log_ratio = (config.t_min / config.t_max).ln();
    let last = (blocks - 1).max(1) as f64;
    // One trace entry per replica-equivalent sweep keeps the trace the same
    // length scale as the tempering run.
    let trace_every = config.replicas as u64;
    let mut trace = Vec::with_capacity((blocks / trace_every + 1) as usize);
    for k in 0..blocks {
        chain.beta = 1.0 / (config.t_max * (log_ratio * k as f64 / last).exp());
        chain.sweep(steps, &objective);
        if (k + 1) % ADAPT_EVERY == 0 {
            adapt_steps(&mut chain);
        }
        if k % trace_every == 0 {
            trace.push(chain.energy());
        }
    }

    let candidates = chain
        .best
        .iter()
        .flat_map(|b| [(0, &b.dec), (0, chain.decomposition())]);
    match select_best(candidates, params, config.residual_threshold) {
        Some(found) => Ok(RoofResult {
            tau3: found.tau3,
            r2: found.r2,
            best_dec: found.dec,
            energy_trace: trace,
            exchange_rates: Vec::new(),
            ladder: None,
            tuning: None,
            best_slot: 0,
        }),
        None => Err(TangleError::NoFeasiblePoint {
            best_r2: chain.best.as_ref().map_or(chain.r2(), |b| b.r2),
            threshold: config.residual_threshold,
        }),
    }
}
