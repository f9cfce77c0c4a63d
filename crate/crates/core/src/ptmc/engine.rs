use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ladder::{update_ladder, ExchangeStats, Ladder};
use super::replica::{attempt_exchange, Objective, Replica};
use super::{EngineConfig, RoofResult, TARGET_MOVE_ACCEPTANCE};
use crate::error::{Result, TangleError};
use crate::roof::{
    average_tangle, project_feasible, random_feasible_decomposition, residual_r2, Decomposition,
    EnergyParams,
};

/// Relative β change above which the tuner reports non-convergence.
pub const TUNE_CONVERGENCE: f64 = 0.10;

const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1.0;
const MAX_MIX: f64 = std::f64::consts::FRAC_PI_2;
pub(crate) const INITIAL_MIX: f64 = 0.1;

/// Stream 0 drives exchanges; temperature slot `k` owns stream `k + 1`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn slot_rng(seed: u64, slot: usize) -> ChaCha8Rng {
    stream_rng(seed, slot as u64 + 1)
}

pub(crate) fn initial_step(temperature: f64, kappa: f64) -> f64 {
    (temperature / kappa).sqrt().clamp(MIN_STEP, 0.5)
}

fn adapt(scale: f64, acceptance: f64, max: f64) -> f64 {
    (scale * (2.0 * (acceptance - TARGET_MOVE_ACCEPTANCE)).exp()).clamp(MIN_STEP, max)
}

/// Rescales both move amplitudes of `rep` towards the target acceptance and
/// clears its counters.
pub(crate) fn adapt_steps(rep: &mut Replica) {
    rep.step_scale = adapt(rep.step_scale, rep.moves.rate(), MAX_STEP);
    if rep.mixes.attempts > 0 {
        rep.mix_scale = adapt(rep.mix_scale, rep.mixes.rate(), MAX_MIX);
    }
    rep.moves = Default::default();
    rep.mixes = Default::default();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub rounds: usize,
    /// Largest relative β change in the final round.
    pub max_relative_change: f64,
    pub converged: bool,
    /// Exchange rates measured in the final pilot phase.
    pub pilot_rates: Vec<f64>,
}

/// Replica set, ladder and exchange bookkeeping of one minimization.
pub struct Engine {
    config: EngineConfig,
    params: EnergyParams,
    objective: Objective,
    ladder: Ladder,
    replicas: Vec<Replica>,
    exchange_rng: ChaCha8Rng,
    stats: ExchangeStats,
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    pub fn new(config: &EngineConfig, params: &EnergyParams) -> Result<Self> {
        config.validate()?;
        let ladder = Ladder::geometric(config.replicas, config.t_max, config.t_min, config.ladder_c)?;
        let objective = Objective::new(params, config.residual_threshold);
        let replicas = ladder
            .betas()
            .iter()
            .enumerate()
            .map(|(k, &beta)| {
                let mut rng = slot_rng(config.seed, k);
                let dec = random_feasible_decomposition(&params.target, config.np, &mut rng)?;
                let step = initial_step(1.0 / beta, config.kappa);
                Ok(Replica::new(dec, &objective, beta, step, INITIAL_MIX, rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| TangleError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            params: params.clone(),
            objective,
            stats: ExchangeStats::new(config.replicas - 1),
            exchange_rng: stream_rng(config.seed, 0),
            ladder,
            replicas,
            pool,
        })
    }

    pub fn ladder(&self) -> &Ladder {
        &self.ladder
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn stats(&self) -> &ExchangeStats {
        &self.stats
    }

    /// Cached energies by temperature slot.
    pub fn energies(&self) -> Vec<f64> {
        self.replicas.iter().map(Replica::energy).collect()
    }

    /// Advances every replica by `sweeps` sweeps; returns the lowest replica
    /// energy after each sweep.
    pub fn advance(&mut self, sweeps: u64) -> Vec<f64> {
        let steps = self.config.steps_per_sweep();
        let obj = &self.objective;
        let run = |rep: &mut Replica| -> Vec<f64> {
            (0..sweeps)
                .map(|_| {
                    rep.sweep(steps, obj);
                    rep.energy()
                })
                .collect()
        };
        let per_replica: Vec<Vec<f64>> = match &self.pool {
            Some(pool) => pool.install(|| self.replicas.par_iter_mut().map(run).collect()),
            None => self.replicas.iter_mut().map(run).collect(),
        };
        (0..sweeps as usize)
            .map(|j| per_replica.iter().map(|e| e[j]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// One exchange round: pairs `(0,1), (2,3), …` then `(1,2), (3,4), …`.
    pub fn exchange_round(&mut self) {
        let m = self.replicas.len();
        for parity in [0, 1] {
            for lo in (parity..m - 1).step_by(2) {
                let u: f64 = self.exchange_rng.random();
                let (left, right) = self.replicas.split_at_mut(lo + 1);
                let accepted = attempt_exchange(&mut left[lo], &mut right[0], u);
                self.stats.record(lo, accepted);
            }
        }
    }

    /// Runs `sweeps` sweeps with an exchange round every exchange period
    /// (and after the final partial block).
    fn run_blocks(&mut self, sweeps: u64, trace: Option<&mut Vec<f64>>) {
        let period = self.config.exchange_period;
        let mut remaining = sweeps;
        let mut trace = trace;
        while remaining > 0 {
            let block = remaining.min(period);
            let energies = self.advance(block);
            if let Some(t) = trace.as_deref_mut() {
                t.extend(energies);
            }
            self.exchange_round();
            remaining -= block;
        }
    }

    fn set_ladder(&mut self, ladder: Ladder) {
        for (rep, &beta) in self.replicas.iter_mut().zip(ladder.betas()) {
            rep.beta = beta;
        }
        self.ladder = ladder;
    }

    /// Alternates pilot phases with ladder updates and step-size adaptation,
    /// then freezes both.
    pub fn tune(&mut self) -> Result<TuneReport> {
        let mut report = TuneReport {
            rounds: self.config.tune_iterations,
            max_relative_change: 0.0,
            converged: true,
            pilot_rates: Vec::new(),
        };
        for _ in 0..self.config.tune_iterations {
            self.stats.reset();
            self.run_blocks(self.config.pilot_sweeps, None);
            let next = update_ladder(&self.ladder, &self.stats)?;
            report.max_relative_change = self.ladder.max_relative_change(&next);
            report.pilot_rates = self.stats.rates();
            self.set_ladder(next);
            self.replicas.iter_mut().for_each(adapt_steps);
        }
        report.converged = report.max_relative_change <= TUNE_CONVERGENCE;
        Ok(report)
    }

    /// Production run on the frozen ladder.
    pub fn run(&mut self, tuning: TuneReport) -> Result<RoofResult> {
        self.stats.reset();
        let mut trace = Vec::with_capacity(self.config.sweeps as usize);
        self.run_blocks(self.config.sweeps, Some(&mut trace));

        let candidates = self.replicas.iter().enumerate().flat_map(|(k, r)| {
            r.best
                .iter()
                .flat_map(move |b| [(k, &b.dec), (k, r.decomposition())])
        });
        if let Some(found) = select_best(candidates, &self.params, self.config.residual_threshold) {
            return Ok(RoofResult {
                tau3: found.tau3,
                r2: found.r2,
                best_dec: found.dec,
                energy_trace: trace,
                exchange_rates: self.stats.rates(),
                ladder: Some(self.ladder.clone()),
                tuning: Some(tuning),
                best_slot: found.slot,
            });
        }
        let best_r2 = self
            .replicas
            .iter()
            .map(Replica::r2)
            .fold(f64::INFINITY, f64::min);
        Err(TangleError::NoFeasiblePoint {
            best_r2,
            threshold: self.config.residual_threshold,
        })
    }
}

pub(crate) struct Selected {
    pub slot: usize,
    pub tau3: f64,
    pub r2: f64,
    pub dec: Decomposition,
}

/// Projects every candidate onto the exact constraint and returns the lowest
/// average tangle among the results that are feasible. A candidate whose
/// projection fails competes unprojected if it is itself feasible. Ties go
/// to the earlier candidate.
///
/// Callers pass, for each walker that ever visited a feasible point, that
/// best point and the final configuration. The latter matters when `κ` is
/// small enough that cold walkers equilibrate just above the threshold.
pub(crate) fn select_best<'a>(
    candidates: impl Iterator<Item = (usize, &'a Decomposition)>,
    params: &EnergyParams,
    threshold: f64,
) -> Option<Selected> {
    let mut out: Option<Selected> = None;
    for (slot, cand) in candidates {
        let dec = project_feasible(cand, &params.target).unwrap_or_else(|_| cand.clone());
        let r2 = residual_r2(&dec, &params.target);
        if !(r2 < threshold) {
            continue;
        }
        let tau3 = average_tangle(&dec);
        if out.as_ref().is_none_or(|o| tau3 < o.tau3) {
            out = Some(Selected { slot, tau3, r2, dec });
        }
    }
    out
}

/// Tunes a fresh engine and returns the frozen ladder with its report.
pub fn tune_ladder(config: &EngineConfig, params: &EnergyParams) -> Result<(Ladder, TuneReport)> {
    let mut engine = Engine::new(config, params)?;
    let report = engine.tune()?;
    Ok((engine.ladder.clone(), report))
}

/// Tunes the ladder, then runs production and reports the lowest average
/// tangle among feasible visited decompositions.
pub fn minimize(config: &EngineConfig, params: &EnergyParams) -> Result<RoofResult> {
    let mut engine = Engine::new(config, params)?;
    let report = engine.tune()?;
    engine.run(report)
}
