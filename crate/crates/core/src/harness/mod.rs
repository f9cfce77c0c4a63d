//! Scenario runs: single points, sweeps over `p` and `N_p`, the annealing
//! comparison, run records and CSV output.

mod record;
mod settings;
mod table;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use record::{NpChoice, NpStep, RunRecord, TraceSummary, SELECTION};
pub use settings::{count, parse_key_values, RunSettings, SETTING_KEYS};
pub use table::{csv_string, write_csv, CsvRow, CSV_COLUMNS};

use crate::error::{Result, TangleError};
use crate::ptmc::{csa_minimize, minimize, tune_ladder, EngineConfig, Ladder, TuneReport};
use crate::qstate::{make_density, validate_density, DensityMatrix, ScenarioSpec};
use crate::roof::EnergyParams;

/// Auto mode stops once successive results differ by less than this.
pub const NP_AUTO_TOL: f64 = 1e-3;
pub const NP_AUTO_START: usize = 4;
pub const NP_AUTO_STEP: usize = 4;
pub const NP_AUTO_MAX: usize = 20;
/// Default grid spacing of `p` sweeps.
pub const DEFAULT_P_STEP: f64 = 0.05;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of grid point `index` in a sweep with base seed `base`.
pub fn derive_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ splitmix64(index as u64))
}

/// `from, from + step, …` up to `to` inclusive (with a small slack against
/// round-off). Empty when `from > to`.
pub fn p_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && from.is_finite() && to.is_finite()) {
        return Err(TangleError::InvalidParameter(format!(
            "bad grid: from={from}, to={to}, step={step}"
        )));
    }
    if from > to {
        return Ok(Vec::new());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n)
        .map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12)
        .collect();
    check_grid(&grid)?;
    Ok(grid)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(TangleError::InvalidParameter(format!(
            "grid value {p} outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

fn target_and_rank(spec: &ScenarioSpec, kappa: f64) -> Result<(EnergyParams, usize)> {
    let rho: DensityMatrix = make_density(spec)?;
    let rank = validate_density(&rho).rank;
    Ok((EnergyParams::new(kappa, rho)?, rank))
}

/// First partition count of auto mode.
pub fn auto_start(rank: usize) -> usize {
    NP_AUTO_START.max(rank).min(NP_AUTO_MAX)
}

/// Builds the target and minimizes it. In auto mode `N_p` starts at
/// `max(4, rank)` and grows by 4 until two successive results differ by
/// less than [`NP_AUTO_TOL`] or [`NP_AUTO_MAX`] is reached; the last run is
/// reported.
pub fn run_point(spec: &ScenarioSpec, settings: &RunSettings) -> Result<RunRecord> {
    let start = Instant::now();
    let (params, rank) = target_and_rank(spec, settings.engine.kappa)?;
    let mut config = settings.engine.clone();
    let mut history = Vec::new();
    let mut np = match settings.np {
        NpChoice::Fixed(n) => n,
        NpChoice::Auto => auto_start(rank),
    };
    loop {
        config.np = np;
        let result = minimize(&config, &params)?;
        history.push(NpStep {
            np,
            tau3: result.tau3,
            r2: result.r2,
        });
        let settled = match history.as_slice() {
            [.., a, b] => (a.tau3 - b.tau3).abs() < NP_AUTO_TOL,
            _ => false,
        };
        if settings.np != NpChoice::Auto || settled || np >= NP_AUTO_MAX {
            let wall = start.elapsed().as_secs_f64();
            return Ok(RunRecord::from_result(
                spec,
                &config,
                settings.np,
                &result,
                history,
                wall,
            ));
        }
        np = (np + NP_AUTO_STEP).min(NP_AUTO_MAX);
    }
}

/// Outcome of one grid point.
#[derive(Debug)]
pub struct PointOutcome {
    pub spec: ScenarioSpec,
    pub settings: RunSettings,
    pub result: Result<RunRecord>,
}

impl PointOutcome {
    pub fn row(&self) -> CsvRow {
        match &self.result {
            Ok(rec) => CsvRow::ok(rec),
            Err(e) => CsvRow::failed(&self.spec, &self.settings.engine, self.settings.np, e),
        }
    }
}

/// Maps `f` over `items` in order, or on a pool of `workers` threads.
/// Output order is the input order either way.
fn par_map<T: Send, U: Send>(
    workers: usize,
    items: Vec<T>,
    f: impl Fn(T) -> U + Sync + Send,
) -> Result<Vec<U>> {
    if workers <= 1 || items.len() <= 1 {
        return Ok(items.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TangleError::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}

/// Points of a sweep run concurrently with single-threaded engines when
/// more than one worker is configured.
fn run_points(settings: &RunSettings, jobs: Vec<(ScenarioSpec, RunSettings)>) -> Result<Vec<PointOutcome>> {
    let outer = settings.engine.workers;
    par_map(outer, jobs, |(spec, mut s)| {
        if outer > 1 {
            s.engine.workers = 1;
        }
        let result = run_point(&spec, &s);
        PointOutcome {
            spec,
            settings: s,
            result,
        }
    })
}

/// One [`run_point`] per grid value with seed `derive_seed(seed, index)`.
/// Failed points are kept as outcomes and the sweep continues.
pub fn sweep_p(
    template: &ScenarioSpec,
    grid: &[f64],
    settings: &RunSettings,
) -> Result<Vec<PointOutcome>> {
    if matches!(template, ScenarioSpec::FromFile { .. }) {
        return Err(TangleError::InvalidParameter(
            "a file target has no mixing weight to sweep".into(),
        ));
    }
    check_grid(grid)?;
    let jobs = grid
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut s = settings.clone();
            s.engine.seed = derive_seed(settings.engine.seed, k);
            (template.with_p(p), s)
        })
        .collect();
    run_points(settings, jobs)
}

/// Fixed-`N_p` runs with `Δτ3 = τ3 − min` over the successful ones.
#[derive(Debug)]
pub struct NpSweep {
    pub points: Vec<PointOutcome>,
    /// Aligned with `points`; `None` where the run failed.
    pub delta: Vec<Option<f64>>,
}

/// Runs the scenario at every partition count of `np_list` with the
/// configured seed. Counts below the target rank are rejected.
pub fn sweep_np(spec: &ScenarioSpec, np_list: &[usize], settings: &RunSettings) -> Result<NpSweep> {
    let (_, rank) = target_and_rank(spec, settings.engine.kappa)?;
    if let Some(&np) = np_list.iter().find(|&&n| n < rank.max(1)) {
        return Err(TangleError::InvalidParameter(format!(
            "np {np} is below the target rank {rank}"
        )));
    }
    let jobs = np_list
        .iter()
        .map(|&np| {
            let mut s = settings.clone();
            s.np = NpChoice::Fixed(np);
            (spec.clone(), s)
        })
        .collect();
    let points = run_points(settings, jobs)?;
    let min = points
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| r.tau3))
        .fold(f64::INFINITY, f64::min);
    let delta = points
        .iter()
        .map(|o| o.result.as_ref().ok().map(|r| r.tau3 - min))
        .collect();
    Ok(NpSweep { points, delta })
}

/// Per-method statistics of a seed comparison. Failed runs count as
/// infinitely bad when taking medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub tau3: Vec<Option<f64>>,
    pub r2: Vec<Option<f64>>,
    pub feasible: usize,
    pub median_tau3: Option<f64>,
    /// Median of `|τ3 − reference|`.
    pub median_error: Option<f64>,
    pub min_error: Option<f64>,
    pub max_error: Option<f64>,
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = match n {
        0 => return None,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    };
    m.is_finite().then_some(m)
}

impl MethodSummary {
    fn new(runs: &[Result<(f64, f64)>], reference: f64) -> Self {
        let tau3: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|x| x.0)).collect();
        let r2 = runs.iter().map(|r| r.as_ref().ok().map(|x| x.1)).collect();
        let errors: Vec<f64> = tau3
            .iter()
            .map(|t| t.map_or(f64::INFINITY, |t| (t - reference).abs()))
            .collect();
        let taus: Vec<f64> = tau3.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            feasible: tau3.iter().flatten().count(),
            median_tau3: median(&taus),
            median_error: median(&errors),
            min_error: finite(errors.iter().copied().fold(f64::INFINITY, f64::min)),
            max_error: finite(errors.iter().copied().fold(0.0, f64::max)),
            tau3,
            r2,
        }
    }
}

/// Replica exchange against constrained annealing at a matched move budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsaReport {
    pub scenario: ScenarioSpec,
    pub config: EngineConfig,
    pub seeds: Vec<u64>,
    /// Exact value if supplied, otherwise the lowest feasible result of
    /// either method.
    pub reference: Option<f64>,
    pub reference_supplied: bool,
    /// Metropolis steps per run, the same for both methods.
    pub move_budget: u64,
    pub pt: MethodSummary,
    pub csa: MethodSummary,
}

impl CsaReport {
    /// `true` when the tempering median error does not exceed annealing's.
    pub fn pt_not_worse(&self) -> bool {
        match (self.pt.median_error, self.csa.median_error) {
            (Some(pt), Some(csa)) => pt <= csa,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }
}

/// Runs both optimizers for `n_seeds` derived seeds. Auto `N_p` resolves to
/// its starting value so both methods see the same problem size. The report
/// contains no timings and is a pure function of its inputs.
pub fn compare_csa(
    spec: &ScenarioSpec,
    settings: &RunSettings,
    n_seeds: usize,
    reference: Option<f64>,
) -> Result<CsaReport> {
    if n_seeds < 3 {
        return Err(TangleError::InvalidParameter(format!(
            "comparison needs at least 3 seeds, got {n_seeds}"
        )));
    }
    let (params, rank) = target_and_rank(spec, settings.engine.kappa)?;
    let mut config = settings.engine.clone();
    config.np = match settings.np {
        NpChoice::Fixed(n) => n,
        NpChoice::Auto => auto_start(rank),
    };
    config.validate()?;
    let seeds: Vec<u64> = (0..n_seeds).map(|k| derive_seed(config.seed, k)).collect();
    let workers = config.workers;
    let jobs: Vec<(bool, u64)> = seeds
        .iter()
        .flat_map(|&s| [(true, s), (false, s)])
        .collect();
    let runs = par_map(workers, jobs, |(pt, seed)| {
        let mut c = config.clone();
        c.seed = seed;
        if workers > 1 {
            c.workers = 1;
        }
        let out = if pt {
            minimize(&c, &params)
        } else {
            csa_minimize(&c, &params)
        };
        out.map(|r| (r.tau3, r.r2))
    })?;
    let (pt_runs, csa_runs): (Vec<_>, Vec<_>) = runs
        .into_iter()
        .enumerate()
        .partition(|(k, _)| k % 2 == 0);
    let pt_runs: Vec<Result<(f64, f64)>> = pt_runs.into_iter().map(|x| x.1).collect();
    let csa_runs: Vec<Result<(f64, f64)>> = csa_runs.into_iter().map(|x| x.1).collect();
    let best = pt_runs
        .iter()
        .chain(&csa_runs)
        .filter_map(|r| r.as_ref().ok().map(|x| x.0))
        .fold(f64::INFINITY, f64::min);
    let reference_value = reference.or(best.is_finite().then_some(best));
    let r = reference_value.unwrap_or(f64::NAN);
    Ok(CsaReport {
        scenario: spec.clone(),
        move_budget: config.move_budget(),
        config,
        seeds,
        reference: reference_value,
        reference_supplied: reference.is_some(),
        pt: MethodSummary::new(&pt_runs, r),
        csa: MethodSummary::new(&csa_runs, r),
    })
}

/// Ladder diagnostics without a production run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub scenario: ScenarioSpec,
    pub config: EngineConfig,
    pub ladder: Ladder,
    pub report: TuneReport,
}

pub fn tune_point(spec: &ScenarioSpec, settings: &RunSettings) -> Result<TuneRecord> {
    let (params, rank) = target_and_rank(spec, settings.engine.kappa)?;
    let mut config = settings.engine.clone();
    config.np = match settings.np {
        NpChoice::Fixed(n) => n,
        NpChoice::Auto => auto_start(rank),
    };
    let (ladder, report) = tune_ladder(&config, &params)?;
    Ok(TuneRecord {
        scenario: spec.clone(),
        config,
        ladder,
        report,
    })
}

/// Serializes `value` as pretty JSON into `dir/name`, creating `dir`.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TangleError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text).map_err(io(&path))
}
