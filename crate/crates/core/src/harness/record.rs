use serde::{Deserialize, Serialize};

use crate::ptmc::{EngineConfig, Ladder, RoofResult};
use crate::qstate::ScenarioSpec;

/// How the partition count was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "np")]
pub enum NpChoice {
    /// Start at `max(4, rank)` and add 4 until successive results agree.
    Auto,
    Fixed(usize),
}

impl std::fmt::Display for NpChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NpChoice::Auto => f.write_str("auto"),
            NpChoice::Fixed(n) => write!(f, "{n}"),
        }
    }
}

/// Which visited decomposition the reported value comes from.
pub const SELECTION: &str = "global-best-feasible";

const TRACE_SAMPLES: usize = 64;

/// Coarse view of the per-sweep minimum energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub len: usize,
    pub first: Option<f64>,
    pub last: Option<f64>,
    pub min: Option<f64>,
    pub argmin: Option<usize>,
    /// At most 64 evenly spaced entries, first and last included.
    pub samples: Vec<(usize, f64)>,
}

impl TraceSummary {
    pub fn new(trace: &[f64]) -> Self {
        let n = trace.len();
        let argmin = (0..n).min_by(|&a, &b| trace[a].total_cmp(&trace[b]));
        let samples = match n {
            0 => Vec::new(),
            _ if n <= TRACE_SAMPLES => trace.iter().copied().enumerate().collect(),
            _ => (0..TRACE_SAMPLES)
                .map(|k| {
                    let i = k * (n - 1) / (TRACE_SAMPLES - 1);
                    (i, trace[i])
                })
                .collect(),
        };
        Self {
            len: n,
            first: trace.first().copied(),
            last: trace.last().copied(),
            min: argmin.map(|i| trace[i]),
            argmin,
            samples,
        }
    }
}

/// One run of the auto partition-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpStep {
    pub np: usize,
    pub tau3: f64,
    pub r2: f64,
}

/// Everything needed to reproduce and audit one minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: ScenarioSpec,
    /// Configuration of the reported run; `config.np` equals `np_used`.
    pub config: EngineConfig,
    pub np_choice: NpChoice,
    pub seed: u64,
    pub tau3: f64,
    pub r2: f64,
    pub np_used: usize,
    pub wall_time_s: f64,
    pub ladder: Option<Ladder>,
    pub exchange_rates: Vec<f64>,
    pub tuner_converged: bool,
    pub tuner_max_relative_change: f64,
    pub best_slot: usize,
    pub selection: String,
    pub energy_trace: TraceSummary,
    /// Runs of the auto search in order; a single entry for fixed `N_p`.
    pub np_history: Vec<NpStep>,
}

impl RunRecord {
    pub(crate) fn from_result(
        scenario: &ScenarioSpec,
        config: &EngineConfig,
        np_choice: NpChoice,
        result: &RoofResult,
        np_history: Vec<NpStep>,
        wall_time_s: f64,
    ) -> Self {
        let (converged, change) = result
            .tuning
            .as_ref()
            .map_or((true, 0.0), |t| (t.converged, t.max_relative_change));
        Self {
            scenario: scenario.clone(),
            config: config.clone(),
            np_choice,
            seed: config.seed,
            tau3: result.tau3,
            r2: result.r2,
            np_used: config.np,
            wall_time_s,
            ladder: result.ladder.clone(),
            exchange_rates: result.exchange_rates.clone(),
            tuner_converged: converged,
            tuner_max_relative_change: change,
            best_slot: result.best_slot,
            selection: SELECTION.to_string(),
            energy_trace: TraceSummary::new(&result.energy_trace),
            np_history,
        }
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_short_and_long_traces() {
        let s = TraceSummary::new(&[]);
        assert_eq!((s.len, s.min, s.samples.len()), (0, None, 0));

        let s = TraceSummary::new(&[3.0, 1.0, 2.0]);
        assert_eq!(s.argmin, Some(1));
        assert_eq!(s.samples, vec![(0, 3.0), (1, 1.0), (2, 2.0)]);

        let long: Vec<f64> = (0..1000).map(|k| (k as f64 - 700.0).abs()).collect();
        let s = TraceSummary::new(&long);
        assert_eq!(s.samples.len(), TRACE_SAMPLES);
        assert_eq!(s.samples[0].0, 0);
        assert_eq!(s.samples[TRACE_SAMPLES - 1].0, 999);
        assert_eq!((s.min, s.argmin), (Some(0.0), Some(700)));
    }

    #[test]
    fn np_choice_serde() {
        for c in [NpChoice::Auto, NpChoice::Fixed(12)] {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<NpChoice>(&s).unwrap(), c);
        }
    }
}
