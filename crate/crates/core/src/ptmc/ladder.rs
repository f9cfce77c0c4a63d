use serde::{Deserialize, Serialize};

use crate::error::{Result, TangleError};

/// Smallest gap the update produces, as a fraction of `β_{M−1} − β_0`.
/// Pairs stuck at zero acceptance would otherwise shrink geometrically until
/// neighbouring rungs coincide in floating point.
pub const MIN_GAP_FRACTION: f64 = 1e-12;

/// Inverse temperatures `β_0 < … < β_{M−1}` with fixed endpoints
/// `β_0 = 1/T_max`, `β_{M−1} = 1/T_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    betas: Vec<f64>,
    pub t_max: f64,
    pub t_min: f64,
    /// Damping of the gap recursion, `0 < c < 1`.
    pub c: f64,
}

impl Ladder {
    /// Temperatures geometric between `t_max` and `t_min`.
    pub fn geometric(replicas: usize, t_max: f64, t_min: f64, c: f64) -> Result<Self> {
        if replicas < 2 {
            return Err(TangleError::InvalidConfig(format!(
                "a ladder needs at least 2 replicas, got {replicas}"
            )));
        }
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(TangleError::InvalidConfig(format!(
                "need 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}"
            )));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(TangleError::InvalidConfig(format!(
                "ladder damping c must lie in (0, 1), got {c}"
            )));
        }
        let ratio = (t_min / t_max).ln();
        let last = (replicas - 1) as f64;
        let mut betas: Vec<f64> = (0..replicas)
            .map(|k| 1.0 / (t_max * (ratio * k as f64 / last).exp()))
            .collect();
        betas[0] = 1.0 / t_max;
        betas[replicas - 1] = 1.0 / t_min;
        Ok(Self {
            betas,
            t_max,
            t_min,
            c,
        })
    }

    /// Builds a ladder from explicit betas; endpoints define the temperatures.
    pub fn from_betas(betas: Vec<f64>, c: f64) -> Result<Self> {
        if betas.len() < 2 || betas.windows(2).any(|w| !(w[1] > w[0])) || !(betas[0] > 0.0) {
            return Err(TangleError::InvalidConfig(
                "betas must be positive and strictly increasing".into(),
            ));
        }
        if !(0.0..1.0).contains(&c) {
            return Err(TangleError::InvalidConfig(format!(
                "ladder damping c must lie in [0, 1), got {c}"
            )));
        }
        Ok(Self {
            t_max: 1.0 / betas[0],
            t_min: 1.0 / betas[betas.len() - 1],
            betas,
            c,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.betas.windows(2).all(|w| w[1] > w[0])
    }

    /// Largest `|β_new − β_old| / β_old` over all rungs.
    pub fn max_relative_change(&self, other: &Ladder) -> f64 {
        self.betas
            .iter()
            .zip(&other.betas)
            .map(|(a, b)| (b - a).abs() / a.abs())
            .fold(0.0, f64::max)
    }
}

/// Exchange attempt/accept counters, one slot per adjacent pair
/// `(k, k+1)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub attempts: Vec<u64>,
    pub accepts: Vec<u64>,
}

impl ExchangeStats {
    pub fn new(pairs: usize) -> Self {
        Self {
            attempts: vec![0; pairs],
            accepts: vec![0; pairs],
        }
    }

    pub fn record(&mut self, pair: usize, accepted: bool) {
        self.attempts[pair] += 1;
        if accepted {
            self.accepts[pair] += 1;
        }
    }

    pub fn rate(&self, pair: usize) -> f64 {
        match self.attempts[pair] {
            0 => 0.0,
            n => self.accepts[pair] as f64 / n as f64,
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        (0..self.attempts.len()).map(|k| self.rate(k)).collect()
    }

    pub fn reset(&mut self) {
        self.attempts.iter_mut().for_each(|x| *x = 0);
        self.accepts.iter_mut().for_each(|x| *x = 0);
    }
}

/// One step of the gap recursion
/// `β_i' = β_{i−1}' + (1 − c + c·a_i)(β_i − β_{i−1})`, with the normalized
/// rate `a_i = r_i (β_{M−1} − β_0) / Σ_j r_j (β_j − β_{j−1})`.
///
/// The recursion fixes `β_0`; the gaps are then rescaled uniformly so that
/// `β_{M−1}` also keeps its value.
pub fn update_ladder(ladder: &Ladder, stats: &ExchangeStats) -> Result<Ladder> {
    let m = ladder.len();
    if stats.attempts.len() != m - 1 {
        return Err(TangleError::InvalidParameter(format!(
            "{} exchange pairs for a ladder of {m}",
            stats.attempts.len()
        )));
    }
    if stats.attempts.iter().any(|&n| n == 0) {
        return Err(TangleError::InvalidParameter(
            "every adjacent pair needs at least one exchange attempt".into(),
        ));
    }
    let rates = stats.rates();
    Ok(update_ladder_with_rates(ladder, &rates))
}

pub(crate) fn update_ladder_with_rates(ladder: &Ladder, rates: &[f64]) -> Ladder {
    let b = &ladder.betas;
    let m = b.len();
    let span = b[m - 1] - b[0];
    let gaps: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
    let weighted: f64 = rates.iter().zip(&gaps).map(|(r, g)| r * g).sum();
    if !(weighted > 0.0) {
        // All pairs frozen: no information to redistribute.
        return ladder.clone();
    }
    let c = ladder.c;
    let new_gaps: Vec<f64> = rates
        .iter()
        .zip(&gaps)
        .map(|(r, g)| {
            let a = r * span / weighted;
            ((1.0 - c + c * a) * g).max(span * MIN_GAP_FRACTION)
        })
        .collect();
    let total: f64 = new_gaps.iter().sum();
    let rescale = span / total;

    let mut betas = Vec::with_capacity(m);
    betas.push(b[0]);
    let mut acc = b[0];
    for g in &new_gaps[..m - 2] {
        acc += g * rescale;
        betas.push(acc);
    }
    betas.push(b[m - 1]);
    let out = Ladder { betas, ..*ladder };
    // Round-off can still merge rungs near a large endpoint.
    if !out.is_strictly_increasing() {
        return ladder.clone();
    }
    out
}
