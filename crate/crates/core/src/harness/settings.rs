use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::NpChoice;
use crate::error::{Result, TangleError};
use crate::ptmc::EngineConfig;

/// Engine configuration plus the partition-count policy, settable by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub engine: EngineConfig,
    pub np: NpChoice,
    pub out: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            np: NpChoice::Auto,
            out: None,
        }
    }
}

/// Keys accepted by [`RunSettings::set`].
pub const SETTING_KEYS: [&str; 14] = [
    "kappa",
    "tmax",
    "tmin",
    "replicas",
    "sweeps",
    "np",
    "seed",
    "out",
    "workers",
    "ladder-c",
    "exchange-period",
    "tune-iterations",
    "pilot-sweeps",
    "threshold",
];

fn bad(key: &str, value: &str, what: &str) -> TangleError {
    TangleError::InvalidParameter(format!("{key}: `{value}` is not {what}"))
}

fn real(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(key, value, "a finite number"))
}

/// Nonnegative integer; scientific notation such as `2e5` is accepted when
/// it denotes an integer.
pub fn count(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    match value.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(bad(key, value, "a nonnegative integer")),
    }
}

impl RunSettings {
    /// Sets one key from its text value. Underscores and dashes are
    /// interchangeable in keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let e = &mut self.engine;
        match key.as_str() {
            "kappa" => e.kappa = real(&key, value)?,
            "tmax" => e.t_max = real(&key, value)?,
            "tmin" => e.t_min = real(&key, value)?,
            "replicas" => e.replicas = count(&key, value)? as usize,
            "sweeps" => e.sweeps = count(&key, value)?,
            "seed" => e.seed = count(&key, value)?,
            "workers" => e.workers = count(&key, value)? as usize,
            "ladder-c" => e.ladder_c = real(&key, value)?,
            "exchange-period" => e.exchange_period = count(&key, value)?,
            "tune-iterations" => e.tune_iterations = count(&key, value)? as usize,
            "pilot-sweeps" => e.pilot_sweeps = count(&key, value)?,
            "threshold" => e.residual_threshold = real(&key, value)?,
            "np" => {
                self.np = if value.eq_ignore_ascii_case("auto") {
                    NpChoice::Auto
                } else {
                    match count(&key, value)? as usize {
                        0 => return Err(bad(&key, value, "a positive integer or `auto`")),
                        n => NpChoice::Fixed(n),
                    }
                };
            }
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                return Err(TangleError::InvalidParameter(format!(
                    "unknown setting `{key}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies every pair of a parsed config file; unknown keys and bad
    /// values are reported against the file and line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| TangleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (key, (line, value)) in parse_key_values(&text, path)? {
            self.set(&key, &value).map_err(|e| TangleError::FileFormat {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Flat `key = value` text. `#` starts a comment; blank lines are skipped;
/// a repeated key is an error. Values keep their line numbers.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| TangleError::FileFormat {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let Some((k, v)) = line.split_once('=') else {
            return Err(err(format!("expected `key = value`, got `{line}`")));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.insert(key.clone(), (idx + 1, v.trim().to_string())).is_some() {
            return Err(err(format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}
