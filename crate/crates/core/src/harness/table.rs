use std::path::Path;

use serde::Serialize;

use super::record::{NpChoice, RunRecord};
use crate::error::{Result, TangleError};
use crate::ptmc::EngineConfig;
use crate::qstate::ScenarioSpec;

/// One CSV line; `None` renders as an empty field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub family: String,
    pub p: Option<f64>,
    pub n: Option<f64>,
    pub a: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub np: String,
    pub kappa: f64,
    pub tmax: f64,
    pub tmin: f64,
    pub replicas: usize,
    pub sweeps: u64,
    pub seed: u64,
    pub tau3: Option<f64>,
    pub r2: Option<f64>,
    pub wall_time_s: Option<f64>,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "family",
    "p",
    "n",
    "a",
    "c",
    "d",
    "np",
    "kappa",
    "tmax",
    "tmin",
    "replicas",
    "sweeps",
    "seed",
    "tau3",
    "r2",
    "wall_time_s",
    "status",
];

impl CsvRow {
    fn base(spec: &ScenarioSpec, config: &EngineConfig, np: String) -> Self {
        let (n, a, c, d) = match *spec {
            ScenarioSpec::GhzWFlipW { n, .. } => (Some(n), None, None, None),
            ScenarioSpec::GGhzGW { a, c, d, .. } => (None, Some(a), Some(c), Some(d)),
            _ => (None, None, None, None),
        };
        Self {
            family: spec.family_name().to_string(),
            p: spec.p(),
            n,
            a,
            c,
            d,
            np,
            kappa: config.kappa,
            tmax: config.t_max,
            tmin: config.t_min,
            replicas: config.replicas,
            sweeps: config.sweeps,
            seed: config.seed,
            tau3: None,
            r2: None,
            wall_time_s: None,
            status: String::new(),
        }
    }

    pub fn ok(record: &RunRecord) -> Self {
        Self {
            tau3: Some(record.tau3),
            r2: Some(record.r2),
            wall_time_s: Some(record.wall_time_s),
            status: "ok".into(),
            ..Self::base(&record.scenario, &record.config, record.np_used.to_string())
        }
    }

    pub fn failed(
        spec: &ScenarioSpec,
        config: &EngineConfig,
        np: NpChoice,
        err: &TangleError,
    ) -> Self {
        Self {
            status: format!("error: {err}"),
            ..Self::base(spec, config, np.to_string())
        }
    }
}

/// Renders rows with a header line.
pub fn csv_string(rows: &[CsvRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let text = csv_string(rows)?;
    std::fs::write(path, text).map_err(|source| TangleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(e: csv::Error) -> TangleError {
    TangleError::InvalidParameter(format!("csv: {e}"))
}
