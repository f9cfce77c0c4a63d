use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tangle_core::harness::{
    self, compare_csa, p_grid, run_point, sweep_np, sweep_p, tune_point, write_csv, write_json,
    CsvRow, RunSettings, DEFAULT_P_STEP,
};
use tangle_core::{make_pure, three_tangle_pure, ScenarioSpec, StateFamily, TangleError};

const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_FILE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "tangle", version, about = "Three-tangle of three-qubit states")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Run settings. Values override those read from `--config`.
#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Penalty weight on R² [default: 1e6]
    #[arg(long, global = true)]
    kappa: Option<String>,
    /// Hottest ladder temperature [default: 100]
    #[arg(long, global = true)]
    tmax: Option<String>,
    /// Coldest ladder temperature [default: 1e-6]
    #[arg(long, global = true)]
    tmin: Option<String>,
    /// Number of replicas [default: 64]
    #[arg(long, global = true)]
    replicas: Option<String>,
    /// Production sweeps [default: 2e5]
    #[arg(long, global = true)]
    sweeps: Option<String>,
    /// Partition count or `auto`; for `npsweep` a list such as `8,12,16-20`
    /// [default: auto]
    #[arg(long, global = true)]
    np: Option<String>,
    /// Base seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Threads; results do not depend on it [default: all cores]
    #[arg(long, global = true)]
    workers: Option<String>,
    /// Directory for run records, CSV and reports
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` file with the same keys as the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct FamilyArgs {
    /// ghzw, gghzgw, ghzwflipw, ghznoise or file
    #[arg(long)]
    family: String,
    /// Mixing weight of the GHZ-type component
    #[arg(long)]
    p: Option<f64>,
    /// Split parameter of ghzwflipw: the W weight is (1 - p) / n
    #[arg(long, default_value_t = 2.0)]
    n: f64,
    #[arg(long, default_value_t = 0.2)]
    a: f64,
    #[arg(long, default_value_t = 0.2)]
    c: f64,
    #[arg(long, default_value_t = 0.2)]
    d: f64,
    /// Density-matrix file for `--family file`
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Three-tangle of a pure state
    Pure {
        /// ghz, w, flipw, gghz or gw
        #[arg(long)]
        family: String,
        /// gGHZ amplitude of |000>; |111> gets sqrt(1 - a^2)
        #[arg(long, default_value_t = 0.2)]
        a: f64,
        /// gW amplitudes of |001> and |010>; |100> gets the remainder
        #[arg(long, default_value_t = 0.2)]
        c: f64,
        #[arg(long, default_value_t = 0.2)]
        d: f64,
    },
    /// Minimize one mixed state
    Point(FamilyArgs),
    /// Sweep the mixing weight over a grid
    Sweep {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, default_value_t = 0.0)]
        p_from: f64,
        #[arg(long, default_value_t = 1.0)]
        p_to: f64,
        #[arg(long, default_value_t = DEFAULT_P_STEP)]
        p_step: f64,
    },
    /// Fixed partition counts from the `--np` list
    Npsweep(FamilyArgs),
    /// Replica exchange against constrained annealing over several seeds
    CompareCsa {
        #[command(flatten)]
        family: FamilyArgs,
        /// Number of seeds (at least 3)
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Exact value to measure errors against; defaults to the best result
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Tune the ladder and print diagnostics only
    Tune(FamilyArgs),
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<TangleError> for Failure {
    fn from(e: TangleError) -> Self {
        let code = match e {
            TangleError::NoFeasiblePoint { .. } => EXIT_INFEASIBLE,
            TangleError::FileFormat { .. } | TangleError::Io { .. } => EXIT_FILE,
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

/// Output errors are not input errors.
fn output_failure(e: TangleError) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn settings(global: &GlobalArgs, np_is_list: bool) -> Result<RunSettings, Failure> {
    let mut s = RunSettings::default();
    s.engine.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    if let Some(path) = &global.config {
        s.apply_file(path)?;
    }
    let flags = [
        ("kappa", &global.kappa),
        ("tmax", &global.tmax),
        ("tmin", &global.tmin),
        ("replicas", &global.replicas),
        ("sweeps", &global.sweeps),
        ("seed", &global.seed),
        ("workers", &global.workers),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v)?;
        }
    }
    if !np_is_list {
        if let Some(v) = &global.np {
            s.set("np", v)?;
        }
    }
    if let Some(out) = &global.out {
        s.out = Some(out.clone());
    }
    Ok(s)
}

fn scenario(args: &FamilyArgs, p_required: bool) -> Result<ScenarioSpec, Failure> {
    let p = match (args.p, p_required, args.family.as_str()) {
        (_, _, "file") => 0.0,
        (Some(p), _, _) => p,
        (None, false, _) => 0.0,
        (None, true, _) => return Err(invalid("--p is required for this family")),
    };
    let spec = match args.family.as_str() {
        "ghzw" => ScenarioSpec::GhzW { p },
        "gghzgw" => ScenarioSpec::GGhzGW {
            p,
            a: args.a,
            c: args.c,
            d: args.d,
        },
        "ghzwflipw" => ScenarioSpec::GhzWFlipW { p, n: args.n },
        "ghznoise" => ScenarioSpec::GhzNoise { p },
        "file" => match &args.file {
            Some(path) => ScenarioSpec::FromFile { path: path.clone() },
            None => return Err(invalid("--family file needs --file <path>")),
        },
        other => {
            return Err(invalid(format!(
                "unknown family `{other}` (expected ghzw, gghzgw, ghzwflipw, ghznoise or file)"
            )))
        }
    };
    Ok(spec)
}

/// `8,12,16-20` style lists.
fn parse_np_list(text: &str) -> Result<Vec<usize>, Failure> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| invalid(format!("bad np value `{s}`")))
        };
        match item.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if lo > hi {
                    return Err(invalid(format!("empty np range `{item}`")));
                }
                out.extend(lo..=hi);
            }
            None => out.push(parse(item)?),
        }
    }
    if out.is_empty() {
        return Err(invalid("npsweep needs --np <list>"));
    }
    Ok(out)
}

fn save<T: serde::Serialize>(out: Option<&Path>, name: &str, value: &T) -> Result<(), Failure> {
    match out {
        Some(dir) => write_json(dir, name, value).map_err(output_failure),
        None => Ok(()),
    }
}

fn save_csv(out: Option<&Path>, name: &str, rows: &[CsvRow]) -> Result<(), Failure> {
    let Some(dir) = out else { return Ok(()) };
    let io = |source| TangleError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| output_failure(io(e)))?;
    write_csv(&dir.join(name), rows).map_err(output_failure)
}

fn print_csv(rows: &[CsvRow]) -> Result<(), Failure> {
    print!("{}", harness::csv_string(rows).map_err(output_failure)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Pure { family, a, c, d } => {
            let fam = match family.as_str() {
                "ghz" => StateFamily::Ghz,
                "w" => StateFamily::W,
                "flipw" => StateFamily::FlippedW,
                "gghz" => StateFamily::GeneralizedGhz {
                    a: *a,
                    b: (1.0 - a * a).max(0.0).sqrt(),
                },
                "gw" => StateFamily::GeneralizedW {
                    c: *c,
                    d: *d,
                    f: (1.0 - c * c - d * d).max(0.0).sqrt(),
                },
                other => {
                    return Err(invalid(format!(
                        "unknown pure family `{other}` (expected ghz, w, flipw, gghz or gw)"
                    )))
                }
            };
            let psi = make_pure(&fam)?;
            println!("tau3 = {:?}", three_tangle_pure(&psi));
        }
        Command::Point(args) => {
            let s = settings(&cli.global, false)?;
            let spec = scenario(args, true)?;
            let rec = run_point(&spec, &s)?;
            println!("tau3 = {:?}", rec.tau3);
            println!("r2 = {:?}", rec.r2);
            println!("np = {}", rec.np_used);
            println!("tuner_converged = {}", rec.tuner_converged);
            println!("wall_time_s = {:.3}", rec.wall_time_s);
            save(s.out.as_deref(), "record.json", &rec)?;
            save_csv(s.out.as_deref(), "point.csv", &[CsvRow::ok(&rec)])?;
        }
        Command::Sweep {
            family,
            p_from,
            p_to,
            p_step,
        } => {
            let s = settings(&cli.global, false)?;
            let spec = scenario(family, false)?;
            let grid = p_grid(*p_from, *p_to, *p_step)?;
            let points = sweep_p(&spec, &grid, &s)?;
            let rows: Vec<CsvRow> = points.iter().map(|o| o.row()).collect();
            print_csv(&rows)?;
            if let Some(dir) = s.out.as_deref() {
                for (k, o) in points.iter().enumerate() {
                    if let Ok(rec) = &o.result {
                        save(Some(dir), &format!("record_{k:04}.json"), rec)?;
                    }
                }
            }
            save_csv(s.out.as_deref(), "sweep.csv", &rows)?;
        }
        Command::Npsweep(args) => {
            let s = settings(&cli.global, true)?;
            let spec = scenario(args, true)?;
            let list = parse_np_list(cli.global.np.as_deref().unwrap_or(""))?;
            let sweep = sweep_np(&spec, &list, &s)?;
            let rows: Vec<CsvRow> = sweep.points.iter().map(|o| o.row()).collect();
            println!("np,tau3,delta_tau3,status");
            for (o, delta) in sweep.points.iter().zip(&sweep.delta) {
                let np = o.settings.np;
                match (&o.result, delta) {
                    (Ok(rec), Some(d)) => println!("{np},{:?},{d:?},ok", rec.tau3),
                    (Err(e), _) => println!("{np},,,error: {e}"),
                    _ => unreachable!("delta exists for every successful run"),
                }
            }
            if let Some(dir) = s.out.as_deref() {
                for o in &sweep.points {
                    if let Ok(rec) = &o.result {
                        save(Some(dir), &format!("record_np{:02}.json", rec.np_used), rec)?;
                    }
                }
            }
            save_csv(s.out.as_deref(), "npsweep.csv", &rows)?;
        }
        Command::CompareCsa {
            family,
            seeds,
            reference,
        } => {
            let s = settings(&cli.global, false)?;
            let spec = scenario(family, true)?;
            let report = compare_csa(&spec, &s, *seeds, *reference)?;
            let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3e}"));
            println!("reference = {}", show(report.reference));
            println!("move_budget = {}", report.move_budget);
            for (name, m) in [("pt", &report.pt), ("csa", &report.csa)] {
                println!(
                    "{name}: feasible {}/{}, median tau3 {}, median error {}, error range [{}, {}]",
                    m.feasible,
                    report.seeds.len(),
                    show(m.median_tau3),
                    show(m.median_error),
                    show(m.min_error),
                    show(m.max_error),
                );
            }
            println!("pt_not_worse = {}", report.pt_not_worse());
            save(s.out.as_deref(), "compare_csa.json", &report)?;
        }
        Command::Tune(args) => {
            let s = settings(&cli.global, false)?;
            let spec = scenario(args, true)?;
            let rec = tune_point(&spec, &s)?;
            println!("converged = {}", rec.report.converged);
            println!("max_relative_change = {:.4}", rec.report.max_relative_change);
            println!("slot,beta,temperature,pilot_rate");
            for (k, b) in rec.ladder.betas().iter().enumerate() {
                let rate = rec.report.pilot_rates.get(k).copied();
                let rate = rate.map_or(String::new(), |r| format!("{r:.4}"));
                println!("{k},{b:e},{:e},{rate}", 1.0 / b);
            }
            save(s.out.as_deref(), "tune.json", &rec)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tangle: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn np_lists() {
        assert_eq!(parse_np_list("8,12").ok().unwrap(), vec![8, 12]);
        assert_eq!(parse_np_list("4-6, 10").ok().unwrap(), vec![4, 5, 6, 10]);
        assert!(parse_np_list("").is_err());
        assert!(parse_np_list("6-4").is_err());
        assert!(parse_np_list("0").is_err());
        assert!(parse_np_list("x").is_err());
    }

    #[test]
    fn family_parsing() {
        let args = FamilyArgs {
            family: "ghzwflipw".into(),
            p: Some(0.8),
            n: 2.0,
            a: 0.2,
            c: 0.2,
            d: 0.2,
            file: None,
        };
        assert_eq!(
            scenario(&args, true).ok().unwrap(),
            ScenarioSpec::GhzWFlipW { p: 0.8, n: 2.0 }
        );
        let missing_p = FamilyArgs { p: None, ..args.clone() };
        assert_eq!(scenario(&missing_p, true).err().unwrap().code, EXIT_INVALID);
        let unknown = FamilyArgs {
            family: "ising".into(),
            ..args
        };
        assert!(scenario(&unknown, true).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed = 3\nsweeps = 100\nnp = 8\n").unwrap();
        let global = GlobalArgs {
            config: Some(cfg),
            seed: Some("11".into()),
            ..Default::default()
        };
        let s = settings(&global, false).ok().unwrap();
        assert_eq!(s.engine.seed, 11);
        assert_eq!(s.engine.sweeps, 100);
        assert_eq!(s.np, harness::NpChoice::Fixed(8));
    }
}
