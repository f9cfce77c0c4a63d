use std::path::Path;
use std::process::{Command, Output};

use tangle_core::harness::RunRecord;

const SMALL: [&str; 10] = [
    "--replicas",
    "4",
    "--sweeps",
    "200",
    "--np",
    "4",
    "--config",
    "",
    "--seed",
    "7",
];

fn tangle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tangle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small budget with a short tuning phase, written as a config file.
fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(&path, "tune-iterations = 3\npilot-sweeps = 10\n").unwrap();
    path.to_string_lossy().into_owned()
}

fn small_args<'a>(cfg: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut args: Vec<&str> = SMALL.to_vec();
    args[7] = cfg;
    args.extend_from_slice(rest);
    args
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in output:\n{text}"))
        .to_string()
}

#[test]
fn pure_states() {
    let out = tangle(&["pure", "--family", "ghz"]);
    assert!(out.status.success());
    let t: f64 = field(&stdout(&out), "tau3").parse().unwrap();
    assert!((t - 1.0).abs() < 1e-12);
    let out = tangle(&["pure", "--family", "gghz", "--a", "0.6"]);
    let t: f64 = field(&stdout(&out), "tau3").parse().unwrap();
    assert!((t - 4.0 * 0.36 * 0.64).abs() < 1e-12);
}

#[test]
fn point_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let base = ["point", "--family", "ghzwflipw", "--p", "0.8", "--n", "2"];
    let run = |workers: &str| {
        let mut args = small_args(&cfg, &base);
        args.extend(["--workers", workers]);
        let out = tangle(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = stdout(&out);
        (field(&text, "tau3"), field(&text, "r2"))
    };
    assert_eq!(run("1"), run("8"));
}

#[test]
fn point_writes_record_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out_str = out_dir.to_string_lossy().into_owned();
    let args = small_args(
        &cfg,
        &["point", "--family", "ghzw", "--p", "0.9", "--out", &out_str],
    );
    let out = tangle(&args);
    assert!(out.status.success());
    let printed: f64 = field(&stdout(&out), "tau3").parse().unwrap();

    let text = std::fs::read_to_string(out_dir.join("record.json")).unwrap();
    let rec = RunRecord::from_json(&text).unwrap();
    assert_eq!(rec.tau3.to_bits(), printed.to_bits());
    assert_eq!((rec.seed, rec.np_used, rec.config.replicas), (7, 4, 4));
    assert_eq!(RunRecord::from_json(&rec.to_json().unwrap()).unwrap(), rec);

    let csv = std::fs::read_to_string(out_dir.join("point.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "family,p,n,a,c,d,np,kappa,tmax,tmin,replicas,sweeps,seed,tau3,r2,wall_time_s,status"
    );
    assert!(lines[1].starts_with("ghzw,0.9,"));
    assert!(lines[1].ends_with(",ok"));
}

#[test]
fn sweep_prints_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let args = small_args(
        &cfg,
        &[
            "sweep", "--family", "ghzw", "--p-from", "0.5", "--p-to", "1", "--p-step", "0.25",
        ],
    );
    let out = tangle(&args);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
    assert!(rows[2].starts_with("ghzw,1.0,"));
}

#[test]
fn empty_grid_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let args = small_args(
        &cfg,
        &["sweep", "--family", "ghzw", "--p-from", "0.6", "--p-to", "0.4"],
    );
    let out = tangle(&args);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "replicas = 4\nsweeps = 200\nnp = 4\nseed = 1\ntune_iterations = 3\npilot_sweeps = 10\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = tangle(&[
        "point",
        "--family",
        "ghzw",
        "--p",
        "0.9",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rec = RunRecord::from_json(&std::fs::read_to_string(out_dir.join("record.json")).unwrap())
        .unwrap();
    assert_eq!((rec.seed, rec.config.sweeps, rec.config.replicas), (5, 200, 4));
}

#[test]
fn invalid_arguments_exit_2() {
    for args in [
        vec!["point", "--family", "ghzw", "--p", "1.5"],
        vec!["point", "--family", "ising", "--p", "0.5"],
        vec!["point", "--family", "ghzw", "--p", "0.5", "--kappa", "abc"],
        vec!["point", "--family", "ghzw", "--p", "0.5", "--tmin", "200"],
        vec!["point", "--family", "ghzw"],
        vec!["frobnicate"],
    ] {
        let out = tangle(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn too_few_partitions_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let args = small_args(&cfg, &["point", "--family", "ghznoise", "--p", "0.5"]);
    let out = tangle(&args);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "kappa 1e6\n").unwrap();
    let out = tangle(&[
        "point",
        "--family",
        "ghzw",
        "--p",
        "0.5",
        "--config",
        bad_cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let bad_rho = dir.path().join("rho.txt");
    std::fs::write(&bad_rho, "8\n0 0 1.0\n").unwrap();
    let out = tangle(&[
        "point",
        "--family",
        "file",
        "--file",
        bad_rho.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let missing = dir.path().join("absent.txt");
    let out = tangle(&[
        "point",
        "--family",
        "file",
        "--file",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn density_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let rho = tangle_core::make_density(&tangle_core::ScenarioSpec::GhzW { p: 1.0 }).unwrap();
    let path = dir.path().join("ghz.txt");
    std::fs::write(&path, rho.to_text()).unwrap();
    let path = path.to_string_lossy().into_owned();
    let args = small_args(&cfg, &["point", "--family", "file", "--file", &path]);
    let out = tangle(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t: f64 = field(&stdout(&out), "tau3").parse().unwrap();
    assert!(t > 0.999, "{t}");
}
