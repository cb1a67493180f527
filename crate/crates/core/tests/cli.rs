use std::fs;
use std::path::Path;

use rtqmc::cli::aggregate::{aggregate, write_aggregate_outputs};
use rtqmc::cli::config::{Experiment, RunConfig};
use rtqmc::cli::main_with_args;
use rtqmc::cli::run::{exact_command, execute_exact, run_command};
use rtqmc::circuits::Basis;
use rtqmc::stepper::DtPolicy;

fn small_dd() -> RunConfig {
    let mut cfg = RunConfig::template(Experiment::DdPlus);
    cfg.n = 2;
    cfg.total_duration = Some(400.0);
    cfg.n_diag = 5000;
    cfg.n_samples = 3;
    cfg.observation_stride = Some(50.0);
    cfg
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json().unwrap()).unwrap();
    p.display().to_string()
}

#[test]
fn config_round_trip_is_stable() {
    for e in [Experiment::DdPlus, Experiment::DdW, Experiment::Free, Experiment::Ghz, Experiment::Redfield] {
        let cfg = RunConfig::template(e);
        let json = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), json);
        assert_eq!(back.config_hash(), cfg.config_hash());
    }
    let mut v: serde_json::Value = serde_json::from_str(&RunConfig::template(Experiment::Ghz).to_json().unwrap()).unwrap();
    v["bogus"] = 1.into();
    assert!(RunConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn run_outputs_follow_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_dd();
    cfg.n_replicas = 2;
    cfg.snapshot_stride = Some(100.0);
    run_command(&cfg, dir.path(), Some(2), false).unwrap();
    let hash = cfg.config_hash();

    let (h, rows) = read_csv(&dir.path().join("observables.csv"));
    assert_eq!(h, ["time_ns", "observable", "mean", "ci_low", "ci_high", "config_hash"]);
    let mut times: Vec<f64> = rows.iter().filter(|r| r[1] == "fidelity").map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(times.len(), 9);
    assert!(times.windows(2).all(|w| w[0] < w[1]));
    assert!(rows.iter().all(|r| r[5] == hash));
    for r in &rows {
        let (m, lo, hi): (f64, f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!(lo <= m && m <= hi);
    }

    let (h, rows) = read_csv(&dir.path().join("walkers.csv"));
    assert_eq!(h, ["time_ns", "sample", "replica", "n_tot", "re_ndiag", "im_ndiag", "theta", "dim_occupied", "config_hash"]);
    let first: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "0").collect();
    assert_eq!(first.len(), 6);
    assert!(first.iter().all(|r| r[4] == "5000" && r[5] == "0"));
    times = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"], hash);
    assert!(meta["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert!(meta["versions"]["rtqmc"].is_string());
    assert_eq!(RunConfig::from_json(&meta["config"].to_string()).unwrap(), cfg);
    assert_eq!(fs::read_dir(dir.path().join("snapshots")).unwrap().count(), 6);
}

#[test]
fn exact_runs_have_zero_width_intervals_and_known_values() {
    let mut cfg = RunConfig::template(Experiment::Free);
    cfg.n = 1;
    cfg.t1 = Some(1000.0);
    cfg.t2 = None;
    cfg.j_khz = 0.0;
    cfg.total_duration = Some(2000.0);
    cfg.observation_stride = Some(100.0);
    cfg.basis_override = Some(Basis::Computational);
    cfg.dt = DtPolicy::fixed(0.1);
    let dir = tempfile::tempdir().unwrap();
    let out = exact_command(&cfg, dir.path()).unwrap();
    for (k, &t) in out.times.iter().enumerate() {
        let f = 0.5 + 0.5 * (-t / 2000.0f64).exp();
        assert!((out.values[k][0] - f).abs() < 1e-6, "t={t}");
        assert!((out.values[k][1] - 1.0).abs() < 1e-12);
    }
    let (_, rows) = read_csv(&dir.path().join("observables.csv"));
    assert!(rows.iter().all(|r| r[2] == r[3] && r[3] == r[4]));
    assert!(rows.iter().any(|r| r[1] == "trace"));
}

#[test]
fn exact_is_converged_in_dt() {
    let mut cfg = small_dd();
    cfg.dt = DtPolicy::fixed(0.01);
    let a = execute_exact(&cfg).unwrap();
    cfg.dt = DtPolicy::fixed(0.005);
    let b = execute_exact(&cfg).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn redfield_exact_populations_sum_to_one() {
    let cfg = RunConfig::template(Experiment::Redfield);
    let out = execute_exact(&cfg).unwrap();
    let idx: Vec<usize> = ["rho_0_0", "rho_1_1", "rho_2_2", "rho_3_3"]
        .iter()
        .map(|n| out.observables.iter().position(|o| o.name() == *n).unwrap())
        .collect();
    for row in &out.values {
        let s: f64 = idx.iter().map(|&k| row[k]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn aggregation_checks_and_identities() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small_dd();
    cfg.n_samples = 1;
    cfg.snapshot_stride = Some(50.0);
    let a = root.path().join("a");
    let single = run_command(&cfg, &a, None, false).unwrap();

    let one = aggregate(std::slice::from_ref(&a), None).unwrap();
    for (x, y) in one.summaries.iter().zip(&single.summaries) {
        for (u, v) in x.iter().zip(y) {
            assert_eq!(u.mean, v.mean);
        }
    }

    cfg.seed = 43;
    let b = root.path().join("b");
    run_command(&cfg, &b, None, false).unwrap();
    let two = aggregate(&[a.clone(), b.clone()], None).unwrap();
    assert_eq!(two.n_diag_eff, 2 * cfg.n_diag);
    for (k, traces) in two.replica_traces.iter().enumerate() {
        let mean = traces.iter().sum::<f64>() / traces.len() as f64;
        assert!((two.aggregate_trace[k] - mean).abs() < 1e-12);
    }
    let out = root.path().join("agg");
    write_aggregate_outputs(&two, &out).unwrap();
    let (h, rows) = read_csv(&out.join("traces.csv"));
    assert_eq!(h, ["time_ns", "source", "sample", "replica", "seed", "trace", "config_hash"]);
    assert_eq!(rows.len(), 9 * 3);

    assert!(aggregate(&[a.clone(), a.clone()], None).is_err());
    cfg.n_diag = 6000;
    let c = root.path().join("c");
    run_command(&cfg, &c, None, false).unwrap();
    let err = aggregate(&[a, c], None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn command_line_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();

    let cfg = write_config(dir.path(), &small_dd());
    assert_eq!(main_with_args(["rtqmc", "bound", "-c", &cfg, "-o", &out]), 0);
    let (h, rows) = read_csv(&dir.path().join("out/bound.csv"));
    assert_eq!(h, ["time_ns", "sample", "replica", "bound", "squared_error", "config_hash"]);
    assert!(rows.iter().all(|r| r[4].parse::<f64>().unwrap() >= 0.0));

    let mut bad = small_dd();
    bad.n = 1;
    let p = write_config(dir.path(), &bad);
    assert_eq!(main_with_args(["rtqmc", "run", "-c", &p, "-o", &out]), 2);
    let mut free = RunConfig::template(Experiment::Free);
    free.n = 1;
    free.total_duration = Some(50.0);
    free.n_diag = 100;
    let p = write_config(dir.path(), &free);
    assert_eq!(main_with_args(["rtqmc", "run", "-c", &p, "-o", &out]), 0);

    let mut big = small_dd();
    big.n = 11;
    let p = write_config(dir.path(), &big);
    assert_eq!(main_with_args(["rtqmc", "exact", "-c", &p, "-o", &out]), 3);

    let mut coarse = small_dd();
    coarse.dt = DtPolicy::fixed(50.0);
    let p = write_config(dir.path(), &coarse);
    assert_eq!(main_with_args(["rtqmc", "run", "-c", &p, "-o", &out]), 3);

    fs::write(dir.path().join("broken.json"), "{").unwrap();
    let p = dir.path().join("broken.json").display().to_string();
    assert_eq!(main_with_args(["rtqmc", "run", "-c", &p]), 2);
    assert_eq!(main_with_args(["rtqmc", "frobnicate"]), 2);
    assert_eq!(main_with_args(["rtqmc", "template", "ghz"]), 0);
    assert_eq!(main_with_args(["rtqmc", "redfield", "--exact", "-o", &out]), 0);
    assert!(dir.path().join("out/observables.csv").exists());
}
