//! Stochastic, exact and bound runs driven by a [`RunConfig`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde_json::json;

use super::config::RunConfig;
use crate::circuits::Schedule;
use crate::error::{Error, Result};
use crate::estimators::{error_bound, squared_error, summarize, ObservableSpec, Summary, UnitValue, DEFAULT_CONFIDENCE};
use crate::liouvillian::Liouvillian;
use crate::rng::{derive_seed, mix, Domain, StreamFactory};
use crate::snapshot::{write_snapshot, SnapshotHeader};
use crate::stepper::{exact_evolve, run_qmc, DenseState, QmcParams, TimeGrid, EXACT_MAX_QUBITS};
use crate::walkers::{stats, Population, PopulationStats};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "RTQMC_WORKERS";

/// Worker count: environment override, then the explicit request, then rayon's default.
pub fn resolve_workers(requested: Option<usize>) -> Result<Option<usize>> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let w: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        if w == 0 {
            return Err(Error::Config(format!("{WORKERS_ENV} must be positive")));
        }
        return Ok(Some(w));
    }
    Ok(requested)
}

/// Runs `f` on a dedicated pool of `workers` threads (or the global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// One `(sample, replica)` trajectory.
#[derive(Debug, Clone)]
pub struct UnitResult {
    pub sample: u64,
    pub replica: u64,
    pub seed: u64,
    /// `[time][observable]`.
    pub values: Vec<Vec<UnitValue>>,
    pub stats: Vec<PopulationStats>,
    pub snapshots: Vec<(usize, Population)>,
    /// `(bound, squared error vs exact)` per time, when requested.
    pub bounds: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone)]
pub struct QmcOutcome {
    pub config_hash: String,
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSpec>,
    pub units: Vec<UnitResult>,
    /// `[time][observable]`.
    pub summaries: Vec<Vec<Summary>>,
    pub total_steps: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExactOutcome {
    pub config_hash: String,
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSpec>,
    /// `[time][observable]`.
    pub values: Vec<Vec<f64>>,
    pub states: Vec<DenseState>,
    pub wall_seconds: f64,
}

struct Prepared {
    schedule: Schedule,
    times: Vec<f64>,
    grid: TimeGrid,
    observables: Vec<ObservableSpec>,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let schedule = config.build_schedule()?;
    let times = config.observation_times(&schedule)?;
    let grid = TimeGrid::build(&schedule, &times, &config.dt, config.method)?;
    let observables = config.observables(&schedule)?;
    Ok(Prepared { schedule, times, grid, observables })
}

/// Seeds of every unit, sample-major.
pub fn unit_seeds(config: &RunConfig) -> Vec<(u64, u64, u64)> {
    let mut out = Vec::with_capacity(config.n_samples * config.n_replicas);
    for s in 0..config.n_samples as u64 {
        for r in 0..config.n_replicas as u64 {
            out.push((s, r, derive_seed(config.seed, s, r)));
        }
    }
    out
}

/// Pooled summaries over units, with per-(time, observable) bootstrap streams.
pub fn summarize_units(
    observables: &[ObservableSpec],
    n_times: usize,
    unit_values: &[&Vec<Vec<UnitValue>>],
    renormalize: bool,
    resamples: usize,
    bootstrap_seed: u64,
) -> Result<Vec<Vec<Summary>>> {
    let factory = StreamFactory::new(bootstrap_seed);
    (0..n_times)
        .into_par_iter()
        .map(|k| {
            observables
                .iter()
                .enumerate()
                .map(|(o, spec)| {
                    let units: Vec<UnitValue> = unit_values.iter().map(|u| u[k][o]).collect();
                    let mut rng = factory.stream(Domain::Bootstrap, &[k as u64, o as u64]);
                    let renorm = renormalize && !matches!(spec, ObservableSpec::Trace);
                    summarize(spec, &units, renorm, resamples, DEFAULT_CONFIDENCE, &mut rng)
                })
                .collect()
        })
        .collect()
}

pub fn execute_qmc(config: &RunConfig, workers: Option<usize>, with_bound: bool) -> Result<QmcOutcome> {
    let started = Instant::now();
    let p = prepare(config)?;
    let exact = if with_bound && p.schedule.n <= EXACT_MAX_QUBITS {
        Some(exact_evolve(&p.schedule, &p.grid, config.method)?)
    } else {
        None
    };
    let snapshot_at = config.snapshot_indices(&p.times);
    let params = QmcParams { method: config.method, n_diag: config.n_diag, xi: config.xi };
    let seeds = unit_seeds(config);
    info!(
        "{} unit(s), {} steps each, {} observation times",
        seeds.len(),
        p.grid.total_steps(),
        p.times.len()
    );

    let generators: Vec<Liouvillian> = if with_bound {
        (0..p.schedule.segments.len()).map(|s| p.schedule.liouvillian(s)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let seg_dt: Vec<f64> = p.grid.segments.iter().map(|s| s.dt).collect();
    let last_seg = p.schedule.segments.len().saturating_sub(1);

    let units: Vec<UnitResult> = with_workers(workers, || {
        seeds
            .par_iter()
            .map(|&(sample, replica, seed)| {
                let factory = StreamFactory::new(seed);
                let mut values = vec![Vec::new(); p.times.len()];
                let mut st = vec![None; p.times.len()];
                let mut snaps = Vec::new();
                let mut bounds = vec![(0.0, None); if with_bound { p.times.len() } else { 0 }];
                run_qmc(&p.schedule, &p.grid, &params, &factory, &mut |k, t, pop| {
                    values[k] = p.observables.iter().map(|o| UnitValue::from_population(o, pop)).collect();
                    st[k] = Some(stats(pop, t));
                    if snapshot_at.binary_search(&k).is_ok() {
                        snaps.push((k, pop.clone()));
                    }
                    if with_bound && !generators.is_empty() {
                        let seg = p.schedule.segment_at(t).unwrap_or(last_seg);
                        let b = error_bound(pop, &generators[seg], seg_dt[seg]);
                        bounds[k] = (b, exact.as_ref().map(|e| squared_error(pop, &e[k])));
                    }
                    Ok(())
                })?;
                let stats = st
                    .into_iter()
                    .map(|s| s.ok_or_else(|| Error::TimeGrid("observation missed".into())))
                    .collect::<Result<Vec<_>>>()?;
                Ok(UnitResult { sample, replica, seed, values, stats, snapshots: snaps, bounds })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let refs: Vec<&Vec<Vec<UnitValue>>> = units.iter().map(|u| &u.values).collect();
    let summaries = with_workers(workers, || {
        summarize_units(
            &p.observables,
            p.times.len(),
            &refs,
            config.trace_renormalize,
            config.bootstrap_resamples,
            mix(&[config.seed, Domain::Bootstrap as u64]),
        )
    })??;
    Ok(QmcOutcome {
        config_hash: config.config_hash(),
        times: p.times,
        observables: p.observables,
        units,
        summaries,
        total_steps: p.grid.total_steps(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn execute_exact(config: &RunConfig) -> Result<ExactOutcome> {
    let started = Instant::now();
    let p = prepare(config)?;
    if p.schedule.n > EXACT_MAX_QUBITS {
        return Err(Error::SizeGuard { what: "exact evolution", n: p.schedule.n, max: EXACT_MAX_QUBITS });
    }
    let states = exact_evolve(&p.schedule, &p.grid, config.method)?;
    let values = states
        .iter()
        .map(|s| {
            let tr = s.trace().re;
            p.observables
                .iter()
                .map(|o| {
                    let v = o.evaluate_dense(s);
                    if config.trace_renormalize && !matches!(o, ObservableSpec::Trace) {
                        v / tr
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    Ok(ExactOutcome {
        config_hash: config.config_hash(),
        times: p.times,
        observables: p.observables,
        values,
        states,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_observables(
    path: &Path,
    times: &[f64],
    observables: &[ObservableSpec],
    summaries: &[Vec<Summary>],
    hash: &str,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time_ns", "observable", "mean", "ci_low", "ci_high", "config_hash"])?;
    for (k, &t) in times.iter().enumerate() {
        for (o, spec) in observables.iter().enumerate() {
            let s = summaries[k][o];
            w.write_record([
                t.to_string(),
                spec.name().to_string(),
                s.mean.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
                hash.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_walkers(path: &Path, out: &QmcOutcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "time_ns",
        "sample",
        "replica",
        "n_tot",
        "re_ndiag",
        "im_ndiag",
        "theta",
        "dim_occupied",
        "config_hash",
    ])?;
    for (k, &t) in out.times.iter().enumerate() {
        for u in &out.units {
            let s = &u.stats[k];
            w.write_record([
                t.to_string(),
                u.sample.to_string(),
                u.replica.to_string(),
                s.n_tot.to_string(),
                s.re_ndiag.to_string(),
                s.im_ndiag.to_string(),
                s.theta.to_string(),
                s.dim_occupied.to_string(),
                out.config_hash.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_bounds(path: &Path, out: &QmcOutcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time_ns", "sample", "replica", "bound", "squared_error", "config_hash"])?;
    for (k, &t) in out.times.iter().enumerate() {
        for u in &out.units {
            let (b, e) = u.bounds[k];
            w.write_record([
                t.to_string(),
                u.sample.to_string(),
                u.replica.to_string(),
                b.to_string(),
                e.map(|x| x.to_string()).unwrap_or_default(),
                out.config_hash.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_meta(dir: &Path, config: &RunConfig, hash: &str, mode: &str, wall: f64, extra: serde_json::Value) -> Result<()> {
    let meta = json!({
        "mode": mode,
        "config": config,
        "config_hash": hash,
        "versions": { "rtqmc": env!("CARGO_PKG_VERSION"), "schema_version": config.schema_version },
        "wall_seconds": wall,
        "details": extra,
    });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn write_schedule(dir: &Path, config: &RunConfig) -> Result<()> {
    fs::write(dir.join("schedule.json"), config.build_schedule()?.to_json()?)?;
    Ok(())
}

pub fn snapshot_file_name(sample: u64, replica: u64) -> String {
    format!("sample{sample}_replica{replica}.snap")
}

pub fn write_qmc_outputs(config: &RunConfig, out: &QmcOutcome, dir: &Path, with_bound: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_observables(&dir.join("observables.csv"), &out.times, &out.observables, &out.summaries, &out.config_hash)?;
    write_walkers(&dir.join("walkers.csv"), out)?;
    if with_bound {
        write_bounds(&dir.join("bound.csv"), out)?;
    }
    if config.snapshot_stride.is_some() {
        let sdir = dir.join("snapshots");
        fs::create_dir_all(&sdir)?;
        for u in &out.units {
            let mut w = BufWriter::new(File::create(sdir.join(snapshot_file_name(u.sample, u.replica)))?);
            for (k, pop) in &u.snapshots {
                let h = SnapshotHeader {
                    n: pop.n(),
                    n_diag_initial: pop.n_diag_initial(),
                    t: out.times[*k],
                    sample: u.sample,
                    replica: u.replica,
                    seed: u.seed,
                    config_hash: out.config_hash.clone(),
                };
                write_snapshot(&mut w, &h, pop)?;
            }
            w.flush()?;
        }
    }
    write_schedule(dir, config)?;
    write_meta(
        dir,
        config,
        &out.config_hash,
        if with_bound { "bound" } else { "qmc" },
        out.wall_seconds,
        json!({ "units": out.units.len(), "steps_per_unit": out.total_steps, "observation_times": out.times.len() }),
    )
}

pub fn write_exact_outputs(config: &RunConfig, out: &ExactOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let summaries: Vec<Vec<Summary>> = out
        .values
        .iter()
        .map(|row| row.iter().map(|&v| Summary { mean: v, ci_low: v, ci_high: v }).collect())
        .collect();
    write_observables(&dir.join("observables.csv"), &out.times, &out.observables, &summaries, &out.config_hash)?;
    write_schedule(dir, config)?;
    write_meta(dir, config, &out.config_hash, "exact", out.wall_seconds, json!({ "observation_times": out.times.len() }))
}

pub fn run_command(config: &RunConfig, dir: &Path, workers: Option<usize>, with_bound: bool) -> Result<QmcOutcome> {
    let out = execute_qmc(config, workers, with_bound)?;
    write_qmc_outputs(config, &out, dir, with_bound)?;
    Ok(out)
}

pub fn exact_command(config: &RunConfig, dir: &Path) -> Result<ExactOutcome> {
    let out = execute_exact(config)?;
    write_exact_outputs(config, &out, dir)?;
    Ok(out)
}
