//! Replica aggregation over snapshot dumps from one or more run directories.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::RunConfig;
use super::run::{summarize_units, write_observables, with_workers};
use crate::error::{Error, Result};
use crate::estimators::{ObservableSpec, Summary, UnitValue};
use crate::rng::{mix, Domain};
use crate::snapshot::{read_snapshots, SnapshotHeader};
use crate::walkers::Population;

/// One replica trajectory as read from a snapshot file.
#[derive(Debug, Clone)]
pub struct ReplicaDump {
    pub source: PathBuf,
    pub header: SnapshotHeader,
    pub frames: Vec<(f64, Population)>,
}

#[derive(Debug, Clone)]
pub struct AggregateOutcome {
    pub config: RunConfig,
    pub config_hash: String,
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSpec>,
    pub replicas: Vec<ReplicaDump>,
    /// `[time][observable]`.
    pub summaries: Vec<Vec<Summary>>,
    /// `[time][replica]`.
    pub replica_traces: Vec<Vec<f64>>,
    /// Aggregate trace per time, `Σ N^diag / (r N^diag_0)`.
    pub aggregate_trace: Vec<f64>,
    pub n_diag_eff: u64,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "snap"));
    files.sort();
    Ok(files)
}

fn load_config(dir: &Path) -> Result<RunConfig> {
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let cfg = meta
        .get("config")
        .ok_or_else(|| Error::Config(format!("{}: meta.json has no config", dir.display())))?;
    Ok(serde_json::from_value(cfg.clone())?)
}

fn load_replicas(dir: &Path, hash: &str) -> Result<Vec<ReplicaDump>> {
    let snap_dir = dir.join("snapshots");
    let files = read_dir_sorted(&snap_dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no snapshot files", snap_dir.display())));
    }
    let mut out = Vec::new();
    for f in files {
        let blocks = read_snapshots(BufReader::new(File::open(&f)?))?;
        let Some((first, _)) = blocks.first() else {
            return Err(Error::Snapshot(format!("{}: empty snapshot file", f.display())));
        };
        let header = first.clone();
        for (h, _) in &blocks {
            if h.config_hash != hash {
                return Err(Error::Mismatch(format!(
                    "{}: config hash {} differs from {}",
                    f.display(),
                    h.config_hash,
                    hash
                )));
            }
            if (h.seed, h.sample, h.replica) != (header.seed, header.sample, header.replica) {
                return Err(Error::Snapshot(format!("{}: mixed units in one file", f.display())));
            }
        }
        let frames = blocks.into_iter().map(|(h, p)| (h.t, p)).collect();
        out.push(ReplicaDump { source: f, header, frames });
    }
    Ok(out)
}

/// Aggregates all replicas found under `dirs/*/snapshots`. Every directory must
/// come from a configuration with the same hash and every replica must carry a
/// distinct seed.
pub fn aggregate(dirs: &[PathBuf], workers: Option<usize>) -> Result<AggregateOutcome> {
    let Some(first) = dirs.first() else {
        return Err(Error::Config("aggregate needs at least one run directory".into()));
    };
    let config = load_config(first)?;
    let hash = config.config_hash();
    let mut replicas = Vec::new();
    for d in dirs {
        let c = load_config(d)?;
        if c.config_hash() != hash {
            return Err(Error::Mismatch(format!(
                "{}: config hash {} differs from {} ({})",
                d.display(),
                c.config_hash(),
                hash,
                first.display()
            )));
        }
        replicas.extend(load_replicas(d, &hash)?);
    }

    let mut seeds = BTreeSet::new();
    for r in &replicas {
        if !seeds.insert(r.header.seed) {
            return Err(Error::Mismatch(format!(
                "duplicate replica seed {} ({}); aggregated replicas must be independent",
                r.header.seed,
                r.source.display()
            )));
        }
    }
    let times: Vec<f64> = replicas[0].frames.iter().map(|f| f.0).collect();
    for r in &replicas {
        let t: Vec<f64> = r.frames.iter().map(|f| f.0).collect();
        if t != times {
            return Err(Error::Mismatch(format!("{}: snapshot times differ", r.source.display())));
        }
        if r.header.n_diag_initial != replicas[0].header.n_diag_initial {
            return Err(Error::Mismatch(format!("{}: n_diag_initial differs", r.source.display())));
        }
    }

    let schedule = config.build_schedule()?;
    let observables = config.observables(&schedule)?;
    let values: Vec<Vec<Vec<UnitValue>>> = replicas
        .iter()
        .map(|r| {
            r.frames
                .iter()
                .map(|(_, pop)| observables.iter().map(|o| UnitValue::from_population(o, pop)).collect())
                .collect()
        })
        .collect();
    let refs: Vec<&Vec<Vec<UnitValue>>> = values.iter().collect();
    let summaries = with_workers(workers, || {
        summarize_units(
            &observables,
            times.len(),
            &refs,
            config.trace_renormalize,
            config.bootstrap_resamples,
            mix(&[config.seed, Domain::Bootstrap as u64, 1]),
        )
    })??;

    let n0 = replicas[0].header.n_diag_initial;
    let r = replicas.len() as u64;
    let replica_traces: Vec<Vec<f64>> = (0..times.len())
        .map(|k| replicas.iter().map(|rep| rep.frames[k].1.n_diag().re as f64 / n0 as f64).collect())
        .collect();
    let aggregate_trace = (0..times.len())
        .map(|k| replicas.iter().map(|rep| rep.frames[k].1.n_diag().re as f64).sum::<f64>() / (r * n0) as f64)
        .collect();
    Ok(AggregateOutcome {
        config,
        config_hash: hash,
        times,
        observables,
        replicas,
        summaries,
        replica_traces,
        aggregate_trace,
        n_diag_eff: r * n0,
    })
}

pub fn write_aggregate_outputs(out: &AggregateOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_observables(&dir.join("observables.csv"), &out.times, &out.observables, &out.summaries, &out.config_hash)?;
    let mut w = csv::Writer::from_path(dir.join("traces.csv"))?;
    w.write_record(["time_ns", "source", "sample", "replica", "seed", "trace", "config_hash"])?;
    for (k, &t) in out.times.iter().enumerate() {
        for (rep, tr) in out.replicas.iter().zip(&out.replica_traces[k]) {
            w.write_record([
                t.to_string(),
                "replica".to_string(),
                rep.header.sample.to_string(),
                rep.header.replica.to_string(),
                rep.header.seed.to_string(),
                tr.to_string(),
                out.config_hash.clone(),
            ])?;
        }
        w.write_record([
            t.to_string(),
            "aggregate".to_string(),
            String::new(),
            String::new(),
            String::new(),
            out.aggregate_trace[k].to_string(),
            out.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    let sources: Vec<String> = out.replicas.iter().map(|r| r.source.display().to_string()).collect();
    let meta = json!({
        "mode": "aggregate",
        "config": out.config,
        "config_hash": out.config_hash,
        "versions": { "rtqmc": env!("CARGO_PKG_VERSION"), "schema_version": out.config.schema_version },
        "details": { "replicas": out.replicas.len(), "n_diag_eff": out.n_diag_eff, "sources": sources },
    });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
