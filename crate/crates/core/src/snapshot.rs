//! Plain-text population snapshots.
//!
//! A file holds one or more blocks:
//!
//! ```text
//! snapshot 1 n=4 n_diag_initial=100000 t=10 sample=0 replica=2 seed=17 config_hash=3fa2…
//! 0 0 99873 0
//! 0 5 -12 3
//! end
//! ```
//!
//! Rows are `row col re im` of the net Gaussian-integer count, sorted by
//! `(row, col)`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::liouvillian::Location;
use crate::walkers::{GaussInt, Population};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub n: usize,
    pub n_diag_initial: u64,
    pub t: f64,
    pub sample: u64,
    pub replica: u64,
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_snapshot<W: Write>(w: &mut W, header: &SnapshotHeader, pop: &Population) -> Result<()> {
    writeln!(
        w,
        "snapshot {SNAPSHOT_VERSION} n={} n_diag_initial={} t={} sample={} replica={} seed={} config_hash={}",
        header.n, header.n_diag_initial, header.t, header.sample, header.replica, header.seed, header.config_hash
    )?;
    for (l, g) in pop.entries() {
        writeln!(w, "{} {} {} {}", l.row, l.col, g.re, g.im)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Snapshot(format!("line {line}: {msg}"))
}

fn parse_header(line_no: usize, line: &str) -> Result<SnapshotHeader> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("snapshot") {
        return Err(bad(line_no, "expected a snapshot header"));
    }
    let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line_no, "missing version"))?;
    if version != SNAPSHOT_VERSION {
        return Err(bad(line_no, format!("unsupported snapshot version {version}")));
    }
    let mut h = SnapshotHeader {
        n: usize::MAX,
        n_diag_initial: 0,
        t: f64::NAN,
        sample: 0,
        replica: 0,
        seed: 0,
        config_hash: String::new(),
    };
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(line_no, format!("malformed field {kv:?}")))?;
        let num_err = |_| bad(line_no, format!("bad value for {k}: {v:?}"));
        match k {
            "n" => h.n = v.parse().map_err(num_err)?,
            "n_diag_initial" => h.n_diag_initial = v.parse().map_err(num_err)?,
            "t" => h.t = v.parse().map_err(|_| bad(line_no, format!("bad time {v:?}")))?,
            "sample" => h.sample = v.parse().map_err(num_err)?,
            "replica" => h.replica = v.parse().map_err(num_err)?,
            "seed" => h.seed = v.parse().map_err(num_err)?,
            "config_hash" => h.config_hash = v.to_string(),
            _ => return Err(bad(line_no, format!("unknown field {k}"))),
        }
    }
    if h.n == usize::MAX || h.n_diag_initial == 0 || h.t.is_nan() {
        return Err(bad(line_no, "header must set n, n_diag_initial and t"));
    }
    Ok(h)
}

pub fn read_snapshots<R: BufRead>(r: R) -> Result<Vec<(SnapshotHeader, Population)>> {
    let mut out = Vec::new();
    let mut current: Option<(SnapshotHeader, Vec<(Location, GaussInt)>)> = None;
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match current.take() {
            None => current = Some((parse_header(line_no, line)?, Vec::new())),
            Some((h, rows)) if line == "end" => {
                out.push((h.clone(), Population::from_entries(h.n, h.n_diag_initial, rows)?));
            }
            Some((h, mut rows)) => {
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(bad(line_no, "expected `row col re im`"));
                }
                let p = |s: &str| s.parse::<i64>().map_err(|_| bad(line_no, format!("bad integer {s:?}")));
                let row: u64 = f[0].parse().map_err(|_| bad(line_no, "bad row"))?;
                let col: u64 = f[1].parse().map_err(|_| bad(line_no, "bad column"))?;
                rows.push((Location::new(row, col), GaussInt::new(p(f[2])?, p(f[3])?)));
                current = Some((h, rows));
            }
        }
    }
    if current.is_some() {
        return Err(Error::Snapshot("unterminated snapshot block".into()));
    }
    Ok(out)
}
