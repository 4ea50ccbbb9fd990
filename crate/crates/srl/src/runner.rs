//! Parallel sweep execution with a per-cell timeout and an append-only
//! checkpoint.
//!
//! Cells are evaluated on a rayon pool and gathered by index, so the result
//! does not depend on the worker count or completion order. The checkpoint
//! holds one JSON header line naming the configuration digest, then one
//! JSON cell record per line. A torn last line from an interrupted run is
//! ignored on resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use srl_core::sweep::{evaluate_cell, CellOptions, CellRecord, GridSpec, SweepGrid};
use srl_core::PhysicalParams;

use crate::CliError;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "SRL_WORKERS";

/// Worker count: explicit value, then `SRL_WORKERS`, then the available
/// parallelism.
pub fn worker_count(explicit: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = explicit {
        return if n > 0 {
            Ok(n)
        } else {
            Err(CliError::Config("worker count must be positive".into()))
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    srl_checkpoint: u32,
    config_sha256: String,
    cells: usize,
}

pub struct SweepRequest<'a> {
    pub base: &'a PhysicalParams,
    pub spec: &'a GridSpec,
    pub options: &'a CellOptions,
    pub cell_budget: usize,
    pub timeout: Duration,
    pub workers: usize,
    pub checkpoint: Option<&'a Path>,
    /// Digest of the resolved configuration; a checkpoint written under a
    /// different one is refused.
    pub config_sha256: &'a str,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub grid: SweepGrid,
    pub resumed: usize,
    pub computed: usize,
}

fn read_checkpoint(path: &Path, req: &SweepRequest) -> Result<BTreeMap<(usize, usize), CellRecord>, CliError> {
    let mut done = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next().transpose()? else {
        return Ok(done);
    };
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| CliError::Config(format!("{}: not a sweep checkpoint ({e})", path.display())))?;
    if header.config_sha256 != req.config_sha256 || header.cells != req.spec.cells() {
        return Err(CliError::Config(format!(
            "{} was written for a different configuration",
            path.display()
        )));
    }
    let (rows, cols) = (req.spec.n_axis.count, req.spec.eta_axis_hz.count);
    for line in lines {
        let line = line?;
        // a partial trailing record is recomputed
        let Ok(rec) = serde_json::from_str::<CellRecord>(&line) else {
            continue;
        };
        if rec.i < rows && rec.j < cols {
            done.insert((rec.i, rec.j), rec);
        }
    }
    Ok(done)
}

fn open_checkpoint(path: &Path, req: &SweepRequest, fresh: bool) -> Result<File, CliError> {
    if fresh {
        let mut f = File::create(path)?;
        let header = Header {
            srl_checkpoint: 1,
            config_sha256: req.config_sha256.to_string(),
            cells: req.spec.cells(),
        };
        writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        f.sync_data()?;
        Ok(f)
    } else {
        let mut f = OpenOptions::new().append(true).open(path)?;
        // terminate a torn last line so that new records start cleanly
        writeln!(f)?;
        Ok(f)
    }
}

/// Evaluates every cell of the grid not already in the checkpoint.
pub fn run_sweep(req: &SweepRequest) -> Result<SweepOutcome, CliError> {
    req.spec.validate(req.cell_budget)?;
    let done = match req.checkpoint {
        Some(p) => read_checkpoint(p, req)?,
        None => BTreeMap::new(),
    };
    let resumed = done.len();
    let sink = match req.checkpoint {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
            Some(Mutex::new(open_checkpoint(p, req, fresh)?))
        }
        None => None,
    };
    let cols = req.spec.eta_axis_hz.count;
    let todo: Vec<(usize, usize)> = (0..req.spec.cells())
        .map(|k| (k / cols, k % cols))
        .filter(|ij| !done.contains_key(ij))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", req.workers)))?;
    let fresh: Vec<Result<CellRecord, CliError>> = pool.install(|| {
        todo.par_iter()
            .map(|&(i, j)| {
                let start = Instant::now();
                let timeout = req.timeout;
                let watchdog = move || start.elapsed() > timeout;
                let rec = evaluate_cell(req.base, req.spec, i, j, req.options, &watchdog);
                if let Some(sink) = &sink {
                    let line = serde_json::to_string(&rec).expect("cell record serializes");
                    let mut f = sink.lock().expect("checkpoint lock");
                    writeln!(f, "{line}")?;
                }
                Ok(rec)
            })
            .collect()
    });
    let computed = fresh.len();
    let mut cells: Vec<CellRecord> = done.into_values().collect();
    for r in fresh {
        cells.push(r?);
    }
    let grid = SweepGrid::assemble(req.base, req.spec, cells)?;
    Ok(SweepOutcome { grid, resumed, computed })
}
