//! Cartesian hyperparameter search with a resumable journal.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, RunOutcome};
use crate::config::{GridAxis, RunConfig};
use crate::error::{Error, Result};
use crate::graph::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    /// Stable identifier: the overrides as `key=value` joined by `;`.
    pub key: String,
    pub overrides: Vec<(String, String)>,
    pub config: RunConfig,
}

pub fn expand_grid(base: &RunConfig, axes: &[GridAxis]) -> Result<Vec<GridCell>> {
    let mut cells = vec![GridCell {
        key: String::new(),
        overrides: Vec::new(),
        config: base.clone(),
    }];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for v in &axis.values {
                let mut c = cell.clone();
                c.config.set_qualified(&axis.key, v)?;
                c.overrides.push((axis.key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    for c in &mut cells {
        c.key = if c.overrides.is_empty() {
            "base".into()
        } else {
            c.overrides
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";")
        };
    }
    Ok(cells)
}

/// One (cell, seed) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: String,
    pub fields: Vec<(String, String)>,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs_run: usize,
    pub wall_s: f64,
    pub params: usize,
    pub energy_mj: f64,
    pub firing_rate_mean: f64,
}

impl RunRow {
    /// Result row of `out`, with the config's seed field set to `out.seed`.
    pub fn from_outcome(
        cell: &str,
        config: &RunConfig,
        out: &RunOutcome,
        report_wall_time: bool,
    ) -> Self {
        let mut fields: Vec<(String, String)> = config
            .fields()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if let Some(f) = fields.iter_mut().find(|(k, _)| k == "seed") {
            f.1 = out.seed.to_string();
        }
        RunRow {
            cell: cell.to_string(),
            fields,
            seed: out.seed,
            val_acc: out.report.best_val_acc,
            test_acc: out.report.test_acc,
            epochs_run: out.report.epochs_run,
            wall_s: if report_wall_time {
                out.report.wall_s
            } else {
                0.0
            },
            params: out.params,
            energy_mj: out.energy.e_snn_mj,
            firing_rate_mean: out.firing_rate_mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: String,
    pub runs: usize,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub energy_mean: f64,
    pub params: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GridOptions {
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    /// Completed jobs are appended here and skipped on rerun.
    pub journal: Option<PathBuf>,
    pub report_wall_time: bool,
}

pub struct GridOutcome {
    /// In cell-then-seed order.
    pub rows: Vec<RunRow>,
    /// Ranked by mean val accuracy, best first.
    pub summary: Vec<CellSummary>,
    /// Jobs served from the journal rather than run.
    pub resumed: usize,
}

fn job_key(cell: &str, seed: u64) -> String {
    format!("{cell}|seed={seed}")
}

/// Writes `content` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_journal(path: &Path) -> Result<HashMap<String, RunRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut done = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (key, json) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `key<TAB>result`".into()))?;
        let row: RunRow = serde_json::from_str(json).map_err(|e| parse_err(e.to_string()))?;
        done.insert(key.to_string(), row);
    }
    Ok(done)
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

pub fn summarize(cells: &[GridCell], rows: &[RunRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = cells
        .iter()
        .map(|c| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.cell == c.key).collect();
            let (val_mean, val_std) = mean_std(&mine.iter().map(|r| r.val_acc).collect::<Vec<_>>());
            let (test_mean, test_std) =
                mean_std(&mine.iter().map(|r| r.test_acc).collect::<Vec<_>>());
            let (energy_mean, _) = mean_std(&mine.iter().map(|r| r.energy_mj).collect::<Vec<_>>());
            CellSummary {
                cell: c.key.clone(),
                runs: mine.len(),
                val_mean,
                val_std,
                test_mean,
                test_std,
                energy_mean,
                params: mine.first().map_or(0, |r| r.params),
            }
        })
        .collect();
    out.sort_by(|a, b| b.val_mean.total_cmp(&a.val_mean));
    out
}

/// Runs every cell once per seed on a worker pool.
pub fn grid_search(
    cells: &[GridCell],
    data: &Dataset,
    seeds: &[u64],
    opts: &GridOptions,
) -> Result<GridOutcome> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid(
            "grid search needs at least one cell and one seed".into(),
        ));
    }
    let done = match &opts.journal {
        Some(p) => load_journal(p)?,
        None => HashMap::new(),
    };
    let journal_lock = Mutex::new(());
    let jobs: Vec<(&GridCell, u64)> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let resumed = jobs
        .iter()
        .filter(|(c, s)| done.contains_key(&job_key(&c.key, *s)))
        .count();

    let run_job = |&(cell, seed): &(&GridCell, u64)| -> Result<RunRow> {
        let key = job_key(&cell.key, seed);
        if let Some(row) = done.get(&key) {
            return Ok(row.clone());
        }
        let out = run_experiment(&cell.config, data, seed)?;
        let row = RunRow::from_outcome(&cell.key, &cell.config, &out, opts.report_wall_time);
        if let Some(p) = &opts.journal {
            let _guard = journal_lock.lock().unwrap_or_else(|e| e.into_inner());
            let mut text = match fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
                Err(e) => return Err(Error::io(p, e)),
            };
            let json = serde_json::to_string(&row).expect("row serializes");
            let _ = writeln!(text, "{key}\t{json}");
            write_atomic(p, &text)?;
        }
        Ok(row)
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if opts.workers > 0 {
        builder = builder.num_threads(opts.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRow>> = pool.install(|| jobs.par_iter().map(run_job).collect());
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(cells, &rows);
    Ok(GridOutcome {
        rows,
        summary,
        resumed,
    })
}

pub fn rows_csv(rows: &[RunRow]) -> String {
    let mut s = String::from("cell");
    if let Some(r) = rows.first() {
        for (k, _) in &r.fields {
            let _ = write!(s, ",{k}");
        }
    }
    s.push_str(",seed,val_acc,test_acc,epochs_run,wall_s,params,energy_mJ,firing_rate_mean\n");
    for r in rows {
        s.push_str(&r.cell);
        for (_, v) in &r.fields {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(
            s,
            ",{},{},{},{},{},{},{},{}",
            r.seed,
            r.val_acc,
            r.test_acc,
            r.epochs_run,
            r.wall_s,
            r.params,
            r.energy_mj,
            r.firing_rate_mean
        );
    }
    s
}

pub fn summary_csv(summary: &[CellSummary]) -> String {
    let mut s =
        String::from("rank,cell,runs,val_mean,val_std,test_mean,test_std,energy_mJ_mean,params\n");
    for (i, c) in summary.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            i + 1,
            c.cell,
            c.runs,
            c.val_mean,
            c.val_std,
            c.test_mean,
            c.test_std,
            c.energy_mean,
            c.params
        );
    }
    s
}

pub fn write_rows_csv(rows: &[RunRow], path: &Path) -> Result<()> {
    write_atomic(path, &rows_csv(rows))
}

pub fn write_summary_csv(summary: &[CellSummary], path: &Path) -> Result<()> {
    write_atomic(path, &summary_csv(summary))
}
