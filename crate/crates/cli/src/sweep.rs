//! Cross-product sweeps over one or two configuration keys.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SweepConfig};
use crate::report::{Spread, Summary};
use crate::{run_train, CliError};

pub const SWEEP_FILE: &str = "sweep.csv";

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub overrides: Vec<(String, toml::Value)>,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("cell-{:03}", self.index)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub summary: Summary,
    /// Median accuracy minus the baseline median.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub keys: Vec<String>,
    pub cells: Vec<CellResult>,
    pub baseline: Option<Spread>,
}

pub fn expand(sweep: &SweepConfig) -> Result<Vec<Cell>, CliError> {
    if sweep.axes.is_empty() || sweep.axes.len() > 2 {
        return Err(CliError::Config(format!(
            "a sweep needs one or two axes, got {}",
            sweep.axes.len()
        )));
    }
    let mut grid: Vec<Vec<(String, toml::Value)>> = vec![vec![]];
    for axis in &sweep.axes {
        if axis.values.is_empty() {
            return Err(CliError::Config(format!("sweep axis '{}' has no values", axis.key)));
        }
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.key.clone(), v.clone()));
                    cell
                })
            })
            .collect();
    }
    Ok(grid
        .into_iter()
        .enumerate()
        .map(|(index, overrides)| Cell { index, overrides })
        .collect())
}

fn same_value(a: &toml::Value, b: &toml::Value) -> bool {
    match (a.as_float().or(a.as_integer().map(|i| i as f64)), b.as_float().or(b.as_integer().map(|i| i as f64))) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Runs every cell (up to `jobs` at a time inside the current rayon pool)
/// and writes `sweep.csv` plus one output directory per cell.
pub fn run_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepReport, CliError> {
    let cells = expand(&cfg.sweep)?;
    let keys: Vec<String> = cfg.sweep.axes.iter().map(|a| a.key.clone()).collect();
    // Validate every cell before spending time on any of them.
    let configs = cells
        .iter()
        .map(|c| {
            let cell_cfg = cfg.with_overrides(&c.overrides)?;
            cell_cfg.validate()?;
            Ok(cell_cfg)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let cell_dir = |name: String| out.map(|o| o.join(name));

    let baseline_overrides: Option<Vec<(String, toml::Value)>> = cfg
        .sweep
        .baseline
        .as_ref()
        .map(|t| t.iter().map(|(k, v)| (k.clone(), v.clone())).collect());
    let baseline_cell = baseline_overrides.as_ref().and_then(|base| {
        cells.iter().position(|c| {
            base.iter().all(|(k, v)| {
                c.overrides.iter().any(|(ck, cv)| ck == k && same_value(cv, v))
            }) && base.len() == c.overrides.len()
        })
    });

    let summaries: Vec<Summary> = cells
        .par_iter()
        .zip(&configs)
        .map(|(cell, cell_cfg)| run_train(cell_cfg, cell_dir(cell.dir_name()).as_deref()))
        .collect::<Result<_, CliError>>()?;

    let baseline = match (&baseline_overrides, baseline_cell) {
        (_, Some(i)) => Some(summaries[i].accuracy()),
        (Some(base), None) => {
            let base_cfg = cfg.with_overrides(base)?;
            base_cfg.validate()?;
            Some(run_train(&base_cfg, cell_dir("baseline".into()).as_deref())?.accuracy())
        }
        (None, None) => None,
    };

    let report = SweepReport {
        keys,
        cells: cells
            .into_iter()
            .zip(summaries)
            .map(|(cell, summary)| CellResult {
                delta: baseline.map(|b| summary.accuracy().median - b.median),
                cell,
                summary,
            })
            .collect(),
        baseline,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_sweep_csv(&dir.join(SWEEP_FILE), &report)?;
    }
    Ok(report)
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_sweep_csv(path: &PathBuf, report: &SweepReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = report.keys.clone();
    header.extend(
        ["cell", "n_trials", "accuracy_median", "accuracy_q25", "accuracy_q75", "delta_median"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for r in &report.cells {
        let acc = r.summary.accuracy();
        let mut rec: Vec<String> = r.cell.overrides.iter().map(|(_, v)| value_text(v)).collect();
        rec.extend([
            r.cell.dir_name(),
            r.summary.n_trials.to_string(),
            acc.median.to_string(),
            acc.q25.to_string(),
            acc.q75.to_string(),
            r.delta.map_or(String::new(), |d| d.to_string()),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
