//! Metrics CSV and JSON summaries.
//!
//! `metrics.csv` has one row per (trial, epoch, split):
//!
//! | column | content |
//! |---|---|
//! | `trial` | trial index |
//! | `seed` | training seed of the trial |
//! | `epoch` | 0 is the initialization |
//! | `split` | `train`, `valid` or `test` |
//! | `loss` | mean loss over the split |
//! | `accuracy` | fraction correct (windows for windowed tasks) |
//! | `lr` | learning rate used during the epoch |
//! | `tau_median_<l>` | median hidden time constant of layer `l`, seconds |
//!
//! Train rows of epochs >= 1 are running means with dropout active. Wall
//! time is left out so that identical runs write identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempo_snn::training::{EpochMetrics, TauSummary};

use crate::config::{RunConfig, Task};
use crate::experiment::Trial;
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const FIXED_COLUMNS: [&str; 7] = ["trial", "seed", "epoch", "split", "loss", "accuracy", "lr"];

pub fn metrics_header(layers: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain((1..=layers).map(|l| format!("tau_median_{l}")))
        .collect()
}

fn tau_medians(trial: &Trial, row: &EpochMetrics) -> Vec<f64> {
    match &row.tau {
        Some(t) => t.iter().map(|s| s.median).collect(),
        // Time constants are frozen; every epoch keeps the initial ones.
        None => trial.init.hidden.iter().map(|l| TauSummary::of(&l.tau).median).collect(),
    }
}

pub fn write_metrics_csv<W: Write>(out: W, trials: &[Trial]) -> Result<(), CliError> {
    let layers = trials.first().map_or(0, |t| t.spec.hidden.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header(layers))?;
    for trial in trials {
        for row in &trial.outcome.metrics.epochs {
            let taus: Vec<String> = tau_medians(trial, row).iter().map(f64::to_string).collect();
            let mut emit = |split: &str, loss: f64, accuracy: f64| -> Result<(), CliError> {
                let mut rec = vec![
                    trial.index.to_string(),
                    trial.seed.to_string(),
                    row.epoch.to_string(),
                    split.to_string(),
                    loss.to_string(),
                    accuracy.to_string(),
                    row.lr.to_string(),
                ];
                rec.extend(taus.iter().cloned());
                w.write_record(&rec)?;
                Ok(())
            };
            emit("train", row.train_loss, row.train_accuracy)?;
            if let Some(v) = row.valid {
                emit("valid", v.loss, v.accuracy)?;
            }
            if let Some(t) = row.test {
                emit("test", t.loss, t.accuracy)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Median and quartiles across trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = TauSummary::of(values);
        Some(Self {
            median: s.median,
            q25: s.q25,
            q75: s.q75,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Reported epoch of one trial: the best-validation epoch, else the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub epoch: usize,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    /// Per hidden layer, at the reported epoch.
    pub tau_median: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub n_trials: usize,
    pub epochs: usize,
    pub trials: Vec<TrialSummary>,
    pub train_accuracy: Spread,
    pub valid_accuracy: Option<Spread>,
    pub test_accuracy: Option<Spread>,
    pub tau_median: Vec<Spread>,
}

impl Summary {
    pub fn from_trials(cfg: &RunConfig, trials: &[Trial]) -> Self {
        let rows: Vec<TrialSummary> = trials
            .iter()
            .map(|t| {
                let m = t.outcome.metrics.best();
                TrialSummary {
                    trial: t.index,
                    seed: t.seed,
                    epoch: m.epoch,
                    train_accuracy: m.train_accuracy,
                    valid_accuracy: m.valid.map(|v| v.accuracy),
                    test_accuracy: m.test.map(|v| v.accuracy),
                    test_loss: m.test.map(|v| v.loss),
                    tau_median: tau_medians(t, m),
                }
            })
            .collect();
        let collect = |f: &dyn Fn(&TrialSummary) -> Option<f64>| -> Option<Spread> {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            Spread::of(&v)
        };
        let layers = rows.first().map_or(0, |r| r.tau_median.len());
        Summary {
            task: cfg.task,
            n_trials: trials.len(),
            epochs: cfg.optim.epochs,
            train_accuracy: collect(&|r| Some(r.train_accuracy)).expect("at least one trial"),
            valid_accuracy: collect(&|r| r.valid_accuracy),
            test_accuracy: collect(&|r| r.test_accuracy),
            tau_median: (0..layers)
                .map(|l| collect(&|r| Some(r.tau_median[l])).expect("at least one trial"))
                .collect(),
            trials: rows,
        }
    }

    /// Headline accuracy: test, else validation, else train.
    pub fn accuracy(&self) -> Spread {
        self.test_accuracy.or(self.valid_accuracy).unwrap_or(self.train_accuracy)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
