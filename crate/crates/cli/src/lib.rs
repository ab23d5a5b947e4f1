//! Experiment harness behind the `tempo-snn` binary.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

use std::path::{Path, PathBuf};

use serde::Serialize;
use tempo_snn::autograd::{run_gradcheck, GradcheckReport};
use tempo_snn::datasets::write_cache;
use tempo_snn::training::{evaluate, Checkpoint, Evaluation};
use tempo_snn::SnnError;

use crate::config::RunConfig;
use crate::experiment::{build_spec, generate_mtsxor, load_data, make_splits, run_trial, Trial};
use crate::report::{write_json, write_metrics_csv, Summary, METRICS_FILE, SUMMARY_FILE};

pub const BEST_CHECKPOINT: &str = "best.tsnn";
pub const LAST_CHECKPOINT: &str = "last.tsnn";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Gradcheck(_) => 3,
            _ => 2,
        }
    }
}

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial-{trial}"))
}

/// Trains `n_trials` seeds and, with an output directory, writes
/// `metrics.csv`, `summary.json` and per-trial checkpoints.
pub fn run_train(cfg: &RunConfig, out: Option<&Path>) -> Result<Summary, CliError> {
    Ok(run_train_trials(cfg, out)?.0)
}

pub fn run_train_trials(cfg: &RunConfig, out: Option<&Path>) -> Result<(Summary, Vec<Trial>), CliError> {
    cfg.validate()?;
    let trials = (0..cfg.n_trials)
        .map(|i| run_trial(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = Summary::from_trials(cfg, &trials);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(std::fs::File::create(dir.join(METRICS_FILE))?, &trials)?;
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        for t in &trials {
            let tdir = trial_dir(dir, t.index);
            std::fs::create_dir_all(&tdir)?;
            Checkpoint {
                spec: t.spec.clone(),
                params: t.outcome.best.clone(),
                optimizer: None,
            }
            .save(tdir.join(BEST_CHECKPOINT))?;
            Checkpoint {
                spec: t.spec.clone(),
                params: t.outcome.last.clone(),
                optimizer: Some(t.outcome.optimizer.clone()),
            }
            .save(tdir.join(LAST_CHECKPOINT))?;
        }
    }
    Ok((summary, trials))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub trial: usize,
    /// `test`, or `valid` when the task has no test set.
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// Evaluates a checkpoint on the data of trial `trial` of `cfg`.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, trial: usize) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = load_data(cfg, trial)?;
    let spec = build_spec(cfg, &data)?;
    if spec != ckpt.spec {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained for a different network than the configuration describes",
            checkpoint.display()
        )));
    }
    let splits = make_splits(cfg, data, trial)?;
    let (split, ds) = match (&splits.test, &splits.valid) {
        (Some(t), _) => ("test", t),
        (None, Some(v)) => ("valid", v),
        (None, None) => ("train", &splits.train),
    };
    let Evaluation {
        accuracy,
        loss,
        correct,
        total,
    } = evaluate(&spec, &ckpt.params, ds, cfg.loss())?;
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        trial,
        split: split.into(),
        accuracy,
        loss,
        correct,
        total,
    })
}

/// Runs the finite-difference comparison; a failed comparison is an error
/// carrying exit code 3.
pub fn run_gradcheck_cmd(cfg: &RunConfig) -> Result<GradcheckReport, CliError> {
    Ok(run_gradcheck(&cfg.gradcheck)?)
}

/// Writes the MTS-XOR train and test sets of trial 0 as caches.
pub fn run_gen_mtsxor(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.mtsxor.validate()?;
    let data = generate_mtsxor(cfg, 0)?;
    std::fs::create_dir_all(out)?;
    let mut written = vec![out.join("train.tsnc")];
    write_cache(&data.train, &written[0])?;
    if let Some(test) = &data.test {
        written.push(out.join("test.tsnc"));
        write_cache(test, &written[1])?;
    }
    Ok(written)
}
