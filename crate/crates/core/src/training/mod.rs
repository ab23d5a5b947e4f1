//! Losses, regularizers, the optimizer and the training loop.

mod checkpoint;
pub mod loss;
mod optimizer;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{backward_pass, BackwardOptions, Gradients, DEFAULT_SURROGATE_HALF_WIDTH};
use crate::datasets::{augment_freq_shift, SpikeDataset};
use crate::error::{Result, SnnError};
use crate::snn::{forward_pass, forward_pass_with, ForwardOptions, NetworkParams, NetworkSpec};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{LossKind, Target};
pub use optimizer::{adam_step, AdamConfig, AdamState, DecayMode, LrSchedule, StepOptions};

/// Default coefficient of the time-constant regularizer.
pub const DEFAULT_TAU_REG: f64 = 1e-5;

/// Inverted-dropout mask: each entry is `1 / (1 - p)` with probability
/// `1 - p`, else 0.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(SnnError::InvalidParameter(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSpec {
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l2: f64,
    pub tau_reg: f64,
    pub train_tau: bool,
    pub seed: u64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            epochs: 60,
            batch_size: 512,
            dropout: 0.1,
            l2: 0.0,
            tau_reg: DEFAULT_TAU_REG,
            train_tau: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimSpec,
    pub loss: LossKind,
    pub surrogate_half_width: f64,
    pub reset_grad: bool,
    /// Random channel shift of every training sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimSpec::default(),
            loss: LossKind::SumSoftmax,
            surrogate_half_width: DEFAULT_SURROGATE_HALF_WIDTH,
            reset_grad: true,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optim;
        if o.batch_size == 0 {
            return Err(SnnError::InvalidParameter("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.dropout) {
            return Err(SnnError::InvalidParameter(format!(
                "dropout must be in [0, 1), got {}",
                o.dropout
            )));
        }
        if !(o.schedule.lr0 > 0.0) || !(o.schedule.factor >= 0.0) {
            return Err(SnnError::InvalidParameter("learning rate must be positive".into()));
        }
        if !(o.l2 >= 0.0) || !(o.tau_reg >= 0.0) {
            return Err(SnnError::InvalidParameter("regularizer coefficients must be >= 0".into()));
        }
        if !(self.surrogate_half_width > 0.0) {
            return Err(SnnError::InvalidParameter("surrogate half-width must be positive".into()));
        }
        Ok(())
    }
}

/// Splits used by [`train`]. Without a validation split the final epoch is
/// kept as the best one.
#[derive(Clone, Debug)]
pub struct DataSplits {
    pub train: SpikeDataset,
    pub valid: Option<SpikeDataset>,
    pub test: Option<SpikeDataset>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub median: f64,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl TauSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median: quantile(&sorted, 0.5),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
        }
    }
}

/// Accuracy and mean loss over a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// One row per epoch; epoch 0 is the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate used during this epoch (0 for the initialization row).
    pub lr: f64,
    /// Running mean over the epoch's batches, with dropout and augmentation
    /// active. For epoch 0, a clean evaluation of the training split.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid: Option<Evaluation>,
    pub test: Option<Evaluation>,
    /// Per hidden layer; only with trainable time constants.
    pub tau: Option<Vec<TauSummary>>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

impl Metrics {
    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch]
    }

    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("initialization row")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub best: NetworkParams,
    pub last: NetworkParams,
    pub optimizer: AdamState,
    pub metrics: Metrics,
}

fn check_dataset(spec: &NetworkSpec, ds: &SpikeDataset, kind: LossKind) -> Result<()> {
    ds.validate()?;
    if ds.grid != spec.grid || ds.channels != spec.input_size {
        return Err(SnnError::InvalidParameter(format!(
            "dataset ({} steps of {} s, {} channels) does not match the network ({} steps of {} s, {} inputs)",
            ds.grid.steps, ds.grid.dt, ds.channels, spec.grid.steps, spec.grid.dt, spec.input_size
        )));
    }
    if ds.num_classes() > spec.output_size {
        return Err(SnnError::InvalidParameter(format!(
            "dataset has {} classes but the network only {} outputs",
            ds.num_classes(),
            spec.output_size
        )));
    }
    match (kind, ds.is_windowed()) {
        (LossKind::MaxOverWindows, false) => Err(SnnError::InvalidParameter(
            "max-over-windows loss needs a windowed dataset".into(),
        )),
        (LossKind::SumSoftmax | LossKind::DoubleSoftmax, true) => Err(SnnError::InvalidParameter(
            "whole-sequence losses need per-sample labels, got a windowed dataset".into(),
        )),
        _ => Ok(()),
    }
}

/// Accuracy and mean loss without dropout or augmentation. Samples are
/// scored in parallel and reduced in index order.
pub fn evaluate(spec: &NetworkSpec, params: &NetworkParams, data: &SpikeDataset, kind: LossKind) -> Result<Evaluation> {
    check_dataset(spec, data, kind)?;
    let per_sample: Vec<(f64, usize, usize)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (out, _) = forward_pass(spec, params, data.sample(i), false)?;
            let target = data.target(i);
            let (l, _) = loss::loss_and_grad(kind, &out, target)?;
            let (c, t) = loss::score(kind, &out, target);
            Ok((l, c, t))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let (mut correct, mut total) = (0, 0);
    for (l, c, t) in per_sample {
        loss += l;
        correct += c;
        total += t;
    }
    Ok(Evaluation {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        loss: if data.is_empty() { 0.0 } else { loss / data.len() as f64 },
        correct,
        total,
    })
}

fn tau_summaries(params: &NetworkParams) -> Vec<TauSummary> {
    params.hidden.iter().map(|l| TauSummary::of(&l.tau)).collect()
}

/// Per-sample RNG, independent of batch composition and thread scheduling.
fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | index as u64);
    rng
}

struct SampleResult {
    loss: f64,
    correct: usize,
    total: usize,
    grads: Gradients,
}

fn train_sample(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &SpikeDataset,
    index: usize,
    epoch: usize,
    config: &TrainConfig,
) -> Result<SampleResult> {
    let mut rng = sample_rng(config.optim.seed, epoch, index);
    let augmented;
    let input = if config.augment {
        augmented = augment_freq_shift(data.sample(index), data.channels, &mut rng);
        &augmented[..]
    } else {
        data.sample(index)
    };
    let masks = if config.optim.dropout > 0.0 {
        Some(
            spec.hidden
                .iter()
                .map(|h| dropout_mask(spec.grid.steps * h.size, config.optim.dropout, &mut rng))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let (out, tape) = forward_pass_with(
        spec,
        params,
        input,
        ForwardOptions {
            record: true,
            masks: masks.as_deref(),
            ..Default::default()
        },
    )?;
    let target = data.target(index);
    let (loss, dl_dout) = loss::loss_and_grad(config.loss, &out, target)?;
    let (correct, total) = loss::score(config.loss, &out, target);
    let options = BackwardOptions {
        train_tau: config.optim.train_tau,
        half_width: config.surrogate_half_width,
        reset_grad: config.reset_grad,
    };
    let grads = backward_pass(&tape.expect("recorded tape"), &dl_dout, &options)?;
    Ok(SampleResult {
        loss,
        correct,
        total,
        grads,
    })
}

/// Mini-batch training from `init`. Deterministic for a given seed: every
/// random draw comes from a stream keyed by (epoch, sample), and batch
/// gradients are summed in sample order.
pub fn train(spec: &NetworkSpec, init: NetworkParams, config: &TrainConfig, data: &DataSplits) -> Result<TrainOutcome> {
    spec.validate()?;
    init.validate(spec)?;
    config.validate()?;
    check_dataset(spec, &data.train, config.loss)?;
    for ds in data.valid.iter().chain(&data.test) {
        check_dataset(spec, ds, config.loss)?;
    }
    if data.train.is_empty() && config.optim.epochs > 0 {
        return Err(SnnError::InvalidParameter("empty training split".into()));
    }

    let start = Instant::now();
    let optim = &config.optim;
    let eval_splits = |params: &NetworkParams| -> Result<(Option<Evaluation>, Option<Evaluation>)> {
        let valid = data.valid.as_ref().map(|d| evaluate(spec, params, d, config.loss)).transpose()?;
        let test = data.test.as_ref().map(|d| evaluate(spec, params, d, config.loss)).transpose()?;
        Ok((valid, test))
    };
    let taus = |params: &NetworkParams| optim.train_tau.then(|| tau_summaries(params));

    let mut params = init;
    let mut state = AdamState::new(&params);
    let initial_train = evaluate(spec, &params, &data.train, config.loss)?;
    let (valid, test) = eval_splits(&params)?;
    let mut metrics = Metrics {
        epochs: vec![EpochMetrics {
            epoch: 0,
            lr: 0.0,
            train_loss: initial_train.loss,
            train_accuracy: initial_train.accuracy,
            valid,
            test,
            tau: taus(&params),
            wall_seconds: start.elapsed().as_secs_f64(),
        }],
        best_epoch: 0,
    };
    let mut best = params.clone();
    let mut best_valid = valid.map_or(f64::NEG_INFINITY, |v| v.accuracy);

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..optim.epochs {
        let lr = optim.schedule.lr(epoch, optim.epochs);
        order.shuffle(&mut sample_rng(optim.seed, epoch, usize::MAX >> 32));
        let mut loss_sum = 0.0;
        let (mut correct, mut total) = (0, 0);
        for (batch, chunk) in order.chunks(optim.batch_size).enumerate() {
            let results: Vec<SampleResult> = chunk
                .par_iter()
                .map(|&i| train_sample(spec, &params, &data.train, i, epoch, config))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    SnnError::NonFinite { .. } => SnnError::Diverged {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            let mut grads = Gradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            for r in &results {
                grads.accumulate(&r.grads);
                batch_loss += r.loss;
                correct += r.correct;
                total += r.total;
            }
            if !batch_loss.is_finite() {
                return Err(SnnError::Diverged {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / chunk.len() as f64);
            if optim.train_tau && optim.tau_reg > 0.0 {
                for (g, layer) in grads.hidden.iter_mut().zip(&params.hidden) {
                    for (gt, r) in g.tau.iter_mut().zip(loss::tau_regularizer_grad(&layer.tau)) {
                        *gt += optim.tau_reg * r;
                    }
                }
            }
            let step = StepOptions {
                lr,
                l2: optim.l2,
                train_tau: optim.train_tau,
            };
            adam_step(&mut params, &grads, &mut state, &optim.adam, &step, &spec.grid).map_err(|e| match e {
                SnnError::NonFinite { .. } => SnnError::Diverged {
                    epoch,
                    batch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
        }

        let (valid, test) = eval_splits(&params)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / data.train.len() as f64,
            train_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            valid,
            test,
            tau: taus(&params),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        // Without a validation split the latest epoch wins.
        let score = valid.map_or(f64::INFINITY, |v| v.accuracy);
        if score > best_valid || valid.is_none() {
            best_valid = score;
            best = params.clone();
            metrics.best_epoch = epoch + 1;
        }
        metrics.epochs.push(row);
    }

    Ok(TrainOutcome {
        best,
        last: params,
        optimizer: state,
        metrics,
    })
}

#[cfg(test)]
mod tests;
