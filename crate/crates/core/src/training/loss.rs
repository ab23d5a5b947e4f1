//! Classification losses over readout voltage traces.

use serde::{Deserialize, Serialize};

use crate::datasets::Window;
use crate::error::{Result, SnnError};
use crate::snn::Trace;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Time-averaged per-step cross-entropy.
    #[default]
    SumSoftmax,
    /// Per-step softmax, summed over time, then a second softmax and one
    /// cross-entropy.
    DoubleSoftmax,
    /// Cross-entropy of the per-neuron maximum over each labelled window,
    /// averaged over windows.
    MaxOverWindows,
}

/// What a sample is scored against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Class(u32),
    Windows(&'a [Window]),
}

/// Checks that windows are non-empty, inside `[0, steps)` and disjoint.
pub fn validate_windows(windows: &[Window], steps: usize, classes: usize) -> Result<()> {
    if windows.is_empty() {
        return Err(SnnError::InvalidParameter("empty window list".into()));
    }
    let mut sorted: Vec<&Window> = windows.iter().collect();
    sorted.sort_by_key(|w| w.start);
    let mut prev_end = 0;
    for (i, w) in sorted.iter().enumerate() {
        if w.start >= w.end || w.end > steps {
            return Err(SnnError::InvalidParameter(format!(
                "window [{}, {}) is empty or outside [0, {steps})",
                w.start, w.end
            )));
        }
        if i > 0 && w.start < prev_end {
            return Err(SnnError::InvalidParameter(format!(
                "window [{}, {}) overlaps its predecessor",
                w.start, w.end
            )));
        }
        if w.label as usize >= classes {
            return Err(SnnError::InvalidParameter(format!(
                "window label {} outside {classes} classes",
                w.label
            )));
        }
        prev_end = w.end;
    }
    Ok(())
}

/// Stable `log softmax(row)[y]` and the softmax of `row` (written into `probs`).
fn log_softmax_at(row: &[f64], y: usize, probs: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &v) in probs.iter_mut().zip(row) {
        *p = (v - max).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
    row[y] - max - z.ln()
}

fn check_finite(out: &Trace) -> Result<()> {
    match out.data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(SnnError::NonFinite {
            layer: usize::MAX,
            step: i / out.width.max(1),
            what: "readout voltage",
        }),
    }
}

fn check_class(y: usize, classes: usize) -> Result<()> {
    if y < classes {
        Ok(())
    } else {
        Err(SnnError::InvalidParameter(format!(
            "label {y} outside {classes} classes"
        )))
    }
}

/// `-(1/T) sum_t log softmax(out[t])[y]`.
pub fn loss_sum(out: &Trace, y: usize) -> Result<f64> {
    loss_sum_grad(out, y).map(|(l, _)| l)
}

pub fn loss_sum_grad(out: &Trace, y: usize) -> Result<(f64, Vec<f64>)> {
    check_finite(out)?;
    check_class(y, out.width)?;
    let steps = out.steps as f64;
    let mut grad = vec![0.0; out.data.len()];
    let mut loss = 0.0;
    for t in 0..out.steps {
        let g = &mut grad[t * out.width..(t + 1) * out.width];
        loss -= log_softmax_at(out.row(t), y, g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= steps);
    }
    Ok((loss / steps, grad))
}

/// `-log softmax(sum_t softmax(out[t]))[y]`.
pub fn loss_double_softmax_grad(out: &Trace, y: usize) -> Result<(f64, Vec<f64>)> {
    check_finite(out)?;
    check_class(y, out.width)?;
    let n = out.width;
    let mut probs = vec![0.0; out.data.len()];
    let mut summed = vec![0.0; n];
    for t in 0..out.steps {
        let p = &mut probs[t * n..(t + 1) * n];
        log_softmax_at(out.row(t), 0, p);
        summed.iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
    }
    let mut q = vec![0.0; n];
    let loss = -log_softmax_at(&summed, y, &mut q);
    q[y] -= 1.0;
    // Softmax Jacobian: g_out = p ⊙ (g_z - <p, g_z>).
    let mut grad = vec![0.0; out.data.len()];
    for t in 0..out.steps {
        let p = &probs[t * n..(t + 1) * n];
        let dot: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        for k in 0..n {
            grad[t * n + k] = p[k] * (q[k] - dot);
        }
    }
    Ok((loss, grad))
}

/// Per-neuron maximum of `out` over `window` and the step that attains it
/// (earliest on ties).
fn window_max(out: &Trace, window: &Window) -> (Vec<f64>, Vec<usize>) {
    let mut best = vec![f64::NEG_INFINITY; out.width];
    let mut at = vec![window.start; out.width];
    for t in window.start..window.end {
        for (n, &v) in out.row(t).iter().enumerate() {
            if v > best[n] {
                best[n] = v;
                at[n] = t;
            }
        }
    }
    (best, at)
}

pub fn loss_max_windows(out: &Trace, windows: &[Window]) -> Result<f64> {
    loss_max_windows_grad(out, windows).map(|(l, _)| l)
}

pub fn loss_max_windows_grad(out: &Trace, windows: &[Window]) -> Result<(f64, Vec<f64>)> {
    check_finite(out)?;
    validate_windows(windows, out.steps, out.width)?;
    let count = windows.len() as f64;
    let mut grad = vec![0.0; out.data.len()];
    let mut probs = vec![0.0; out.width];
    let mut loss = 0.0;
    for w in windows {
        let (maxes, at) = window_max(out, w);
        let y = w.label as usize;
        loss -= log_softmax_at(&maxes, y, &mut probs);
        for n in 0..out.width {
            let g = probs[n] - if n == y { 1.0 } else { 0.0 };
            grad[at[n] * out.width + n] += g / count;
        }
    }
    Ok((loss / count, grad))
}

/// Loss value and its gradient with respect to every readout voltage.
pub fn loss_and_grad(kind: LossKind, out: &Trace, target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::SumSoftmax, Target::Class(y)) => loss_sum_grad(out, y as usize),
        (LossKind::DoubleSoftmax, Target::Class(y)) => loss_double_softmax_grad(out, y as usize),
        (LossKind::MaxOverWindows, Target::Windows(w)) => loss_max_windows_grad(out, w),
        (kind, _) => Err(SnnError::InvalidParameter(format!(
            "loss {kind:?} does not match the dataset's label mode"
        ))),
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of a whole-sequence target.
pub fn predict_class(kind: LossKind, out: &Trace) -> usize {
    let n = out.width;
    let mut score = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for t in 0..out.steps {
        let row = out.row(t);
        match kind {
            LossKind::DoubleSoftmax => {
                log_softmax_at(row, 0, &mut probs);
                score.iter_mut().zip(&probs).for_each(|(s, p)| *s += p);
            }
            _ => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                score.iter_mut().zip(row).for_each(|(s, v)| *s += v - max - z);
            }
        }
    }
    argmax(&score)
}

/// Predicted class per window: argmax of the windowed maximum voltage.
pub fn predict_windows(out: &Trace, windows: &[Window]) -> Vec<usize> {
    windows.iter().map(|w| argmax(&window_max(out, w).0)).collect()
}

/// `(correct, total)` decisions for one sample.
pub fn score(kind: LossKind, out: &Trace, target: Target<'_>) -> (usize, usize) {
    match target {
        Target::Class(y) => ((predict_class(kind, out) == y as usize) as usize, 1),
        Target::Windows(windows) => {
            let correct = predict_windows(out, windows)
                .iter()
                .zip(windows)
                .filter(|(p, w)| **p == w.label as usize)
                .count();
            (correct, windows.len())
        }
    }
}

/// Smallest gap, over windows and neurons, between the maximum and the
/// runner-up value inside the window. Finite differences of the windowed
/// maximum are only valid when this is larger than the perturbation.
pub fn window_argmax_margin(out: &Trace, windows: &[Window]) -> f64 {
    let mut margin = f64::INFINITY;
    for w in windows {
        for n in 0..out.width {
            let mut first = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for t in w.start..w.end {
                let v = out.get(t, n);
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            if second.is_finite() {
                margin = margin.min(first - second);
            }
        }
    }
    margin
}

/// `sum_l || tau_l - mean(tau_l) ||^2`.
pub fn tau_regularizer<'a, I>(layers: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    layers
        .into_iter()
        .filter(|tau| !tau.is_empty())
        .map(|tau| {
            let mean = tau.iter().sum::<f64>() / tau.len() as f64;
            tau.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Gradient of [`tau_regularizer`] for one layer: `2 (tau - mean)`.
pub fn tau_regularizer_grad(tau: &[f64]) -> Vec<f64> {
    if tau.is_empty() {
        return Vec::new();
    }
    let mean = tau.iter().sum::<f64>() / tau.len() as f64;
    tau.iter().map(|v| 2.0 * (v - mean)).collect()
}
