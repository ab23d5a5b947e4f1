//! Backpropagation through time over a recorded forward trajectory.
//!
//! The Heaviside derivative of the spike function is replaced by a box of
//! half-width `beta` centred on the threshold. The same surrogate carries the
//! gradient through the soft-reset term unless the reset is detached.
//!
//! Per hidden layer, going backwards in time:
//!
//! ```text
//! gs[t]  = dL/ds[t] from the layer above  - u_th * gu[t+1]      (reset path)
//! gu[t]  = box(u[t]) * gs[t] + a * gu[t+1]
//! gc[t]  = (1 - a) * gu[t]
//! ga    += gu[t] * (u[t-1] - c[t])
//! dL/dtau = ga * (dt / tau^2) * a
//! ```

mod fd;
pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SnnError};
use crate::snn::{LayerKind, LayerParams, NetworkParams, Tape, U_TH};

pub use fd::finite_difference_gradient;
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};

/// Default half-width of the box surrogate.
pub const DEFAULT_SURROGATE_HALF_WIDTH: f64 = 0.5;

/// Box surrogate for the derivative of `H(u - u_th)`: `1 / (2 beta)` inside
/// the open interval `|u - u_th| < beta`, zero outside. Integrates to one.
#[inline]
pub fn surrogate_box(u: f64, u_th: f64, beta: f64) -> f64 {
    if beta > 0.0 && (u - u_th).abs() < beta {
        0.5 / beta
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardOptions {
    /// Compute gradients with respect to the time constants.
    pub train_tau: bool,
    /// Half-width of the box surrogate.
    pub half_width: f64,
    /// Propagate the gradient through the soft-reset term. When `false` the
    /// reset is treated as a constant ("no-reset-grad").
    pub reset_grad: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            train_tau: false,
            half_width: DEFAULT_SURROGATE_HALF_WIDTH,
            reset_grad: true,
        }
    }
}

/// Gradient of one layer; shapes mirror [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub tau: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &LayerParams) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            tau: vec![0.0; layer.tau.len()],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.tau)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.tau.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGrad>,
    pub readout: LayerGrad,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            hidden: params.hidden.iter().map(LayerGrad::zeros_like).collect(),
            readout: LayerGrad::zeros_like(&params.readout),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        self.hidden.iter().chain(std::iter::once(&self.readout))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.readout))
    }

    /// `self += other`, element by element in a fixed order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            for (x, y) in a.values_mut().zip(b.values()) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.layers_mut() {
            layer.values_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers()
            .flat_map(LayerGrad::values)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zeroes every time-constant entry.
    pub fn clear_tau(&mut self) {
        for layer in self.layers_mut() {
            layer.tau.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Reverse-mode gradient of a scalar loss given `dl_dout`, the gradient of
/// the loss with respect to the readout voltages (row-major
/// `steps × outputs`).
pub fn backward_pass(tape: &Tape<'_>, dl_dout: &[f64], options: &BackwardOptions) -> Result<Gradients> {
    let spec = tape.spec;
    let params = tape.params;
    let steps = spec.grid.steps;
    let dt = spec.grid.dt;
    let outputs = params.readout.neurons;
    check_len("loss gradient", steps * outputs, dl_dout.len())?;
    if let Some(t) = (0..steps).find(|&t| {
        dl_dout[t * outputs..(t + 1) * outputs]
            .iter()
            .any(|v| !v.is_finite())
    }) {
        return Err(SnnError::NonFinite {
            layer: params.hidden.len(),
            step: t,
            what: "loss gradient",
        });
    }

    let mut grads = Gradients::zeros_like(params);
    let readout_index = params.hidden.len();

    // Readout: v[t] = a v[t-1] + (1 - a) c[t].
    let readout = &params.readout;
    let alpha = readout.alphas(&spec.grid)?;
    let trace = &tape.readout;
    let mut gc = vec![0.0; steps * outputs];
    let mut gv_next = vec![0.0; outputs];
    let mut galpha = vec![0.0; outputs];
    for t in (0..steps).rev() {
        for n in 0..outputs {
            let i = t * outputs + n;
            let gv = dl_dout[i] + alpha[n] * gv_next[n];
            gc[i] = (1.0 - alpha[n]) * gv;
            let prev = if t == 0 { 0.0 } else { trace.voltages[i - outputs] };
            galpha[n] += gv * (prev - trace.currents[i]);
            gv_next[n] = gv;
        }
        check_finite(&gv_next, readout_index, t)?;
    }
    let mut g_upstream = vec![0.0; steps * readout.inputs];
    current_backward(
        readout,
        &trace.inputs,
        &gc,
        steps,
        &mut grads.readout.weights,
        Some(&mut g_upstream),
    );
    if options.train_tau {
        tau_gradient(&mut grads.readout.tau, &galpha, &alpha, &readout.tau, dt);
    }

    // Hidden layers, top to bottom. `g_upstream` holds dL/d(masked spikes).
    for l in (0..params.hidden.len()).rev() {
        let layer = &params.hidden[l];
        let trace = &tape.hidden[l];
        let n_out = layer.neurons;
        let alpha = layer.alphas(&spec.grid)?;

        let mut gs = g_upstream;
        if let Some(mask) = &trace.mask {
            gs.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }

        let mut gc = vec![0.0; steps * n_out];
        let mut gu_next = vec![0.0; n_out];
        let mut galpha = vec![0.0; n_out];
        for t in (0..steps).rev() {
            for n in 0..n_out {
                let i = t * n_out + n;
                let mut g_spike = gs[i];
                if options.reset_grad {
                    g_spike -= U_TH * gu_next[n];
                }
                let u = trace.voltages[i];
                let gu = surrogate_box(u, U_TH, options.half_width) * g_spike + alpha[n] * gu_next[n];
                gc[i] = (1.0 - alpha[n]) * gu;
                let prev = if t == 0 { 0.0 } else { trace.voltages[i - n_out] };
                galpha[n] += gu * (prev - trace.currents[i]);
                gu_next[n] = gu;
            }
            check_finite(&gu_next, l, t)?;
        }

        let need_input_grad = l > 0;
        let mut g_in = if need_input_grad {
            vec![0.0; steps * layer.inputs]
        } else {
            Vec::new()
        };
        current_backward(
            layer,
            &trace.inputs,
            &gc,
            steps,
            &mut grads.hidden[l].weights,
            need_input_grad.then_some(&mut g_in),
        );
        if options.train_tau {
            tau_gradient(&mut grads.hidden[l].tau, &galpha, &alpha, &layer.tau, dt);
        }
        g_upstream = g_in;
    }

    Ok(grads)
}

fn check_finite(values: &[f64], layer: usize, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SnnError::NonFinite {
            layer,
            step,
            what: "membrane gradient",
        })
    }
}

/// `a = exp(-dt / tau)`  =>  `da/dtau = (dt / tau^2) a`.
fn tau_gradient(out: &mut [f64], galpha: &[f64], alpha: &[f64], tau: &[f64], dt: f64) {
    for (((g, &ga), &a), &tau) in out.iter_mut().zip(galpha).zip(alpha).zip(tau) {
        *g = ga * dt / (tau * tau) * a;
    }
}

/// Backward of the input map. Accumulates the weight gradient and, when
/// requested, the gradient with respect to the layer inputs.
fn current_backward(
    layer: &LayerParams,
    inputs: &[f64],
    gc: &[f64],
    steps: usize,
    gw: &mut [f64],
    mut g_in: Option<&mut Vec<f64>>,
) {
    let m_in = layer.inputs;
    let n_out = layer.neurons;
    let (taps, dilation) = match layer.kind {
        LayerKind::Dense => (1, 1),
        LayerKind::Conv { kernel, dilation } => (kernel, dilation),
    };
    let tap_len = m_in * n_out;
    for t in 0..steps {
        let gct = &gc[t * n_out..(t + 1) * n_out];
        if gct.iter().all(|&g| g == 0.0) {
            continue;
        }
        for k in 0..taps {
            let lag = k * dilation;
            if lag > t {
                break;
            }
            let src = t - lag;
            let x = &inputs[src * m_in..(src + 1) * m_in];
            let w_tap = &layer.weights[k * tap_len..(k + 1) * tap_len];
            let gw_tap = &mut gw[k * tap_len..(k + 1) * tap_len];
            for m in 0..m_in {
                let row = m * n_out..(m + 1) * n_out;
                if x[m] != 0.0 {
                    for (g, &d) in gw_tap[row.clone()].iter_mut().zip(gct) {
                        *g += x[m] * d;
                    }
                }
                if let Some(g_in) = g_in.as_deref_mut() {
                    let dot: f64 = w_tap[row].iter().zip(gct).map(|(w, d)| w * d).sum();
                    g_in[src * m_in + m] += dot;
                }
            }
        }
    }
}
