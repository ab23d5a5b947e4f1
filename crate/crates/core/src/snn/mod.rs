//! Discrete-time simulation of feed-forward spiking networks.
//!
//! Hidden layers are leaky integrate-and-fire (LIF) populations with a
//! subtractive ("soft") reset, fed either by a dense projection or by a
//! dilated causal temporal convolution. The readout is a population of
//! non-spiking leaky integrators.
//!
//! The membrane update is the exponential-Euler discretization
//!
//! ```text
//! u[t] = a * u[t-1] + (1 - a) * c[t] - u_th * s[t-1],    a = exp(-dt / tau)
//! s[t] = H(u[t] - u_th)
//! ```
//!
//! so a spike emitted at step `t` is subtracted from the membrane at `t + 1`,
//! and the no-spike steady state under a constant current equals that current.

mod kernels;
mod network;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SnnError};

pub use kernels::InputHistory;
pub use network::{
    forward_pass, forward_pass_f32, forward_pass_with, ForwardOptions, LayerTrace, NetworkParams,
    Tape, Trace,
};

/// Firing threshold. Fixed for every layer.
pub const U_TH: f64 = 1.0;

/// Smallest admissible time constant, in units of `dt`.
pub const TAU_FLOOR_STEPS: f64 = 1.5;

/// Largest time constant accepted after an optimizer step, in seconds.
pub const TAU_CEILING: f64 = 10.0;

/// Default readout time constant, seconds.
pub const DEFAULT_TAU_OUT: f64 = 0.2;

/// Time discretization shared by every layer and every sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    /// Seconds per step.
    pub dt: f64,
    /// Number of steps.
    pub steps: usize,
}

impl SimGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        let grid = Self { dt, steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SnnError::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.steps == 0 {
            return Err(SnnError::InvalidParameter("grid needs at least one step".into()));
        }
        Ok(())
    }

    /// Smallest time constant the simulator accepts on this grid.
    pub fn tau_floor(&self) -> f64 {
        TAU_FLOOR_STEPS * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

/// How a layer maps its input spikes to a current.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv { kernel: usize, dilation: usize },
}

impl LayerKind {
    /// Number of weight taps along time (1 for dense layers).
    pub fn taps(&self) -> usize {
        match *self {
            LayerKind::Dense => 1,
            LayerKind::Conv { kernel, .. } => kernel,
        }
    }

    pub fn dilation(&self) -> usize {
        match *self {
            LayerKind::Dense => 1,
            LayerKind::Conv { dilation, .. } => dilation,
        }
    }

    /// Past input vectors that must be remembered to evaluate one step.
    pub fn history_len(&self) -> usize {
        (self.taps() - 1) * self.dilation()
    }

    fn validate(&self) -> Result<()> {
        if let LayerKind::Conv { kernel, dilation } = *self {
            if kernel < 1 || dilation < 1 {
                return Err(SnnError::InvalidParameter(format!(
                    "conv layer needs kernel >= 1 and dilation >= 1, got K={kernel}, d={dilation}"
                )));
            }
        }
        Ok(())
    }
}

/// Weights and time constants of one layer.
///
/// Dense weights are stored row-major as `[inputs][neurons]`; convolution
/// weights as `[taps][inputs][neurons]`, tap 0 reading the present input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub inputs: usize,
    pub neurons: usize,
    pub weights: Vec<f64>,
    pub tau: Vec<f64>,
}

impl LayerParams {
    pub fn new(
        kind: LayerKind,
        inputs: usize,
        neurons: usize,
        weights: Vec<f64>,
        tau: Vec<f64>,
    ) -> Result<Self> {
        let layer = Self {
            kind,
            inputs,
            neurons,
            weights,
            tau,
        };
        layer.check_shapes()?;
        Ok(layer)
    }

    pub fn zeros(kind: LayerKind, inputs: usize, neurons: usize, tau: f64) -> Self {
        Self {
            kind,
            inputs,
            neurons,
            weights: vec![0.0; kind.taps() * inputs * neurons],
            tau: vec![tau; neurons],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.kind.taps() * self.inputs * self.neurons
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.tau.len()
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.kind.validate()?;
        check_len("layer weights", self.weight_len(), self.weights.len())?;
        check_len("layer time constants", self.neurons, self.tau.len())
    }

    /// Shape checks plus the time-constant floor of `grid`.
    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        self.check_shapes()?;
        for &tau in &self.tau {
            decay_factor(tau, grid.dt)?;
        }
        Ok(())
    }

    /// Per-neuron decay factors on `grid`.
    pub fn alphas(&self, grid: &SimGrid) -> Result<Vec<f64>> {
        self.tau.iter().map(|&tau| decay_factor(tau, grid.dt)).collect()
    }
}

/// Per-neuron dynamic state of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub history: Option<InputHistory<f64>>,
}

impl LayerState {
    /// Resting state: zero voltage, no spike, zero-padded input history.
    pub fn rest(kind: LayerKind, inputs: usize, neurons: usize) -> Self {
        let history = match kind {
            LayerKind::Dense => None,
            LayerKind::Conv { .. } => Some(InputHistory::new(kind.history_len(), inputs)),
        };
        Self {
            u: vec![0.0; neurons],
            s: vec![0.0; neurons],
            history,
        }
    }
}

/// One hidden layer of a [`NetworkSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub size: usize,
    pub kind: LayerKind,
}

impl HiddenSpec {
    pub fn dense(size: usize) -> Self {
        Self {
            size,
            kind: LayerKind::Dense,
        }
    }

    pub fn conv(size: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            size,
            kind: LayerKind::Conv { kernel, dilation },
        }
    }
}

/// Architecture of a feed-forward network: hidden LIF layers followed by a
/// leaky-integrator readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub grid: SimGrid,
    pub input_size: usize,
    pub hidden: Vec<HiddenSpec>,
    pub output_size: usize,
    pub tau_out: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden.is_empty() {
            return Err(SnnError::InvalidParameter(
                "network needs at least one hidden layer".into(),
            ));
        }
        if self.input_size == 0 || self.output_size == 0 {
            return Err(SnnError::InvalidParameter(
                "input and output sizes must be positive".into(),
            ));
        }
        for layer in &self.hidden {
            layer.kind.validate()?;
            if layer.size == 0 {
                return Err(SnnError::InvalidParameter("hidden layer of size 0".into()));
            }
        }
        decay_factor(self.tau_out, self.grid.dt)?;
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden.len()
    }

    /// Input width of hidden layer `index`.
    pub fn layer_inputs(&self, index: usize) -> usize {
        if index == 0 {
            self.input_size
        } else {
            self.hidden[index - 1].size
        }
    }

    pub fn last_hidden_size(&self) -> usize {
        self.hidden.last().map_or(self.input_size, |h| h.size)
    }
}

/// Decay factor `exp(-dt / tau)` of a neuron with time constant `tau`.
pub fn decay_factor(tau: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(SnnError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let floor = TAU_FLOOR_STEPS * dt;
    if tau.is_nan() || tau < floor {
        return Err(SnnError::TauBelowFloor { tau, floor });
    }
    Ok((-dt / tau).exp())
}

/// Spike nonlinearity applied to the membrane voltage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpikeMode {
    /// Binary spikes, `u >= u_th`.
    #[default]
    Heaviside,
    /// Piecewise-linear ramp whose derivative is the box surrogate of the
    /// given half-width. Used to validate the backward pass against finite
    /// differences; never used for training.
    Relaxed { half_width: f64 },
}

impl SpikeMode {
    #[inline]
    pub fn fire<F: Float>(&self, u: F) -> F {
        let th = F::from(U_TH).unwrap();
        match *self {
            SpikeMode::Heaviside => {
                if u >= th {
                    F::one()
                } else {
                    F::zero()
                }
            }
            SpikeMode::Relaxed { half_width } => {
                let beta = F::from(half_width).unwrap();
                let two = F::one() + F::one();
                ((u - th + beta) / (two * beta)).max(F::zero()).min(F::one())
            }
        }
    }
}

/// One LIF update. Returns the new voltages and spikes; `state` is untouched.
pub fn lif_step(
    state: &LayerState,
    current: &[f64],
    params: &LayerParams,
    grid: &SimGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = params.neurons;
    check_len("lif_step current", n, current.len())?;
    check_len("lif_step voltage", n, state.u.len())?;
    check_len("lif_step spikes", n, state.s.len())?;
    let alpha = params.alphas(grid)?;
    let mut u = state.u.clone();
    let mut s = state.s.clone();
    kernels::lif_update(&mut u, &mut s, current, &alpha, SpikeMode::Heaviside);
    Ok((u, s))
}

/// Dense input map: `current = spikes_in · W`.
pub fn dense_current(spikes_in: &[f64], weights: &[f64], neurons: usize) -> Result<Vec<f64>> {
    check_len("dense_current weights", spikes_in.len() * neurons, weights.len())?;
    let mut out = vec![0.0; neurons];
    kernels::dense_accumulate(spikes_in, weights, &mut out);
    Ok(out)
}

/// Streaming causal convolution. `spikes_in` is pushed into `history` and
/// the current for the present step is returned:
/// `current[n] = sum_k sum_m I(t - k d)[m] * W[k, m, n]`.
pub fn causal_conv_current(
    history: &mut InputHistory<f64>,
    spikes_in: &[f64],
    weights: &[f64],
    taps: usize,
    dilation: usize,
    neurons: usize,
) -> Result<Vec<f64>> {
    if dilation < 1 || taps < 1 {
        return Err(SnnError::InvalidParameter(format!(
            "conv needs kernel >= 1 and dilation >= 1, got K={taps}, d={dilation}"
        )));
    }
    let inputs = spikes_in.len();
    check_len("causal_conv_current weights", taps * inputs * neurons, weights.len())?;
    check_len("causal_conv_current history width", inputs, history.width())?;
    if history.capacity() < (taps - 1) * dilation {
        return Err(SnnError::Shape {
            context: "causal_conv_current history length",
            expected: (taps - 1) * dilation,
            actual: history.capacity(),
        });
    }
    history.push(spikes_in);
    let mut out = vec![0.0; neurons];
    kernels::conv_accumulate(history, weights, taps, dilation, &mut out);
    Ok(out)
}

/// Leaky-integrator readout update: `u_next = a u + (1 - a) current`.
pub fn leaky_output_step(
    u: &[f64],
    current: &[f64],
    tau_out: f64,
    grid: &SimGrid,
) -> Result<Vec<f64>> {
    check_len("leaky_output_step", u.len(), current.len())?;
    let alpha = decay_factor(tau_out, grid.dt)?;
    Ok(u.iter()
        .zip(current)
        .map(|(&v, &c)| alpha * v + (1.0 - alpha) * c)
        .collect())
}
