use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::kernels::{conv_accumulate, dense_accumulate, leaky_update, lif_update, InputHistory};
use super::{LayerKind, LayerParams, NetworkSpec, SpikeMode};
use crate::error::{check_len, Result, SnnError};

/// Parameters of every layer of a network, hidden layers first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub hidden: Vec<LayerParams>,
    pub readout: LayerParams,
}

impl NetworkParams {
    /// All-zero weights; hidden time constants set to `tau_hidden`.
    pub fn zeros(spec: &NetworkSpec, tau_hidden: f64) -> Self {
        let hidden = spec
            .hidden
            .iter()
            .enumerate()
            .map(|(i, h)| LayerParams::zeros(h.kind, spec.layer_inputs(i), h.size, tau_hidden))
            .collect();
        let readout = LayerParams::zeros(
            LayerKind::Dense,
            spec.last_hidden_size(),
            spec.output_size,
            spec.tau_out,
        );
        Self { hidden, readout }
    }

    /// Checks that the parameters fit `spec` and respect the τ floor.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        check_len("hidden layer count", spec.hidden.len(), self.hidden.len())?;
        for (i, (layer, h)) in self.hidden.iter().zip(&spec.hidden).enumerate() {
            if layer.kind != h.kind {
                return Err(SnnError::InvalidParameter(format!(
                    "layer {i}: kind {:?} does not match spec {:?}",
                    layer.kind, h.kind
                )));
            }
            check_len("hidden layer inputs", spec.layer_inputs(i), layer.inputs)?;
            check_len("hidden layer size", h.size, layer.neurons)?;
            layer.validate(&spec.grid)?;
        }
        if self.readout.kind != LayerKind::Dense {
            return Err(SnnError::InvalidParameter("readout must be dense".into()));
        }
        check_len("readout inputs", spec.last_hidden_size(), self.readout.inputs)?;
        check_len("readout size", spec.output_size, self.readout.neurons)?;
        self.readout.validate(&spec.grid)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.hidden.iter().chain(std::iter::once(&self.readout))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.readout))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(LayerParams::param_count).sum()
    }
}

/// Row-major `steps × width` time series.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<F = f64> {
    pub steps: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Copy + num_traits::Zero> Trace<F> {
    pub fn zeros(steps: usize, width: usize) -> Self {
        Self {
            steps,
            width,
            data: vec![F::zero(); steps * width],
        }
    }

    pub fn from_vec(steps: usize, width: usize, data: Vec<F>) -> Result<Self> {
        check_len("trace", steps * width, data.len())?;
        Ok(Self { steps, width, data })
    }

    pub fn row(&self, t: usize) -> &[F] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [F] {
        &mut self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn get(&self, t: usize, n: usize) -> F {
        self.data[t * self.width + n]
    }
}

/// Per-step record of one layer. All arrays are `steps × width` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace<F = f64> {
    /// Layer inputs as seen by the weights (after dropout).
    pub inputs: Vec<F>,
    pub currents: Vec<F>,
    /// Membrane voltage before the next step's reset is applied.
    pub voltages: Vec<F>,
    /// Spike outputs; empty for the readout.
    pub spikes: Vec<F>,
    /// Dropout mask applied to the spikes on their way out; `None` if no
    /// dropout was used.
    pub mask: Option<Vec<F>>,
}

impl<F: Float> LayerTrace<F> {
    fn with_capacity(steps: usize, inputs: usize, neurons: usize, spiking: bool) -> Self {
        Self {
            inputs: Vec::with_capacity(steps * inputs),
            currents: Vec::with_capacity(steps * neurons),
            voltages: Vec::with_capacity(steps * neurons),
            spikes: if spiking {
                Vec::with_capacity(steps * neurons)
            } else {
                Vec::new()
            },
            mask: None,
        }
    }
}

/// Recorded forward trajectory consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a NetworkParams,
    pub mode: SpikeMode,
    pub hidden: Vec<LayerTrace>,
    pub readout: LayerTrace,
}

impl Tape<'_> {
    pub fn steps(&self) -> usize {
        self.spec.grid.steps
    }

    /// Recomputes every layer's voltages from the stored layer inputs.
    /// Returns hidden layers first, then the readout.
    pub fn replay_voltages(&self) -> Result<Vec<Vec<f64>>> {
        let grid = &self.spec.grid;
        let steps = grid.steps;
        let mut all = Vec::with_capacity(self.hidden.len() + 1);
        for (layer, trace) in self.params.hidden.iter().zip(&self.hidden) {
            let alpha = layer.alphas(grid)?;
            let mut history = InputHistory::new(layer.kind.history_len(), layer.inputs);
            let mut u = vec![0.0; layer.neurons];
            let mut s = vec![0.0; layer.neurons];
            let mut c = vec![0.0; layer.neurons];
            let mut voltages = Vec::with_capacity(steps * layer.neurons);
            for t in 0..steps {
                let x = &trace.inputs[t * layer.inputs..(t + 1) * layer.inputs];
                layer_current(layer, &layer.weights, x, &mut history, &mut c);
                lif_update(&mut u, &mut s, &c, &alpha, self.mode);
                voltages.extend_from_slice(&u);
            }
            all.push(voltages);
        }
        let readout = &self.params.readout;
        let alpha = readout.alphas(grid)?;
        let mut u = vec![0.0; readout.neurons];
        let mut c = vec![0.0; readout.neurons];
        let mut voltages = Vec::with_capacity(steps * readout.neurons);
        for t in 0..steps {
            let x = &self.readout.inputs[t * readout.inputs..(t + 1) * readout.inputs];
            c.iter_mut().for_each(|v| *v = 0.0);
            dense_accumulate(x, &readout.weights, &mut c);
            leaky_update(&mut u, &c, &alpha);
            voltages.extend_from_slice(&u);
        }
        all.push(voltages);
        Ok(all)
    }
}

/// Options for [`forward_pass_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'m> {
    pub record: bool,
    pub mode: SpikeMode,
    /// One `steps × neurons` multiplicative mask per hidden layer, applied
    /// to the spikes leaving that layer.
    pub masks: Option<&'m [Vec<f64>]>,
}

/// Simulates `input` (row-major `steps × input_size` spike counts) through
/// the network. Returns the readout voltages and, when `record` is set, the
/// tape for the backward pass.
pub fn forward_pass<'a>(
    spec: &'a NetworkSpec,
    params: &'a NetworkParams,
    input: &[u8],
    record: bool,
) -> Result<(Trace, Option<Tape<'a>>)> {
    forward_pass_with(
        spec,
        params,
        input,
        ForwardOptions {
            record,
            ..Default::default()
        },
    )
}

pub fn forward_pass_with<'a>(
    spec: &'a NetworkSpec,
    params: &'a NetworkParams,
    input: &[u8],
    options: ForwardOptions<'_>,
) -> Result<(Trace, Option<Tape<'a>>)> {
    let plan = Plan::<f64>::build(spec, params, options.masks)?;
    let (out, traces) = plan.run(input, options.record, options.mode)?;
    let tape = traces.map(|mut traces| {
        let readout = traces.pop().expect("readout trace");
        Tape {
            spec,
            params,
            mode: options.mode,
            hidden: traces,
            readout,
        }
    });
    Ok((out, tape))
}

/// Single-precision inference path. Same dynamics as [`forward_pass`],
/// no tape.
pub fn forward_pass_f32(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &[u8],
) -> Result<Trace<f32>> {
    let plan = Plan::<f32>::build(spec, params, None)?;
    let (out, _) = plan.run(input, false, SpikeMode::Heaviside)?;
    Ok(out)
}

fn layer_current<F: Float>(
    layer: &LayerParams,
    weights: &[F],
    x: &[F],
    history: &mut InputHistory<F>,
    out: &mut [F],
) {
    out.iter_mut().for_each(|v| *v = F::zero());
    match layer.kind {
        LayerKind::Dense => dense_accumulate(x, weights, out),
        LayerKind::Conv { kernel, dilation } => {
            history.push(x);
            conv_accumulate(history, weights, kernel, dilation, out);
        }
    }
}

struct PlanLayer<'p, F> {
    params: &'p LayerParams,
    weights: Vec<F>,
    alpha: Vec<F>,
    mask: Option<&'p [f64]>,
}

/// Parameters converted to the working precision, validated once.
struct Plan<'p, F> {
    spec: &'p NetworkSpec,
    hidden: Vec<PlanLayer<'p, F>>,
    readout: PlanLayer<'p, F>,
}

impl<'p, F: Float> Plan<'p, F> {
    fn build(
        spec: &'p NetworkSpec,
        params: &'p NetworkParams,
        masks: Option<&'p [Vec<f64>]>,
    ) -> Result<Self> {
        spec.validate()?;
        params.validate(spec)?;
        if let Some(masks) = masks {
            check_len("dropout masks", spec.hidden.len(), masks.len())?;
            for (mask, h) in masks.iter().zip(&spec.hidden) {
                check_len("dropout mask", spec.grid.steps * h.size, mask.len())?;
            }
        }
        let cast = |v: &[f64]| v.iter().map(|&x| F::from(x).unwrap()).collect::<Vec<F>>();
        let plan_layer = |layer: &'p LayerParams, mask: Option<&'p [f64]>| -> Result<_> {
            Ok(PlanLayer {
                params: layer,
                weights: cast(&layer.weights),
                alpha: cast(&layer.alphas(&spec.grid)?),
                mask,
            })
        };
        let hidden = params
            .hidden
            .iter()
            .enumerate()
            .map(|(i, layer)| plan_layer(layer, masks.map(|m| m[i].as_slice())))
            .collect::<Result<Vec<_>>>()?;
        let readout = plan_layer(&params.readout, None)?;
        Ok(Self {
            spec,
            hidden,
            readout,
        })
    }

    fn run(
        &self,
        input: &[u8],
        record: bool,
        mode: SpikeMode,
    ) -> Result<(Trace<F>, Option<Vec<LayerTrace<F>>>)> {
        let steps = self.spec.grid.steps;
        let input_size = self.spec.input_size;
        check_len("forward input", steps * input_size, input.len())?;

        let mut states: Vec<(Vec<F>, Vec<F>, Vec<F>, InputHistory<F>)> = self
            .hidden
            .iter()
            .map(|l| {
                let n = l.params.neurons;
                (
                    vec![F::zero(); n],
                    vec![F::zero(); n],
                    vec![F::zero(); n],
                    InputHistory::new(l.params.kind.history_len(), l.params.inputs),
                )
            })
            .collect();
        let outputs = self.readout.params.neurons;
        let mut out_u = vec![F::zero(); outputs];
        let mut out_c = vec![F::zero(); outputs];
        let mut out = Trace::<F>::zeros(steps, outputs);

        let mut traces: Option<Vec<LayerTrace<F>>> = record.then(|| {
            self.hidden
                .iter()
                .map(|l| LayerTrace::with_capacity(steps, l.params.inputs, l.params.neurons, true))
                .chain(std::iter::once(LayerTrace::with_capacity(
                    steps,
                    self.readout.params.inputs,
                    outputs,
                    false,
                )))
                .collect()
        });
        if let Some(traces) = traces.as_mut() {
            for (trace, layer) in traces.iter_mut().zip(&self.hidden) {
                trace.mask = layer.mask.map(|m| m.iter().map(|&v| F::from(v).unwrap()).collect());
            }
        }

        let mut x: Vec<F> = Vec::with_capacity(input_size);
        for t in 0..steps {
            x.clear();
            x.extend(
                input[t * input_size..(t + 1) * input_size]
                    .iter()
                    .map(|&v| F::from(v).unwrap()),
            );
            for (l, layer) in self.hidden.iter().enumerate() {
                let (u, s, c, history) = &mut states[l];
                layer_current(layer.params, &layer.weights, &x, history, c);
                lif_update(u, s, c, &layer.alpha, mode);
                if let Some(traces) = traces.as_mut() {
                    let trace = &mut traces[l];
                    trace.inputs.extend_from_slice(&x);
                    trace.currents.extend_from_slice(c);
                    trace.voltages.extend_from_slice(u);
                    trace.spikes.extend_from_slice(s);
                }
                x.clear();
                match layer.mask {
                    Some(mask) => {
                        let n = layer.params.neurons;
                        let row = &mask[t * n..(t + 1) * n];
                        x.extend(s.iter().zip(row).map(|(&v, &m)| v * F::from(m).unwrap()));
                    }
                    None => x.extend_from_slice(s),
                }
            }
            out_c.iter_mut().for_each(|v| *v = F::zero());
            dense_accumulate(&x, &self.readout.weights, &mut out_c);
            leaky_update(&mut out_u, &out_c, &self.readout.alpha);
            out.row_mut(t).copy_from_slice(&out_u);
            if let Some(traces) = traces.as_mut() {
                let trace = traces.last_mut().unwrap();
                trace.inputs.extend_from_slice(&x);
                trace.currents.extend_from_slice(&out_c);
                trace.voltages.extend_from_slice(&out_u);
            }
        }
        Ok((out, traces))
    }
}
