//! Adam with bias correction, weight decay through the gradient and a
//! learning-rate schedule counted in epochs.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Result, SnnError};
use crate::snn::{NetworkParams, SimGrid, TAU_CEILING};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Constant until `start`, then linear down to `lr0 * factor` at the
    /// last epoch.
    #[default]
    Linear,
    /// `lr0 * factor` from `start` on.
    Step,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub lr0: f64,
    pub start: usize,
    pub factor: f64,
    pub mode: DecayMode,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            start: 25,
            factor: 0.5,
            mode: DecayMode::Linear,
        }
    }
}

impl LrSchedule {
    /// Learning rate of 0-based `epoch` out of `epochs`.
    pub fn lr(&self, epoch: usize, epochs: usize) -> f64 {
        if epoch < self.start {
            return self.lr0;
        }
        match self.mode {
            DecayMode::None => self.lr0,
            DecayMode::Step => self.lr0 * self.factor,
            DecayMode::Linear => {
                let last = epochs.saturating_sub(1);
                if last <= self.start {
                    return self.lr0 * self.factor;
                }
                let frac = ((epoch - self.start) as f64 / (last - self.start) as f64).min(1.0);
                self.lr0 * (1.0 - frac * (1.0 - self.factor))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments, flattened over every weight and time constant
/// in [`NetworkParams::layers`] order (weights, then tau, per layer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.param_count();
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// What the update touches besides the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub lr: f64,
    /// Adds `l2 * w` to every weight gradient.
    pub l2: f64,
    /// Update hidden-layer time constants. The readout time constant is
    /// never updated.
    pub train_tau: bool,
}

/// One Adam step. Time constants are clamped to `[1.5 dt, 10 s]` afterwards.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
    options: &StepOptions,
    grid: &SimGrid,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(SnnError::NonFinite {
            layer: usize::MAX,
            step: state.step as usize,
            what: "gradient passed to the optimizer",
        });
    }
    if state.m.len() != params.param_count() {
        return Err(SnnError::Shape {
            context: "optimizer state",
            expected: params.param_count(),
            actual: state.m.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let floor = grid.tau_floor();
    let hidden = params.hidden.len();

    let mut i = 0;
    let update = |x: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        *x -= options.lr * (*m / c1) / ((*v / c2).sqrt() + config.epsilon);
    };
    for (l, (layer, grad)) in params.layers_mut().zip(grads.layers()).enumerate() {
        for (w, &g) in layer.weights.iter_mut().zip(&grad.weights) {
            update(w, g + options.l2 * *w, &mut state.m[i], &mut state.v[i]);
            i += 1;
        }
        let tau_trainable = options.train_tau && l < hidden;
        for (tau, &g) in layer.tau.iter_mut().zip(&grad.tau) {
            if tau_trainable {
                update(tau, g, &mut state.m[i], &mut state.v[i]);
                *tau = tau.clamp(floor, TAU_CEILING);
            }
            i += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{HiddenSpec, LayerKind, LayerParams, NetworkSpec};

    fn tiny() -> (NetworkSpec, NetworkParams) {
        let spec = NetworkSpec {
            grid: SimGrid::new(0.01, 5).unwrap(),
            input_size: 1,
            hidden: vec![HiddenSpec::dense(1)],
            output_size: 1,
            tau_out: 0.2,
        };
        let params = NetworkParams {
            hidden: vec![LayerParams::new(LayerKind::Dense, 1, 1, vec![3.0], vec![0.1]).unwrap()],
            readout: LayerParams::new(LayerKind::Dense, 1, 1, vec![-2.0], vec![0.2]).unwrap(),
        };
        (spec, params)
    }

    fn opts(lr: f64) -> StepOptions {
        StepOptions {
            lr,
            l2: 0.0,
            train_tau: true,
        }
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0, 60), 0.01);
        assert_eq!(s.lr(24, 60), 0.01);
        assert_eq!(s.lr(25, 60), 0.01);
        assert!((s.lr(59, 60) - 0.005).abs() < 1e-15);
        assert!(s.lr(40, 60) < 0.01 && s.lr(40, 60) > 0.005);
        let step = LrSchedule {
            mode: DecayMode::Step,
            ..s
        };
        assert_eq!(step.lr(24, 60), 0.01);
        assert_eq!(step.lr(25, 60), 0.005);
        // Fewer epochs than the decay start: constant throughout.
        assert_eq!(s.lr(9, 10), 0.01);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (spec, mut params) = tiny();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let grads = Gradients::zeros_like(&params);
        for _ in 0..10 {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &opts(0.01), &spec.grid).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 10);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // L = (w + 1)^2 on the single readout weight, starting at w = -2.
        let (spec, mut params) = tiny();
        let mut state = AdamState::new(&params);
        let mut grads = Gradients::zeros_like(&params);
        for _ in 0..500 {
            grads.readout.weights[0] = 2.0 * (params.readout.weights[0] + 1.0);
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &opts(0.01), &spec.grid).unwrap();
        }
        assert!((params.readout.weights[0] + 1.0).abs() < 1e-3, "{}", params.readout.weights[0]);
    }

    #[test]
    fn tau_clamped_and_readout_tau_frozen() {
        let (spec, mut params) = tiny();
        let mut state = AdamState::new(&params);
        let mut grads = Gradients::zeros_like(&params);
        grads.hidden[0].tau[0] = 1e3;
        grads.readout.tau[0] = 1e3;
        for _ in 0..100 {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &opts(0.05), &spec.grid).unwrap();
        }
        assert_eq!(params.hidden[0].tau[0], spec.grid.tau_floor());
        assert_eq!(params.readout.tau[0], 0.2);
    }

    #[test]
    fn l2_pulls_weights_to_zero() {
        let (spec, mut params) = tiny();
        let mut state = AdamState::new(&params);
        let grads = Gradients::zeros_like(&params);
        let o = StepOptions {
            lr: 0.01,
            l2: 1.0,
            train_tau: false,
        };
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &o, &spec.grid).unwrap();
        assert!(params.hidden[0].weights[0] < 3.0);
        assert!(params.readout.weights[0] > -2.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (spec, mut params) = tiny();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let mut grads = Gradients::zeros_like(&params);
        grads.hidden[0].weights[0] = f64::NAN;
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &opts(0.01), &spec.grid);
        assert!(matches!(err, Err(SnnError::NonFinite { .. })));
        assert_eq!(params, before);
    }
}
