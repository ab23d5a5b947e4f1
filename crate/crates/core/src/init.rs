//! Parameter initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::hierarchy::sample_layer_taus;
use crate::snn::{decay_factor, LayerKind, LayerParams, NetworkParams, NetworkSpec};

/// Glorot/Xavier uniform bound for a layer. Convolution fans count every
/// tap, as in the usual `fan_in = K * M`, `fan_out = K * N` convention.
pub fn xavier_bound(kind: LayerKind, inputs: usize, neurons: usize) -> f64 {
    let taps = kind.taps() as f64;
    (6.0 / (taps * inputs as f64 + taps * neurons as f64)).sqrt()
}

pub fn xavier_layer<R: Rng + ?Sized>(
    kind: LayerKind,
    inputs: usize,
    neurons: usize,
    tau: Vec<f64>,
    rng: &mut R,
) -> Result<LayerParams> {
    let bound = xavier_bound(kind, inputs, neurons);
    let weights = (0..kind.taps() * inputs * neurons)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    LayerParams::new(kind, inputs, neurons, weights, tau)
}

/// Xavier-initialized network. `hidden_tau[l]` holds the per-neuron time
/// constants of hidden layer `l`; the readout uses `spec.tau_out`.
pub fn xavier_params<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    hidden_tau: &[Vec<f64>],
    rng: &mut R,
) -> Result<NetworkParams> {
    spec.validate()?;
    check_len("hidden time-constant sets", spec.hidden.len(), hidden_tau.len())?;
    let mut hidden = Vec::with_capacity(spec.hidden.len());
    for (i, (h, tau)) in spec.hidden.iter().zip(hidden_tau).enumerate() {
        hidden.push(xavier_layer(h.kind, spec.layer_inputs(i), h.size, tau.clone(), rng)?);
    }
    let readout = xavier_layer(
        LayerKind::Dense,
        spec.last_hidden_size(),
        spec.output_size,
        vec![spec.tau_out; spec.output_size],
        rng,
    )?;
    let params = NetworkParams { hidden, readout };
    params.validate(spec)?;
    Ok(params)
}

/// How hidden weights are scaled after the Xavier draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScaling {
    #[default]
    Xavier,
    /// Each hidden neuron's incoming weights divided by its `1 - alpha`, so
    /// the initial network matches Xavier weights under the update
    /// `u = alpha u + W s` without input gain.
    LeakCompensated,
}

/// Xavier weights with per-neuron time constants drawn around `tau_means[l]`
/// for hidden layer `l` (see [`sample_layer_taus`]).
pub fn init_network<R: Rng + ?Sized>(spec: &NetworkSpec, tau_means: &[f64], rng: &mut R) -> Result<NetworkParams> {
    init_network_scaled(spec, tau_means, WeightScaling::Xavier, rng)
}

pub fn init_network_scaled<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    tau_means: &[f64],
    scaling: WeightScaling,
    rng: &mut R,
) -> Result<NetworkParams> {
    check_len("hidden time-constant means", spec.hidden.len(), tau_means.len())?;
    let taus = spec
        .hidden
        .iter()
        .zip(tau_means)
        .map(|(h, &mean)| sample_layer_taus(mean, h.size, &spec.grid, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut params = xavier_params(spec, &taus, rng)?;
    if scaling == WeightScaling::LeakCompensated {
        for layer in &mut params.hidden {
            let gains = layer
                .tau
                .iter()
                .map(|&tau| Ok(1.0 / (1.0 - decay_factor(tau, spec.grid.dt)?)))
                .collect::<Result<Vec<_>>>()?;
            let n = layer.neurons;
            for (i, w) in layer.weights.iter_mut().enumerate() {
                *w *= gains[i % n];
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::snn::{HiddenSpec, SimGrid};

    #[test]
    fn leak_compensation_scales_columns() {
        let spec = NetworkSpec {
            grid: SimGrid::new(0.01, 10).unwrap(),
            input_size: 3,
            hidden: vec![HiddenSpec::dense(4), HiddenSpec::conv(2, 2, 1)],
            output_size: 2,
            tau_out: 0.2,
        };
        let plain = init_network(&spec, &[0.05, 0.3], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let scaled = init_network_scaled(&spec, &[0.05, 0.3], WeightScaling::LeakCompensated, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(plain.readout, scaled.readout);
        for (p, s) in plain.hidden.iter().zip(&scaled.hidden) {
            assert_eq!(p.tau, s.tau);
            for (i, (&wp, &ws)) in p.weights.iter().zip(&s.weights).enumerate() {
                let alpha = (-0.01 / p.tau[i % p.neurons]).exp();
                assert!((ws * (1.0 - alpha) - wp).abs() < 1e-12);
            }
        }
    }
}
