use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SpikeDataset, Window};
use crate::error::{Result, SnnError};
use crate::snn::SimGrid;

/// Multi-time-scale XOR task. Channel A shows one binary cue at the start;
/// channel B then shows `n_cues_b` cues and each B cue is labelled with
/// `A xor B_i`. Each channel is a population of Poisson neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtsXorConfig {
    pub dt: f64,
    pub duration: f64,
    pub neurons_per_channel: usize,
    pub cue_duration: f64,
    pub gap: f64,
    pub n_cues_b: usize,
    /// Hz, for a cue of value 1.
    pub rate_active: f64,
    /// Hz, for a cue of value 0.
    pub rate_inactive: f64,
    /// Hz, on every input neuron for the whole sample.
    pub background_rate: f64,
    pub seed: u64,
}

impl Default for MtsXorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            duration: 1.0,
            neurons_per_channel: 10,
            cue_duration: 0.1,
            gap: 0.05,
            n_cues_b: 5,
            rate_active: 100.0,
            rate_inactive: 0.0,
            background_rate: 5.0,
            seed: 0,
        }
    }
}

/// Cue values drawn for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MtsXorCues {
    pub a: u32,
    pub b: Vec<u32>,
}

fn to_steps(seconds: f64, dt: f64) -> usize {
    (seconds / dt).round() as usize
}

impl MtsXorConfig {
    pub fn grid(&self) -> Result<SimGrid> {
        SimGrid::new(self.dt, to_steps(self.duration, self.dt))
    }

    pub fn channels(&self) -> usize {
        2 * self.neurons_per_channel
    }

    fn cue_steps(&self) -> usize {
        to_steps(self.cue_duration, self.dt)
    }

    /// `[start, end)` steps of the A cue followed by the B cues.
    pub fn cue_windows(&self) -> Vec<(usize, usize)> {
        let cue = self.cue_steps();
        let period = to_steps(self.cue_duration + self.gap, self.dt);
        (0..=self.n_cues_b).map(|i| (i * period, i * period + cue)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let bad = |msg: String| Err(SnnError::InvalidParameter(msg));
        if self.neurons_per_channel == 0 || self.n_cues_b == 0 {
            return bad("MTS-XOR needs at least one neuron per channel and one B cue".into());
        }
        if self.cue_steps() == 0 || !(self.gap >= 0.0) {
            return bad("cue duration must span at least one step and gap must be >= 0".into());
        }
        for r in [self.rate_active, self.rate_inactive, self.background_rate] {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("rates must be finite and non-negative, got {r}"));
            }
        }
        if self.rate_active <= self.rate_inactive {
            return bad("rate_active must exceed rate_inactive".into());
        }
        let end = self.cue_windows().last().map_or(0, |w| w.1);
        if end > grid.steps {
            return bad(format!(
                "cue windows end at step {end}, beyond the {} steps of a sample",
                grid.steps
            ));
        }
        Ok(())
    }
}

/// Draws `n_samples` MTS-XOR samples. Sample `i` uses its own RNG stream, so
/// the result does not depend on thread scheduling.
pub fn mtsxor_generate(config: &MtsXorConfig, n_samples: usize) -> Result<SpikeDataset> {
    mtsxor_generate_with_cues(config, n_samples).map(|(ds, _)| ds)
}

pub fn mtsxor_generate_with_cues(
    config: &MtsXorConfig,
    n_samples: usize,
) -> Result<(SpikeDataset, Vec<MtsXorCues>)> {
    config.validate()?;
    let grid = config.grid()?;
    let channels = config.channels();
    let windows = config.cue_windows();
    let sampler = |lambda: f64| (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive rate"));
    let background = sampler(config.background_rate * config.dt);
    let cue_rate = [
        sampler((config.rate_inactive + config.background_rate) * config.dt),
        sampler((config.rate_active + config.background_rate) * config.dt),
    ];

    let samples: Vec<(Vec<u8>, MtsXorCues)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let a = rng.gen_range(0..2u32);
            let b: Vec<u32> = (0..config.n_cues_b).map(|_| rng.gen_range(0..2u32)).collect();
            let mut data = vec![0u8; grid.steps * channels];
            let n = config.neurons_per_channel;
            for t in 0..grid.steps {
                // Which population is cued at this step, and with what value.
                let cued = windows
                    .iter()
                    .position(|&(s, e)| (s..e).contains(&t))
                    .map(|w| if w == 0 { (0, a) } else { (1, b[w - 1]) });
                for c in 0..channels {
                    let dist = match cued {
                        Some((pop, value)) if c / n == pop => &cue_rate[value as usize],
                        _ => &background,
                    };
                    if let Some(d) = dist {
                        let count: f64 = d.sample(&mut rng);
                        data[t * channels + c] = count.min(255.0) as u8;
                    }
                }
            }
            (data, MtsXorCues { a, b })
        })
        .collect();

    let mut ds = SpikeDataset::empty(grid, channels, true);
    let mut cues = Vec::with_capacity(n_samples);
    ds.data.reserve(n_samples * ds.sample_len());
    for (data, cue) in samples {
        let labelled = windows[1..]
            .iter()
            .zip(&cue.b)
            .map(|(&(start, end), &b)| Window {
                start,
                end,
                label: cue.a ^ b,
            })
            .collect();
        ds.push(&data, cue.a, Some(labelled))?;
        cues.push(cue);
    }
    Ok((ds, cues))
}
