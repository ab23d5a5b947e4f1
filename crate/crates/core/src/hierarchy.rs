//! Per-layer temporal hierarchies: time-constant means, per-neuron time
//! constant sampling and kernel-size / dilation ramps.
//!
//! Layer indices `l` are 1-based in every formula below.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::snn::SimGrid;

/// Relative standard deviation of per-neuron time constants around the
/// layer mean.
pub const TAU_RELATIVE_STD: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauShape {
    #[default]
    Homogeneous,
    /// `tau_mu + ((l-1)/(H-1) - 1/2) * delta_tau`: mean `tau_mu`, span `delta_tau`.
    Linear,
    /// `tanh(s (l/H - c))` rescaled onto `[tau_mu - |delta|/2, tau_mu + |delta|/2]`.
    Tanh,
    /// `tau_mu + (l - H/2) * delta_tau / 2`, unnormalized.
    UnnormalizedLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauSchedule {
    pub shape: TauShape,
    /// Seconds.
    pub tau_mu: f64,
    /// Seconds; negative values put the slow layers first.
    pub delta_tau: f64,
    pub steepness: f64,
    pub centering: f64,
    pub layers: usize,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self {
            shape: TauShape::Homogeneous,
            tau_mu: 0.3,
            delta_tau: 0.0,
            steepness: 0.5,
            centering: 0.5,
            layers: 2,
        }
    }
}

impl TauSchedule {
    /// Per-layer means, checked against the floor of `grid`.
    pub fn means(&self, grid: &SimGrid) -> Result<Vec<f64>> {
        let means = match self.shape {
            TauShape::Homogeneous => {
                check_layers(self.layers, 1)?;
                vec![self.tau_mu; self.layers]
            }
            TauShape::Linear | TauShape::UnnormalizedLinear => linear_tau_means(self)?,
            TauShape::Tanh => tanh_tau_means(self)?,
        };
        check_floor(&means, grid)?;
        Ok(means)
    }
}

fn check_layers(layers: usize, min: usize) -> Result<()> {
    if layers < min {
        return Err(SnnError::DegenerateSchedule(format!(
            "schedule needs at least {min} layer(s), got {layers}"
        )));
    }
    Ok(())
}

fn check_floor(means: &[f64], grid: &SimGrid) -> Result<()> {
    let floor = grid.tau_floor();
    match means.iter().find(|&&t| !(t >= floor)) {
        Some(&tau) => Err(SnnError::TauBelowFloor { tau, floor }),
        None => Ok(()),
    }
}

/// Linear time-constant means. Uses the normalized ramp unless the shape is
/// [`TauShape::UnnormalizedLinear`].
pub fn linear_tau_means(sched: &TauSchedule) -> Result<Vec<f64>> {
    let h = sched.layers;
    check_layers(h, 1)?;
    let mu = sched.tau_mu;
    let delta = sched.delta_tau;
    Ok(match sched.shape {
        TauShape::UnnormalizedLinear => (1..=h)
            .map(|l| mu + (l as f64 - h as f64 / 2.0) * delta / 2.0)
            .collect(),
        _ if h == 1 => vec![mu],
        _ => (1..=h).map(|l| mu + ramp(l, h) * delta).collect(),
    })
}

/// `(l-1)/(H-1) - 1/2`, in `[-1/2, 1/2]`.
fn ramp(l: usize, h: usize) -> f64 {
    (l - 1) as f64 / (h - 1) as f64 - 0.5
}

/// Hyperbolic-tangent time-constant means.
pub fn tanh_tau_means(sched: &TauSchedule) -> Result<Vec<f64>> {
    let h = sched.layers;
    check_layers(h, 2)?;
    if sched.steepness == 0.0 || !sched.steepness.is_finite() {
        return Err(SnnError::DegenerateSchedule(format!(
            "tanh steepness must be finite and non-zero, got {}",
            sched.steepness
        )));
    }
    let g: Vec<f64> = (1..=h)
        .map(|l| (sched.steepness * (l as f64 / h as f64 - sched.centering)).tanh())
        .collect();
    let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(SnnError::DegenerateSchedule(
            "tanh values are identical across layers".into(),
        ));
    }
    // Pin the extremes so the range is exact to rounding of tau_mu +- delta/2.
    let half = sched.delta_tau / 2.0;
    Ok(g.iter()
        .map(|&v| {
            if v == lo {
                sched.tau_mu - half
            } else if v == hi {
                sched.tau_mu + half
            } else {
                sched.tau_mu + (2.0 * (v - lo) / (hi - lo) - 1.0) * half
            }
        })
        .collect())
}

/// `n` draws from `N(mean, 0.2 mean)` clamped to the floor of `grid`.
pub fn sample_layer_taus<R: Rng + ?Sized>(mean: f64, n: usize, grid: &SimGrid, rng: &mut R) -> Result<Vec<f64>> {
    let floor = grid.tau_floor();
    if !(mean >= floor) || !mean.is_finite() {
        return Err(SnnError::TauBelowFloor { tau: mean, floor });
    }
    let normal = Normal::new(mean, TAU_RELATIVE_STD * mean)
        .map_err(|e| SnnError::InvalidParameter(e.to_string()))?;
    Ok((0..n).map(|_| normal.sample(rng).max(floor)).collect())
}

/// Integer kernel-size and dilation ramps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvSchedule {
    pub mean_kernel: i64,
    pub delta_ker: i64,
    pub mean_dilation: i64,
    pub delta_dil: i64,
    pub layers: usize,
}

impl Default for ConvSchedule {
    fn default() -> Self {
        Self {
            mean_kernel: 5,
            delta_ker: 0,
            mean_dilation: 1,
            delta_dil: 0,
            layers: 2,
        }
    }
}

/// Per-layer kernel sizes and dilations:
/// `round(mean + ((l-1)/(H-1) - 1/2) * delta)`, half away from zero.
pub fn conv_schedules(sched: &ConvSchedule) -> Result<(Vec<usize>, Vec<usize>)> {
    check_layers(sched.layers, 1)?;
    let kernels = int_ramp(sched.mean_kernel, sched.delta_ker, sched.layers, "kernel size")?;
    let dilations = int_ramp(sched.mean_dilation, sched.delta_dil, sched.layers, "dilation")?;
    Ok((kernels, dilations))
}

fn int_ramp(mean: i64, delta: i64, h: usize, what: &str) -> Result<Vec<usize>> {
    (1..=h)
        .map(|l| {
            let offset = if h == 1 { 0.0 } else { ramp(l, h) * delta as f64 };
            // f64::round rounds half away from zero.
            let v = (mean as f64 + offset).round();
            if v < 1.0 {
                Err(SnnError::DegenerateSchedule(format!(
                    "{what} {v} at layer {l} is below 1"
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> SimGrid {
        SimGrid::new(0.01, 100).unwrap()
    }

    fn sched(shape: TauShape, tau_mu: f64, delta_tau: f64, layers: usize) -> TauSchedule {
        TauSchedule {
            shape,
            tau_mu,
            delta_tau,
            layers,
            ..Default::default()
        }
    }

    #[test]
    fn zero_delta_is_homogeneous() {
        for shape in [TauShape::Linear, TauShape::UnnormalizedLinear] {
            let means = linear_tau_means(&sched(shape, 0.3, 0.0, 4)).unwrap();
            assert!(means.iter().all(|&t| t == 0.3));
        }
    }

    #[test]
    fn normalized_linear_two_layers() {
        let means = linear_tau_means(&sched(TauShape::Linear, 0.3, 0.1, 2)).unwrap();
        assert_abs_diff_eq!(means[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(means[1], 0.35, epsilon = 1e-15);
        assert_eq!(linear_tau_means(&sched(TauShape::Linear, 0.3, 0.1, 1)).unwrap(), vec![0.3]);
    }

    #[test]
    fn literal_linear_three_layers() {
        let means = linear_tau_means(&sched(TauShape::UnnormalizedLinear, 0.3, 0.1, 3)).unwrap();
        for (got, want) in means.iter().zip([0.275, 0.325, 0.375]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn tanh_five_layers() {
        let s = TauSchedule {
            shape: TauShape::Tanh,
            tau_mu: 0.2,
            delta_tau: 0.15,
            steepness: 0.5,
            centering: 0.5,
            layers: 5,
        };
        let means = tanh_tau_means(&s).unwrap();
        // Oracle: g = tanh(0.5 (l/5 - 0.5)), mapped affinely onto [-1, 1].
        let g: Vec<f64> = (1..=5).map(|l| (0.5 * (l as f64 / 5.0 - 0.5)).tanh()).collect();
        let (lo, hi) = (g[0], g[4]);
        for (l, &v) in g.iter().enumerate() {
            let want = 0.2 + (2.0 * (v - lo) / (hi - lo) - 1.0) * 0.075;
            assert_abs_diff_eq!(means[l], want, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(means[0], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(means[4], 0.275, epsilon = 1e-15);
        let frozen = [0.125, 0.16268120753949777, 0.20073954126914206, 0.23842074880863984, 0.275];
        for (got, want) in means.iter().zip(frozen) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn tanh_approaches_linear_for_small_steepness() {
        let mut s = sched(TauShape::Tanh, 0.3, 0.2, 6);
        s.steepness = 1e-6;
        let tanh = tanh_tau_means(&s).unwrap();
        let linear = linear_tau_means(&sched(TauShape::Linear, 0.3, 0.2, 6)).unwrap();
        for (a, b) in tanh.iter().zip(&linear) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn tanh_symmetric_arguments_give_antisymmetric_schedule() {
        // Arguments l/H - c are symmetric about zero when c = (H+1)/(2H).
        let h = 7;
        let mut s = sched(TauShape::Tanh, 0.3, 0.2, h);
        s.steepness = 3.0;
        s.centering = (h as f64 + 1.0) / (2.0 * h as f64);
        let means = tanh_tau_means(&s).unwrap();
        for l in 0..h {
            assert_abs_diff_eq!(means[l] - 0.3, 0.3 - means[h - 1 - l], epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_schedules_are_rejected() {
        let mut s = sched(TauShape::Tanh, 0.3, 0.2, 4);
        s.steepness = 0.0;
        assert!(matches!(tanh_tau_means(&s), Err(SnnError::DegenerateSchedule(_))));
        assert!(tanh_tau_means(&sched(TauShape::Tanh, 0.3, 0.2, 1)).is_err());
        let below = sched(TauShape::Linear, 0.05, 0.2, 3);
        assert!(matches!(below.means(&grid()), Err(SnnError::TauBelowFloor { .. })));
    }

    #[test]
    fn sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let taus = sample_layer_taus(0.2, n, &grid(), &mut rng).unwrap();
        let mean = taus.iter().sum::<f64>() / n as f64;
        let std = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 0.2).abs() <= 3.0 * 0.04 / (n as f64).sqrt());
        assert!((std - 0.04).abs() <= 0.02 * 0.04, "std {std}");
    }

    #[test]
    fn sampling_is_reproducible_and_floored() {
        let draw = |seed| sample_layer_taus(0.3, 50, &grid(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        let taus = sample_layer_taus(0.015, 10_000, &grid(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(taus.iter().all(|&t| t >= 0.015));
        assert!(sample_layer_taus(0.01, 3, &grid(), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn conv_examples() {
        let conv = |mk, dk, md, dd| {
            conv_schedules(&ConvSchedule {
                mean_kernel: mk,
                delta_ker: dk,
                mean_dilation: md,
                delta_dil: dd,
                layers: 2,
            })
            .unwrap()
        };
        assert_eq!(conv(5, 0, 1, 0).0, vec![5, 5]);
        assert_eq!(conv(5, 4, 1, 0).0, vec![3, 7]);
        assert_eq!(conv(5, 0, 5, 2).1, vec![4, 6]);
        assert_eq!(conv(5, -4, 5, -2), (vec![7, 3], vec![6, 4]));
        // 5 +- 0.5 rounds away from zero at both ends.
        assert_eq!(conv(5, 1, 1, 0).0, vec![5, 6]);
        assert!(conv_schedules(&ConvSchedule {
            mean_kernel: 2,
            delta_ker: 4,
            ..Default::default()
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn linear_mean_and_span(mu in 0.05f64..2.0, delta in -0.09f64..0.09, h in 2usize..12) {
            let means = linear_tau_means(&sched(TauShape::Linear, mu, delta, h)).unwrap();
            let mean = means.iter().sum::<f64>() / h as f64;
            prop_assert!((mean - mu).abs() <= 1e-12);
            prop_assert!((means[h - 1] - means[0] - delta).abs() <= 1e-12);
        }

        #[test]
        fn tanh_range_and_monotone(mu in 0.1f64..1.0, delta in 0.001f64..0.19, s in 0.01f64..8.0,
                                   c in -1.0f64..2.0, h in 2usize..10) {
            let mut sc = sched(TauShape::Tanh, mu, delta, h);
            sc.steepness = s;
            sc.centering = c;
            let means = tanh_tau_means(&sc).unwrap();
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lo - (mu - delta / 2.0)).abs() <= 1e-12);
            prop_assert!((hi - (mu + delta / 2.0)).abs() <= 1e-12);
            for w in means.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }

        #[test]
        fn sign_flip_mirrors(mu in 0.1f64..1.0, delta in 0.001f64..0.19, s in 0.01f64..8.0,
                             c in -1.0f64..2.0, h in 2usize..10, tanh in any::<bool>()) {
            let shape = if tanh { TauShape::Tanh } else { TauShape::Linear };
            let mut up = sched(shape, mu, delta, h);
            up.steepness = s;
            up.centering = c;
            let down = TauSchedule { delta_tau: -delta, ..up };
            let a = up.means(&grid()).unwrap();
            let b = down.means(&grid()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(((x - mu) + (y - mu)).abs() <= 1e-12);
            }
            prop_assert!(a[h - 1] > a[0] && b[h - 1] < b[0]);
        }

        #[test]
        fn conv_ramps_follow_delta_sign(mean in 5i64..12, delta in -8i64..=8, h in 2usize..8) {
            let (k, d) = conv_schedules(&ConvSchedule {
                mean_kernel: mean, delta_ker: delta, mean_dilation: mean, delta_dil: delta, layers: h,
            }).unwrap();
            prop_assert!(k.iter().chain(&d).all(|&v| v >= 1));
            for w in k.windows(2) {
                match delta.signum() {
                    1 => prop_assert!(w[1] >= w[0]),
                    -1 => prop_assert!(w[1] <= w[0]),
                    _ => prop_assert!(w[1] == w[0]),
                }
            }
            prop_assert_eq!((k[h - 1] as i64 - k[0] as i64).signum(), delta.signum());
        }
    }
}
