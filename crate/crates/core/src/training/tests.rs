use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::loss::*;
use super::*;
use crate::datasets::Window;
use crate::init::init_network;
use crate::snn::{HiddenSpec, SimGrid, Trace};

fn trace(steps: usize, width: usize, data: Vec<f64>) -> Trace {
    Trace::from_vec(steps, width, data).unwrap()
}

fn random_trace(rng: &mut impl Rng, steps: usize, width: usize) -> Trace {
    trace(steps, width, (0..steps * width).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

/// Per-step cross-entropy without the max shift.
fn naive_ce(row: &[f64], y: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[y].exp() / z).ln()
}

fn naive_max_windows(out: &Trace, windows: &[Window]) -> f64 {
    let mut total = 0.0;
    for w in windows {
        let maxes: Vec<f64> = (0..out.width)
            .map(|n| (w.start..w.end).map(|t| out.get(t, n)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        total += naive_ce(&maxes, w.label as usize);
    }
    total / windows.len() as f64
}

fn fd_check(kind: LossKind, out: &Trace, target: Target<'_>) {
    let (_, grad) = loss_and_grad(kind, out, target).unwrap();
    let eps = 1e-6;
    for i in 0..out.data.len() {
        let mut up = out.clone();
        up.data[i] += eps;
        let mut down = out.clone();
        down.data[i] -= eps;
        let fd = (loss_and_grad(kind, &up, target).unwrap().0 - loss_and_grad(kind, &down, target).unwrap().0) / (2.0 * eps);
        assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-8);
    }
}

#[test]
fn loss_sum_examples() {
    for steps in 1..5 {
        let out = trace(steps, 2, vec![0.3; steps * 2]);
        assert_abs_diff_eq!(loss_sum(&out, 1).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
    }
    let out = trace(2, 3, vec![800.0, 0.0, 0.0, 900.0, -5.0, 1.0]);
    assert!(loss_sum(&out, 0).unwrap() < 1e-300);
    let crafted = vec![0.2, -1.1, 0.7, 1.5, 0.4, -0.3];
    let out = trace(2, 3, crafted.clone());
    let want = (naive_ce(&crafted[0..3], 2) + naive_ce(&crafted[3..6], 2)) / 2.0;
    assert_abs_diff_eq!(loss_sum(&out, 2).unwrap(), want, epsilon = 1e-15);
    assert!(loss_sum(&out, 3).is_err());
    let bad = trace(2, 3, vec![0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]);
    assert!(matches!(loss_sum(&bad, 0), Err(SnnError::NonFinite { .. })));
}

#[test]
fn loss_max_examples() {
    let out = trace(4, 3, [0.5, -0.2, 1.0].repeat(4));
    let all = [Window { start: 0, end: 4, label: 1 }];
    assert_abs_diff_eq!(loss_max_windows(&out, &all).unwrap(), naive_ce(&[0.5, -0.2, 1.0], 1), epsilon = 1e-15);

    // Neuron 0 peaks in the first window, neuron 1 in the second, equally.
    let out = trace(4, 2, vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    let opposite = [Window { start: 0, end: 2, label: 1 }, Window { start: 2, end: 4, label: 0 }];
    assert_abs_diff_eq!(
        loss_max_windows(&out, &opposite).unwrap(),
        naive_ce(&[2.0, 0.0], 1),
        epsilon = 1e-15
    );
    let symmetric = trace(4, 2, vec![1.0; 8]);
    assert_abs_diff_eq!(loss_max_windows(&symmetric, &opposite).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let out = random_trace(&mut rng, 12, 4);
        let windows: Vec<Window> = (0..3)
            .map(|i| Window { start: 4 * i, end: 4 * i + rng.gen_range(1..=4), label: rng.gen_range(0..4) })
            .collect();
        assert_abs_diff_eq!(loss_max_windows(&out, &windows).unwrap(), naive_max_windows(&out, &windows), epsilon = 1e-12);
    }
    assert!(loss_max_windows(&out, &[]).is_err());
}

#[test]
fn window_validation() {
    let w = |start, end| Window { start, end, label: 0 };
    assert!(validate_windows(&[w(0, 3), w(3, 5)], 5, 2).is_ok());
    assert!(validate_windows(&[w(0, 3), w(2, 5)], 5, 2).is_err());
    assert!(validate_windows(&[w(2, 2)], 5, 2).is_err());
    assert!(validate_windows(&[w(2, 6)], 5, 2).is_err());
    assert!(validate_windows(&[Window { start: 0, end: 1, label: 2 }], 5, 2).is_err());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let out = random_trace(&mut rng, 6, 3);
        fd_check(LossKind::SumSoftmax, &out, Target::Class(1));
        fd_check(LossKind::DoubleSoftmax, &out, Target::Class(2));
        let windows = [Window { start: 0, end: 3, label: 0 }, Window { start: 3, end: 6, label: 2 }];
        fd_check(LossKind::MaxOverWindows, &out, Target::Windows(&windows));
    }
}

#[test]
fn loss_kind_must_match_target() {
    let out = trace(2, 2, vec![0.0; 4]);
    let windows = [Window { start: 0, end: 2, label: 0 }];
    assert!(loss_and_grad(LossKind::SumSoftmax, &out, Target::Windows(&windows)).is_err());
    assert!(loss_and_grad(LossKind::MaxOverWindows, &out, Target::Class(0)).is_err());
}

#[test]
fn tau_regularizer_examples() {
    assert_eq!(tau_regularizer([&[0.25, 0.25, 0.25][..]]), 0.0);
    assert_abs_diff_eq!(tau_regularizer([&[0.1, 0.3][..]]), 0.02, epsilon = 1e-15);
    assert_abs_diff_eq!(tau_regularizer([&[0.6, 0.8][..]]), 0.02, epsilon = 1e-15);
    assert_abs_diff_eq!(tau_regularizer([&[0.1, 0.3][..], &[0.5][..]]), 0.02, epsilon = 1e-15);
    let g = tau_regularizer_grad(&[0.1, 0.3]);
    assert_abs_diff_eq!(g[0], -0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(g[1], 0.2, epsilon = 1e-15);
}

#[test]
fn dropout_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert!(dropout_mask(100, 0.0, &mut rng).unwrap().iter().all(|&m| m == 1.0));
    let mask = dropout_mask(1_000_000, 0.1, &mut rng).unwrap();
    let kept = mask.iter().filter(|&&m| m != 0.0).count() as f64 / 1e6;
    assert!((kept - 0.9).abs() <= 0.002, "{kept}");
    assert!(mask.iter().all(|&m| m == 0.0 || m == 1.0 / 0.9));
    let mean = mask.iter().sum::<f64>() / 1e6;
    assert!((mean - 1.0).abs() < 0.003);
    assert!(dropout_mask(3, 1.0, &mut rng).is_err());
    assert!(dropout_mask(3, -0.1, &mut rng).is_err());
}

#[test]
fn scoring_perfect_and_chance() {
    // Voltages that single out the right class every step.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let y = rng.gen_range(0..4);
        let data = (0..10 * 4).map(|i| if i % 4 == y { 5.0 } else { 0.0 }).collect();
        let out = trace(10, 4, data);
        assert_eq!(score(LossKind::SumSoftmax, &out, Target::Class(y as u32)), (1, 1));
        assert_eq!(score(LossKind::DoubleSoftmax, &out, Target::Class(y as u32)), (1, 1));
    }
    let windows = [Window { start: 0, end: 5, label: 0 }, Window { start: 5, end: 10, label: 1 }];
    let mut data = vec![0.0; 20];
    data[2 * 2] = 3.0;
    data[7 * 2 + 1] = 3.0;
    assert_eq!(score(LossKind::MaxOverWindows, &trace(10, 2, data), Target::Windows(&windows)), (2, 2));

    let mut correct = 0;
    let n = 20_000;
    for _ in 0..n {
        let out = random_trace(&mut rng, 5, 4);
        correct += score(LossKind::SumSoftmax, &out, Target::Class(rng.gen_range(0..4))).0;
    }
    let acc = correct as f64 / n as f64;
    // Binomial std at p = 1/4 is about 0.003.
    assert!((acc - 0.25).abs() < 0.015, "{acc}");
}

proptest! {
    #[test]
    fn losses_shift_invariant(values in prop::collection::vec(-5.0f64..5.0, 18),
                              shifts in prop::collection::vec(-50.0f64..50.0, 6)) {
        let out = trace(6, 3, values.clone());
        let shifted = trace(6, 3, values.iter().enumerate().map(|(i, v)| v + shifts[i / 3]).collect());
        let a = loss_sum(&out, 1).unwrap();
        let b = loss_sum(&shifted, 1).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert_eq!(predict_class(LossKind::SumSoftmax, &out), predict_class(LossKind::SumSoftmax, &shifted));
        // A constant across the whole trace keeps the windowed maxima ordered.
        let constant = trace(6, 3, values.iter().map(|v| v + shifts[0]).collect());
        let windows = [Window { start: 0, end: 2, label: 0 }, Window { start: 3, end: 6, label: 2 }];
        let c = loss_max_windows(&out, &windows).unwrap();
        let d = loss_max_windows(&constant, &windows).unwrap();
        prop_assert!((c - d).abs() <= 1e-9);
        prop_assert_eq!(predict_windows(&out, &windows), predict_windows(&constant, &windows));
    }

    #[test]
    fn tau_regularizer_shift_invariant_and_positive(taus in prop::collection::vec(0.02f64..2.0, 2..20),
                                                    shift in 0.0f64..1.0) {
        let shifted: Vec<f64> = taus.iter().map(|t| t + shift).collect();
        let a = tau_regularizer([&taus[..]]);
        prop_assert!((a - tau_regularizer([&shifted[..]])).abs() <= 1e-12);
        let uniform = taus.iter().all(|&t| t == taus[0]);
        prop_assert!(uniform || a > 0.0);
    }
}

/// Two classes that differ in which half of the channels fires.
fn toy_dataset(n: usize, seed: u64, grid: SimGrid) -> SpikeDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high = Poisson::new(0.4).unwrap();
    let low = Poisson::new(0.02).unwrap();
    let channels = 4;
    let mut ds = SpikeDataset::empty(grid, channels, false);
    for i in 0..n {
        let label = (i % 2) as u32;
        let sample: Vec<u8> = (0..grid.steps * channels)
            .map(|j| {
                let hot = (j % channels) / 2 == label as usize;
                let d = if hot { &high } else { &low };
                d.sample(&mut rng) as u8
            })
            .collect();
        ds.push(&sample, label, None).unwrap();
    }
    ds
}

fn toy_setup() -> (NetworkSpec, NetworkParams, DataSplits, TrainConfig) {
    let grid = SimGrid::new(0.01, 20).unwrap();
    let spec = NetworkSpec {
        grid,
        input_size: 4,
        hidden: vec![HiddenSpec::dense(8)],
        output_size: 2,
        tau_out: 0.2,
    };
    let params = init_network(&spec, &[0.05], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let data = DataSplits {
        train: toy_dataset(256, 10, grid),
        valid: Some(toy_dataset(32, 11, grid)),
        test: Some(toy_dataset(32, 12, grid)),
    };
    let mut config = TrainConfig::default();
    config.optim.epochs = 20;
    config.optim.batch_size = 16;
    config.optim.dropout = 0.0;
    (spec, params, data, config)
}

#[test]
fn toy_task_is_learned() {
    let (spec, params, data, config) = toy_setup();
    let outcome = train(&spec, params, &config, &data).unwrap();
    let m = &outcome.metrics;
    assert_eq!(m.epochs.len(), 21);
    let best_train = m.epochs.iter().map(|e| e.train_accuracy).fold(0.0, f64::max);
    assert!(best_train >= 0.99, "train accuracy {best_train}");
    let clean = evaluate(&spec, &outcome.last, &data.train, config.loss).unwrap();
    assert!(clean.accuracy >= 0.99, "{clean:?}");
    assert!(m.epochs.iter().all(|e| e.tau.is_none()));
    let best_valid = m.epochs.iter().filter_map(|e| e.valid).map(|v| v.accuracy).fold(0.0, f64::max);
    assert_eq!(m.best().valid.unwrap().accuracy, best_valid);
}

#[test]
fn zero_epochs_evaluates_initialization() {
    let (spec, params, data, mut config) = toy_setup();
    config.optim.epochs = 0;
    let outcome = train(&spec, params.clone(), &config, &data).unwrap();
    assert_eq!(outcome.best, params);
    assert_eq!(outcome.last, params);
    assert_eq!(outcome.metrics.epochs.len(), 1);
    let init = evaluate(&spec, &params, data.test.as_ref().unwrap(), config.loss).unwrap();
    assert_eq!(outcome.metrics.epochs[0].test, Some(init));
}

#[test]
fn training_is_deterministic_with_tau_and_dropout() {
    let (spec, params, data, mut config) = toy_setup();
    config.optim.epochs = 3;
    config.optim.dropout = 0.2;
    config.optim.train_tau = true;
    let a = train(&spec, params.clone(), &config, &data).unwrap();
    let b = train(&spec, params.clone(), &config, &data).unwrap();
    let strip = |m: &Metrics| {
        m.epochs
            .iter()
            .map(|e| EpochMetrics { wall_seconds: 0.0, ..e.clone() })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert_eq!(a.last, b.last);
    assert!(a.metrics.last().tau.as_ref().unwrap().len() == 1);
    assert_ne!(a.last.hidden[0].tau, params.hidden[0].tau);
    assert_eq!(a.last.readout.tau, params.readout.tau);
    config.optim.seed = 1;
    let c = train(&spec, params, &config, &data).unwrap();
    assert_ne!(a.last, c.last);
}

#[test]
fn evaluation_is_pure() {
    let (spec, params, data, config) = toy_setup();
    let a = evaluate(&spec, &params, &data.train, config.loss).unwrap();
    let b = evaluate(&spec, &params, &data.train, config.loss).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.total, 256);
}

#[test]
fn divergence_is_reported() {
    let (spec, params, data, mut config) = toy_setup();
    // Two steps of this size overflow the weights to infinity.
    config.optim.schedule.lr0 = f64::MAX;
    match train(&spec, params, &config, &data) {
        Err(SnnError::Diverged { epoch, .. }) => assert!(epoch < config.optim.epochs),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics.best_epoch)),
    }
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (spec, params, mut data, config) = toy_setup();
    data.train = toy_dataset(4, 1, SimGrid::new(0.01, 10).unwrap());
    assert!(train(&spec, params, &config, &data).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let (spec, params, data, mut config) = toy_setup();
    config.optim.epochs = 2;
    config.optim.train_tau = true;
    let outcome = train(&spec, params, &config, &data).unwrap();
    let ckpt = Checkpoint {
        spec: spec.clone(),
        params: outcome.last.clone(),
        optimizer: Some(outcome.optimizer.clone()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.tsnn");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    let test = data.test.as_ref().unwrap();
    assert_eq!(
        evaluate(&spec, &loaded.params, test, config.loss).unwrap(),
        evaluate(&spec, &outcome.last, test, config.loss).unwrap()
    );

    let bare = Checkpoint { optimizer: None, ..ckpt.clone() };
    assert_eq!(Checkpoint::from_bytes(&bare.to_bytes().unwrap(), &path).unwrap(), bare);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bytes, &path), Err(SnnError::Checksum { .. })));
    let mut bad_magic = std::fs::read(&path).unwrap();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic, &path), Err(SnnError::Format { .. })));
    let full = std::fs::read(&path).unwrap();
    assert!(Checkpoint::from_bytes(&full[..full.len() - 9], &path).is_err());
}
