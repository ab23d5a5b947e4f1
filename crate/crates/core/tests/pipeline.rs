//! End-to-end use of the public API: generate, initialize, train, save,
//! reload, evaluate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempo_snn::datasets::{mtsxor_generate, read_cache, write_cache, MtsXorConfig};
use tempo_snn::hierarchy::{linear_tau_means, TauSchedule, TauShape};
use tempo_snn::init::{init_network_scaled, WeightScaling};
use tempo_snn::training::{evaluate, train, Checkpoint, DataSplits, LossKind, TrainConfig};
use tempo_snn::{HiddenSpec, NetworkSpec};

fn small_run(seed: u64) -> (NetworkSpec, tempo_snn::training::TrainOutcome, DataSplits) {
    let data = mtsxor_generate(&MtsXorConfig { seed, ..Default::default() }, 160).unwrap();
    let (train_set, test) = data.split(0.25, seed).unwrap();
    let spec = NetworkSpec {
        grid: data.grid,
        input_size: data.channels,
        hidden: vec![HiddenSpec::dense(10), HiddenSpec::dense(10)],
        output_size: 2,
        tau_out: tempo_snn::snn::DEFAULT_TAU_OUT,
    };
    let taus = linear_tau_means(&TauSchedule {
        shape: TauShape::Linear,
        tau_mu: 0.3,
        delta_tau: 0.2,
        layers: 2,
        ..Default::default()
    })
    .unwrap();
    let init = init_network_scaled(&spec, &taus, WeightScaling::LeakCompensated, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap();
    let mut cfg = TrainConfig {
        loss: LossKind::MaxOverWindows,
        ..Default::default()
    };
    cfg.optim.epochs = 3;
    cfg.optim.batch_size = 16;
    cfg.optim.train_tau = true;
    cfg.optim.seed = seed;
    let splits = DataSplits {
        train: train_set,
        valid: None,
        test: Some(test),
    };
    let outcome = train(&spec, init, &cfg, &splits).unwrap();
    (spec, outcome, splits)
}

#[test]
fn train_save_reload_evaluate() {
    let (spec, outcome, splits) = small_run(3);
    let metrics = &outcome.metrics;
    assert_eq!(metrics.last().epoch, 3);
    assert!(metrics.last().tau.as_ref().is_some_and(|t| t.len() == 2));
    assert!(outcome.last.layers().flat_map(|l| l.tau.iter()).all(|&t| t >= 1.5 * spec.grid.dt));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.tsnn");
    Checkpoint {
        spec: spec.clone(),
        params: outcome.last.clone(),
        optimizer: Some(outcome.optimizer.clone()),
    }
    .save(&path)
    .unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, outcome.last);

    let test = splits.test.as_ref().unwrap();
    let a = evaluate(&spec, &outcome.last, test, LossKind::MaxOverWindows).unwrap();
    let b = evaluate(&back.spec, &back.params, test, LossKind::MaxOverWindows).unwrap();
    assert_eq!(a, b);
    assert_eq!(metrics.last().test.as_ref().unwrap().accuracy, a.accuracy);
}

#[test]
fn training_is_reproducible() {
    let (_, a, _) = small_run(11);
    let (_, b, _) = small_run(11);
    assert_eq!(a.last, b.last);
    assert_eq!(a.optimizer, b.optimizer);
}

#[test]
fn cache_round_trip_preserves_dataset() {
    let data = mtsxor_generate(&MtsXorConfig::default(), 40).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tsnc");
    write_cache(&data, &path).unwrap();
    assert_eq!(read_cache(&path, data.grid.dt).unwrap(), data);
}
