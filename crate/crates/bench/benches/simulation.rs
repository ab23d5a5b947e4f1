use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempo_snn::autograd::{backward_pass, BackwardOptions};
use tempo_snn::datasets::{mtsxor_generate, MtsXorConfig};
use tempo_snn::hierarchy::{linear_tau_means, TauSchedule, TauShape};
use tempo_snn::init::{init_network_scaled, WeightScaling};
use tempo_snn::training::loss::loss_and_grad;
use tempo_snn::training::LossKind;
use tempo_snn::{forward_pass, HiddenSpec, NetworkParams, NetworkSpec};

fn setup(layers: usize, size: usize, conv: bool) -> (NetworkSpec, NetworkParams, Vec<u8>, tempo_snn::datasets::SpikeDataset) {
    let data = mtsxor_generate(&MtsXorConfig::default(), 1).unwrap();
    let hidden = (0..layers)
        .map(|_| if conv { HiddenSpec::conv(size, 3, 2) } else { HiddenSpec::dense(size) })
        .collect();
    let spec = NetworkSpec {
        grid: data.grid,
        input_size: data.channels,
        hidden,
        output_size: 4,
        tau_out: tempo_snn::snn::DEFAULT_TAU_OUT,
    };
    let taus = linear_tau_means(&TauSchedule {
        shape: TauShape::Linear,
        tau_mu: 0.3,
        delta_tau: 0.5,
        layers,
        ..Default::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_network_scaled(&spec, &taus, WeightScaling::LeakCompensated, &mut rng).unwrap();
    let input = data.sample(0).to_vec();
    (spec, params, input, data)
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for (layers, size, conv) in [(2, 10, false), (3, 32, false), (3, 32, true)] {
        let (spec, params, input, _) = setup(layers, size, conv);
        let id = format!("{}x{}{}", layers, size, if conv { "-conv" } else { "" });
        group.bench_function(BenchmarkId::from_parameter(id), |b| {
            b.iter(|| forward_pass(&spec, &params, &input, false).unwrap())
        });
    }
    group.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    let options = BackwardOptions {
        train_tau: true,
        ..Default::default()
    };
    for (layers, size, conv) in [(2, 10, false), (3, 32, false), (3, 32, true)] {
        let (spec, params, input, data) = setup(layers, size, conv);
        let id = format!("{}x{}{}", layers, size, if conv { "-conv" } else { "" });
        group.bench_function(BenchmarkId::from_parameter(id), |b| {
            b.iter(|| {
                let (out, tape) = forward_pass(&spec, &params, &input, true).unwrap();
                let (_, dl) = loss_and_grad(LossKind::MaxOverWindows, &out, data.target(0)).unwrap();
                backward_pass(&tape.unwrap(), &dl, &options).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, forward_backward);
criterion_main!(benches);
