//! Datasets, networks and training trials built from a [`RunConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempo_snn::datasets::{load_shd_file, mtsxor_generate, read_cache, MtsXorConfig, SpikeDataset};
use tempo_snn::hierarchy::conv_schedules;
use tempo_snn::init::init_network_scaled;
use tempo_snn::training::{train, DataSplits, TrainOutcome};
use tempo_snn::{HiddenSpec, NetworkParams, NetworkSpec};

use crate::config::{trial_seed, LayerType, RunConfig, Task};
use crate::CliError;

/// Train and test sets of one trial, before the validation split.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: SpikeDataset,
    pub test: Option<SpikeDataset>,
}

/// MTS-XOR generator settings of trial `trial`.
pub fn mtsxor_config(cfg: &RunConfig, trial: usize) -> MtsXorConfig {
    MtsXorConfig {
        seed: trial_seed(cfg.mtsxor.seed, trial),
        ..cfg.mtsxor.clone()
    }
}

/// Generated train and test sets: one stream of `n_train + n_test` samples.
pub fn generate_mtsxor(cfg: &RunConfig, trial: usize) -> Result<TaskData, CliError> {
    let (n_train, n_test) = (cfg.data.n_train, cfg.data.n_test);
    let all = mtsxor_generate(&mtsxor_config(cfg, trial), n_train + n_test)?;
    let train = all.subset(&(0..n_train).collect::<Vec<_>>());
    let test = (n_test > 0).then(|| all.subset(&(n_train..n_train + n_test).collect::<Vec<_>>()));
    Ok(TaskData { train, test })
}

fn load_events(cfg: &RunConfig, path: &std::path::Path) -> Result<SpikeDataset, CliError> {
    let classes = cfg.task.classes().expect("event tasks have a fixed class count");
    Ok(load_shd_file(path, cfg.grid()?, classes)?)
}

pub fn load_data(cfg: &RunConfig, trial: usize) -> Result<TaskData, CliError> {
    match cfg.task {
        Task::Mtsxor => generate_mtsxor(cfg, trial),
        Task::Shd | Task::Ssc => {
            let train = load_events(cfg, cfg.data.train.as_deref().expect("validated"))?;
            let test = cfg.data.test.as_deref().map(|p| load_events(cfg, p)).transpose()?;
            Ok(TaskData { train, test })
        }
        Task::CustomCache => {
            let dt = cfg.network.dt;
            let train = read_cache(cfg.data.train.as_deref().expect("validated"), dt)?;
            let test = cfg.data.test.as_deref().map(|p| read_cache(p, dt)).transpose()?;
            Ok(TaskData { train, test })
        }
    }
}

/// Validation split per the configuration. The split seed is the trial's
/// training seed.
pub fn make_splits(cfg: &RunConfig, data: TaskData, trial: usize) -> Result<DataSplits, CliError> {
    if cfg.data.test_as_valid {
        return Ok(DataSplits {
            train: data.train,
            valid: data.test.clone(),
            test: data.test,
        });
    }
    if cfg.data.valid_fraction > 0.0 {
        let (train, valid) = data
            .train
            .split(cfg.data.valid_fraction, trial_seed(cfg.optim.seed, trial))?;
        return Ok(DataSplits {
            train,
            valid: Some(valid),
            test: data.test,
        });
    }
    Ok(DataSplits {
        train: data.train,
        valid: None,
        test: data.test,
    })
}

pub fn build_spec(cfg: &RunConfig, data: &TaskData) -> Result<NetworkSpec, CliError> {
    let net = &cfg.network;
    let classes = data
        .test
        .iter()
        .map(SpikeDataset::num_classes)
        .fold(data.train.num_classes(), usize::max);
    let output_size = net.outputs.or(cfg.task.classes()).unwrap_or(classes);
    let hidden = match net.kind {
        LayerType::Dense => vec![HiddenSpec::dense(net.size); net.layers],
        LayerType::Conv => {
            let (kernels, dilations) = conv_schedules(&cfg.hierarchy.conv_schedule(net.layers))?;
            kernels
                .into_iter()
                .zip(dilations)
                .map(|(k, d)| HiddenSpec::conv(net.size, k, d))
                .collect()
        }
    };
    let spec = NetworkSpec {
        grid: data.train.grid,
        input_size: data.train.channels,
        hidden,
        output_size,
        tau_out: net.tau_out,
    };
    spec.validate()?;
    Ok(spec)
}

/// Initial parameters of trial `trial`.
pub fn init_params(cfg: &RunConfig, spec: &NetworkSpec, trial: usize) -> Result<NetworkParams, CliError> {
    let means = cfg.hierarchy.tau_schedule(spec.hidden.len()).means(&spec.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.optim.seed, trial));
    Ok(init_network_scaled(spec, &means, cfg.network.scaling, &mut rng)?)
}

/// Everything one training trial produced.
#[derive(Clone, Debug)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub init: NetworkParams,
    pub outcome: TrainOutcome,
}

pub fn run_trial(cfg: &RunConfig, index: usize) -> Result<Trial, CliError> {
    let data = load_data(cfg, index)?;
    let spec = build_spec(cfg, &data)?;
    let init = init_params(cfg, &spec, index)?;
    let splits = make_splits(cfg, data, index)?;
    let outcome = train(&spec, init.clone(), &cfg.train_config(index), &splits)?;
    Ok(Trial {
        index,
        seed: trial_seed(cfg.optim.seed, index),
        spec,
        init,
        outcome,
    })
}
