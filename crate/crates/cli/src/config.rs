//! Run configuration: one TOML file, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempo_snn::autograd::GradcheckConfig;
use tempo_snn::datasets::MtsXorConfig;
use tempo_snn::hierarchy::{ConvSchedule, TauSchedule, TauShape};
use tempo_snn::init::WeightScaling;
use tempo_snn::snn::DEFAULT_TAU_OUT;
use tempo_snn::training::{LossKind, OptimSpec, TrainConfig};
use tempo_snn::SimGrid;

use crate::CliError;

/// Environment variables that may replace path settings.
pub const ENV_TRAIN: &str = "TEMPO_SNN_TRAIN";
pub const ENV_TEST: &str = "TEMPO_SNN_TEST";
pub const ENV_OUT: &str = "TEMPO_SNN_OUT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Mtsxor,
    Shd,
    Ssc,
    CustomCache,
}

impl Task {
    pub fn classes(self) -> Option<usize> {
        match self {
            Task::Mtsxor => Some(2),
            Task::Shd => Some(20),
            Task::Ssc => Some(35),
            Task::CustomCache => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Event file (shd/ssc) or cache file (custom-cache) of the training set.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Generated MTS-XOR samples; the test set follows the training set in
    /// the same stream.
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of the training set held out for validation.
    pub valid_fraction: f64,
    /// Select checkpoints on the test set. Leaks test data into model
    /// selection; only for comparison with results reported that way.
    pub test_as_valid: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            n_train: 1000,
            n_test: 500,
            valid_fraction: 0.2,
            test_as_valid: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerType {
    #[default]
    Dense,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    pub size: usize,
    pub kind: LayerType,
    pub tau_out: f64,
    /// Grid of event-file and cache tasks; MTS-XOR uses its own dt and
    /// duration.
    pub dt: f64,
    pub steps: usize,
    /// Readout size for custom-cache tasks; defaults to the number of
    /// classes found in the data.
    pub outputs: Option<usize>,
    pub scaling: WeightScaling,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            size: 10,
            kind: LayerType::Dense,
            tau_out: DEFAULT_TAU_OUT,
            dt: 0.01,
            steps: 100,
            outputs: None,
            scaling: WeightScaling::Xavier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub shape: TauShape,
    pub tau_mu: f64,
    pub delta_tau: f64,
    pub steepness: f64,
    pub centering: f64,
    pub mean_kernel: i64,
    pub delta_ker: i64,
    pub mean_dilation: i64,
    pub delta_dil: i64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        let tau = TauSchedule::default();
        let conv = ConvSchedule::default();
        Self {
            shape: tau.shape,
            tau_mu: tau.tau_mu,
            delta_tau: tau.delta_tau,
            steepness: tau.steepness,
            centering: tau.centering,
            mean_kernel: conv.mean_kernel,
            delta_ker: conv.delta_ker,
            mean_dilation: conv.mean_dilation,
            delta_dil: conv.delta_dil,
        }
    }
}

impl HierarchyConfig {
    pub fn tau_schedule(&self, layers: usize) -> TauSchedule {
        TauSchedule {
            shape: self.shape,
            tau_mu: self.tau_mu,
            delta_tau: self.delta_tau,
            steepness: self.steepness,
            centering: self.centering,
            layers,
        }
    }

    pub fn conv_schedule(&self, layers: usize) -> ConvSchedule {
        ConvSchedule {
            mean_kernel: self.mean_kernel,
            delta_ker: self.delta_ker,
            mean_dilation: self.mean_dilation,
            delta_dil: self.delta_dil,
            layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Defaults to max-over-windows for MTS-XOR and sum-softmax otherwise.
    pub loss: Option<LossKind>,
    pub surrogate_half_width: f64,
    pub reset_grad: bool,
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: None,
            surrogate_half_width: t.surrogate_half_width,
            reset_grad: t.reset_grad,
            augment: t.augment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted key into the run configuration, e.g. `hierarchy.delta_tau`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
    /// Overrides defining the reference cell; every cell reports its median
    /// accuracy minus the reference median.
    pub baseline: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub n_trials: usize,
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub mtsxor: MtsXorConfig,
    pub network: NetworkConfig,
    pub hierarchy: HierarchyConfig,
    pub training: TrainingConfig,
    pub optim: OptimSpec,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Mtsxor,
            n_trials: 1,
            output: None,
            data: DataConfig::default(),
            mtsxor: MtsXorConfig::default(),
            network: NetworkConfig::default(),
            hierarchy: HierarchyConfig::default(),
            training: TrainingConfig::default(),
            optim: OptimSpec::default(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Replaces path settings from the environment.
    pub fn apply_env(&mut self) {
        if let Some(p) = std::env::var_os(ENV_TRAIN) {
            self.data.train = Some(p.into());
        }
        if let Some(p) = std::env::var_os(ENV_TEST) {
            self.data.test = Some(p.into());
        }
        if let Some(p) = std::env::var_os(ENV_OUT) {
            self.output = Some(p.into());
        }
    }

    /// Base seed of both data generation and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.optim.seed = seed;
        self.mtsxor.seed = seed;
        self.gradcheck.seed = seed;
    }

    /// Returns a copy with dotted-key overrides applied, re-validated
    /// through deserialization.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_dotted(&mut tree, key, value.clone())?;
        }
        tree.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn loss(&self) -> LossKind {
        self.training.loss.unwrap_or(match self.task {
            Task::Mtsxor => LossKind::MaxOverWindows,
            _ => LossKind::SumSoftmax,
        })
    }

    pub fn grid(&self) -> Result<SimGrid, CliError> {
        let grid = match self.task {
            Task::Mtsxor => self.mtsxor.grid(),
            _ => SimGrid::new(self.network.dt, self.network.steps),
        };
        grid.map_err(|e| CliError::Config(e.to_string()))
    }

    /// Training configuration of trial `trial`.
    pub fn train_config(&self, trial: usize) -> TrainConfig {
        let mut optim = self.optim.clone();
        optim.seed = trial_seed(self.optim.seed, trial);
        TrainConfig {
            optim,
            loss: self.loss(),
            surrogate_half_width: self.training.surrogate_half_width,
            reset_grad: self.training.reset_grad,
            augment: self.training.augment,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n_trials == 0 {
            return bad("n_trials must be positive".into());
        }
        if self.network.layers == 0 || self.network.size == 0 {
            return bad("network needs at least one hidden layer of at least one neuron".into());
        }
        if !(0.0..1.0).contains(&self.data.valid_fraction) {
            return bad(format!("data.valid_fraction must be in [0, 1), got {}", self.data.valid_fraction));
        }
        match self.task {
            Task::Shd | Task::Ssc | Task::CustomCache if self.data.train.is_none() => {
                return bad(format!("task {:?} needs data.train (or {ENV_TRAIN})", self.task));
            }
            Task::Mtsxor if self.data.n_train == 0 => return bad("data.n_train must be positive".into()),
            _ => {}
        }
        if self.data.test_as_valid && self.task != Task::Mtsxor && self.data.test.is_none() {
            return bad("data.test_as_valid needs a test set".into());
        }
        self.train_config(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.grid()?;
        Ok(())
    }
}

/// Seed of trial `trial` derived from a base seed.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

/// Sets `a.b.c = value` inside a TOML tree, creating tables on the way.
pub fn set_dotted(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key '{key}'")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{key}' does not name a table entry")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("'{key}' does not name a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value` with a TOML value, falling back to a bare string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{text}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_hyperparameter_table() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.optim.schedule.lr0, 0.01);
        assert_eq!(cfg.optim.schedule.start, 25);
        assert_eq!(cfg.optim.schedule.factor, 0.5);
        assert_eq!(cfg.optim.dropout, 0.1);
        assert_eq!(cfg.network.tau_out, 0.2);
        assert_eq!(cfg.data.valid_fraction, 0.2);
        assert_eq!(cfg.loss(), LossKind::MaxOverWindows);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::from_toml("[network]\nlayerz = 3\n").unwrap_err().to_string();
        assert!(err.contains("layerz") && err.contains("line 2"), "{err}");
        assert!(RunConfig::from_toml("task = \"mnist\"").is_err());
    }

    #[test]
    fn overrides() {
        assert_eq!(parse_override("a.b=0.5").unwrap(), ("a.b".into(), toml::Value::Float(0.5)));
        assert_eq!(parse_override("k=-3").unwrap().1, toml::Value::Integer(-3));
        assert_eq!(parse_override("s=tanh").unwrap().1, toml::Value::String("tanh".into()));
        assert!(parse_override("novalue").is_err());
        let cfg = RunConfig::default()
            .with_overrides(&[
                parse_override("hierarchy.delta_tau=0").unwrap(),
                parse_override("hierarchy.shape=linear").unwrap(),
                parse_override("optim.schedule.lr0=0.02").unwrap(),
            ])
            .unwrap();
        assert_eq!(cfg.hierarchy.delta_tau, 0.0);
        assert_eq!(cfg.hierarchy.shape, TauShape::Linear);
        assert_eq!(cfg.optim.schedule.lr0, 0.02);
        assert!(RunConfig::default().with_overrides(&[parse_override("optim.nope=1").unwrap()]).is_err());
        assert!(RunConfig::default().with_overrides(&[parse_override("n_trials.x=1").unwrap()]).is_err());
    }

    #[test]
    fn trial_configs() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(7);
        assert_eq!(cfg.train_config(0).optim.seed, 7);
        assert_eq!(cfg.train_config(3).optim.seed, 10);
        assert_eq!(cfg.mtsxor.seed, 7);
        cfg.task = Task::Shd;
        assert_eq!(cfg.loss(), LossKind::SumSoftmax);
        assert!(cfg.validate().is_err());
    }
}
