//! Randomized comparison of [`backward_pass`](super::backward_pass) against
//! central finite differences.
//!
//! Finite differences need a forward map that is differentiable, so the
//! reference trajectory is simulated with [`SpikeMode::Relaxed`]: the spike
//! is the piecewise-linear ramp whose derivative is exactly the box
//! surrogate. On that forward map the surrogate backward pass is the true
//! gradient, except where a voltage sits on a box edge (where the ramp has a
//! kink) or where a windowed maximum changes its argmax. Trajectories that
//! come within `edge_margin` of an edge, windows whose maximum is within
//! `argmax_margin` of the runner-up, and networks where some layer receives
//! no gradient at all are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_pass, finite_difference_gradient, BackwardOptions, Gradients};
use crate::datasets::Window;
use crate::error::{Result, SnnError};
use crate::init::xavier_params;
use crate::snn::{
    forward_pass_with, ForwardOptions, HiddenSpec, NetworkParams, NetworkSpec, SimGrid, SpikeMode,
    DEFAULT_TAU_OUT, U_TH,
};
use crate::training::loss::{loss_and_grad, window_argmax_margin, LossKind, Target};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Number of random networks per loss kind.
    pub nets: usize,
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
    pub input_size: usize,
    pub output_size: usize,
    /// Hidden layers; `None` draws a dense layer followed by a random conv
    /// layer for every network.
    pub hidden: Option<Vec<HiddenSpec>>,
    pub hidden_size: usize,
    pub batch: usize,
    pub losses: Vec<LossKind>,
    pub train_tau: bool,
    pub half_width: f64,
    pub reset_grad: bool,
    pub epsilon: f64,
    pub edge_margin: f64,
    /// Minimum gap between the largest and second-largest readout voltage
    /// inside a window; below it a perturbation may move the argmax.
    pub argmax_margin: f64,
    /// Multiplier on the Xavier bound so that voltages reach the box.
    pub weight_gain: f64,
    pub weight_tolerance: f64,
    pub tau_tolerance: f64,
    /// Denominator floor of the relative error. Central differences of an
    /// O(1) loss carry roundoff near `1e-16 / epsilon`, so gradients much
    /// smaller than `noise / tolerance` cannot be compared relatively.
    pub rel_floor: f64,
    pub max_params: usize,
    pub max_attempts: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            nets: 20,
            seed: 0,
            steps: 10,
            dt: 0.01,
            input_size: 4,
            output_size: 3,
            hidden: None,
            hidden_size: 8,
            batch: 2,
            losses: vec![LossKind::SumSoftmax, LossKind::MaxOverWindows],
            train_tau: true,
            half_width: super::DEFAULT_SURROGATE_HALF_WIDTH,
            reset_grad: true,
            epsilon: 1e-5,
            edge_margin: 1e-3,
            argmax_margin: 1e-4,
            weight_gain: 3.0,
            weight_tolerance: 1e-5,
            tau_tolerance: 1e-4,
            rel_floor: 1e-5,
            max_params: 2000,
            max_attempts: 200,
        }
    }
}

/// Worst relative error of one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub layer: usize,
    pub field: &'static str,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub seed: u64,
    pub loss: LossKind,
    pub hidden: Vec<HiddenSpec>,
    pub params: usize,
    /// Fraction of hidden (step, neuron) voltages inside the surrogate box.
    pub active_fraction: f64,
    pub max_rel_weights: f64,
    pub max_rel_tau: f64,
    pub groups: Vec<GroupError>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
    pub failures: Vec<String>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && !self.cases.is_empty()
    }

    pub fn max_rel_weights(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_weights).fold(0.0, f64::max)
    }

    pub fn max_rel_tau(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_tau).fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

struct Case {
    spec: NetworkSpec,
    params: NetworkParams,
    inputs: Vec<Vec<u8>>,
    classes: Vec<u32>,
    windows: Vec<Vec<Window>>,
}

impl Case {
    fn target(&self, i: usize, loss: LossKind) -> Target<'_> {
        match loss {
            LossKind::MaxOverWindows => Target::Windows(&self.windows[i]),
            _ => Target::Class(self.classes[i]),
        }
    }
}

fn draw_case(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Case> {
    let hidden = match &cfg.hidden {
        Some(h) => h.clone(),
        None => vec![
            HiddenSpec::dense(cfg.hidden_size),
            HiddenSpec::conv(cfg.hidden_size, rng.gen_range(2..=3), rng.gen_range(1..=2)),
        ],
    };
    let spec = NetworkSpec {
        grid: SimGrid::new(cfg.dt, cfg.steps)?,
        input_size: cfg.input_size,
        hidden,
        output_size: cfg.output_size,
        tau_out: DEFAULT_TAU_OUT,
    };
    let taus: Vec<Vec<f64>> = spec
        .hidden
        .iter()
        .map(|h| (0..h.size).map(|_| rng.gen_range(0.02..0.1)).collect())
        .collect();
    let mut params = xavier_params(&spec, &taus, rng)?;
    for layer in params.layers_mut() {
        layer.weights.iter_mut().for_each(|w| *w *= cfg.weight_gain);
    }
    let inputs = (0..cfg.batch)
        .map(|_| {
            (0..cfg.steps * cfg.input_size)
                .map(|_| rng.gen_range(0..=2u8))
                .collect()
        })
        .collect();
    let classes = (0..cfg.batch)
        .map(|_| rng.gen_range(0..cfg.output_size as u32))
        .collect();
    // Two disjoint windows in the second and last thirds of the sequence.
    let third = (cfg.steps / 3).max(1);
    let windows = (0..cfg.batch)
        .map(|_| {
            let mut w = vec![Window {
                start: cfg.steps.saturating_sub(third),
                end: cfg.steps,
                label: rng.gen_range(0..cfg.output_size as u32),
            }];
            if cfg.steps >= 3 * third && third > 0 {
                w.insert(
                    0,
                    Window {
                        start: third,
                        end: 2 * third,
                        label: rng.gen_range(0..cfg.output_size as u32),
                    },
                );
            }
            w
        })
        .collect();
    Ok(Case {
        spec,
        params,
        inputs,
        classes,
        windows,
    })
}

fn relaxed(cfg: &GradcheckConfig) -> ForwardOptions<'static> {
    ForwardOptions {
        record: true,
        mode: SpikeMode::Relaxed {
            half_width: cfg.half_width,
        },
        masks: None,
    }
}

/// Mean batch loss on the relaxed forward map.
fn batch_loss(cfg: &GradcheckConfig, case: &Case, params: &NetworkParams, loss: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for (i, input) in case.inputs.iter().enumerate() {
        let opts = ForwardOptions {
            record: false,
            ..relaxed(cfg)
        };
        let (out, _) = forward_pass_with(&case.spec, params, input, opts)?;
        total += loss_and_grad(loss, &out, case.target(i, loss))?.0;
    }
    Ok(total / case.inputs.len() as f64)
}

/// Backward-pass gradient of the mean batch loss plus trajectory statistics
/// `(min distance to a box edge, fraction inside the box, window margin)`.
fn analytic(
    cfg: &GradcheckConfig,
    case: &Case,
    loss: LossKind,
) -> Result<(Gradients, f64, f64, f64)> {
    let options = BackwardOptions {
        train_tau: cfg.train_tau,
        half_width: cfg.half_width,
        reset_grad: cfg.reset_grad,
    };
    let mut grads = Gradients::zeros_like(&case.params);
    let mut edge = f64::INFINITY;
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut margin = f64::INFINITY;
    for (i, input) in case.inputs.iter().enumerate() {
        let (out, tape) = forward_pass_with(&case.spec, &case.params, input, relaxed(cfg))?;
        let tape = tape.expect("recorded");
        for layer in &tape.hidden {
            for &u in &layer.voltages {
                let d = (u - U_TH).abs();
                edge = edge.min((d - cfg.half_width).abs());
                inside += (d < cfg.half_width) as usize;
                total += 1;
            }
        }
        if let Target::Windows(w) = case.target(i, loss) {
            margin = margin.min(window_argmax_margin(&out, w));
        }
        let (_, dl) = loss_and_grad(loss, &out, case.target(i, loss))?;
        grads.accumulate(&backward_pass(&tape, &dl, &options)?);
    }
    grads.scale(1.0 / case.inputs.len() as f64);
    Ok((grads, edge, inside as f64 / total.max(1) as f64, margin))
}

/// Compares analytic and numerical gradients of one case.
fn compare(
    cfg: &GradcheckConfig,
    seed: u64,
    loss: LossKind,
    case: &Case,
    analytic: &Gradients,
    numeric: &Gradients,
    active_fraction: f64,
) -> CaseReport {
    let mut groups = Vec::new();
    let mut max_w: f64 = 0.0;
    let mut max_tau: f64 = 0.0;
    for (l, (a, n)) in analytic.layers().zip(numeric.layers()).enumerate() {
        let w = a
            .weights
            .iter()
            .zip(&n.weights)
            .map(|(&x, &y)| relative_error(x, y, cfg.rel_floor))
            .fold(0.0, f64::max);
        max_w = max_w.max(w);
        groups.push(GroupError {
            layer: l,
            field: "weights",
            max_rel_error: w,
        });
        if cfg.train_tau {
            let t = a
                .tau
                .iter()
                .zip(&n.tau)
                .map(|(&x, &y)| relative_error(x, y, cfg.rel_floor))
                .fold(0.0, f64::max);
            max_tau = max_tau.max(t);
            groups.push(GroupError {
                layer: l,
                field: "tau",
                max_rel_error: t,
            });
        }
    }
    CaseReport {
        seed,
        loss,
        hidden: case.spec.hidden.clone(),
        params: case.params.param_count(),
        active_fraction,
        max_rel_weights: max_w,
        max_rel_tau: max_tau,
        groups,
    }
}

/// Runs `cfg.nets` random networks for every configured loss.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    if !(cfg.half_width > 0.0) {
        report.failures.push(format!(
            "surrogate half-width must be positive, got {}",
            cfg.half_width
        ));
        return Ok(report);
    }
    for &loss in &cfg.losses {
        for net in 0..cfg.nets {
            let seed = cfg.seed.wrapping_add(net as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(loss as u64);
            let mut accepted = None;
            for _ in 0..cfg.max_attempts {
                let case = draw_case(cfg, &mut rng)?;
                if case.params.param_count() > cfg.max_params {
                    return Err(SnnError::InvalidParameter(format!(
                        "gradcheck network has {} parameters, limit is {}",
                        case.params.param_count(),
                        cfg.max_params
                    )));
                }
                let (grads, edge, active, margin) = analytic(cfg, &case, loss)?;
                // Every layer must carry gradient, or the case checks nothing.
                let informative = grads.layers().all(|l| l.weights.iter().any(|&v| v != 0.0));
                if informative && edge > cfg.edge_margin && margin > cfg.argmax_margin {
                    accepted = Some((case, grads, active));
                    break;
                }
            }
            let Some((case, grads, active)) = accepted else {
                report.failures.push(format!(
                    "seed {seed}, {loss:?}: no usable trajectory after {} draws",
                    cfg.max_attempts
                ));
                continue;
            };
            let numeric = finite_difference_gradient(&case.params, cfg.epsilon, cfg.train_tau, |p| {
                batch_loss(cfg, &case, p, loss)
            })?;
            let case_report = compare(cfg, seed, loss, &case, &grads, &numeric, active);
            if !cfg.train_tau && grads.layers().any(|l| l.tau.iter().any(|&v| v != 0.0)) {
                report.failures.push(format!(
                    "seed {seed}, {loss:?}: tau gradients are non-zero although tau training is off"
                ));
            }
            if case_report.max_rel_weights > cfg.weight_tolerance {
                report.failures.push(format!(
                    "seed {seed}, {loss:?}: weight gradient relative error {:.3e} > {:.1e}",
                    case_report.max_rel_weights, cfg.weight_tolerance
                ));
            }
            if case_report.max_rel_tau > cfg.tau_tolerance {
                report.failures.push(format!(
                    "seed {seed}, {loss:?}: tau gradient relative error {:.3e} > {:.1e}",
                    case_report.max_rel_tau, cfg.tau_tolerance
                ));
            }
            report.cases.push(case_report);
        }
    }
    Ok(report)
}
