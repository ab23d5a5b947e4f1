use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tempo_snn_cli::config::{parse_override, RunConfig, SweepAxis};
use tempo_snn_cli::report::{write_json, Spread};
use tempo_snn_cli::sweep::run_sweep;
use tempo_snn_cli::{run_eval, run_gen_mtsxor, run_gradcheck_cmd, run_train, CliError};

const DEFAULT_OUT: &str = "runs";

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for data generation, initialization and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set hierarchy.delta_tau=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train `n_trials` networks and write metrics, summary and checkpoints.
    Train,
    /// Evaluate a checkpoint on the configured test data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trial whose data the checkpoint is scored on.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train every cell of a one- or two-key grid.
    Sweep {
        /// `KEY=V1,V2,...`; replaces the axes of the configuration.
        #[arg(long = "axis", value_name = "KEY=VALUES")]
        axes: Vec<String>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck,
    /// Write the MTS-XOR train and test sets as cache files.
    GenMtsxor,
}

#[derive(Parser)]
#[command(name = "tempo-snn", version, about = "Train and probe spiking networks with temporal hierarchies")]
struct Invocation {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    let overrides = common
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    cfg = cfg.with_overrides(&overrides)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn parse_axis(text: &str) -> Result<SweepAxis, CliError> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("axis '{text}' is not KEY=V1,V2,...")))?;
    let values = values
        .split(',')
        .map(|v| parse_override(&format!("{key}={v}")).map(|(_, v)| v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepAxis {
        key: key.to_string(),
        values,
    })
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn show(s: Option<Spread>) -> String {
    s.map_or("-".into(), |s| format!("{:.4} [{:.4}, {:.4}]", s.median, s.q25, s.q75))
}

fn execute(inv: Invocation) -> Result<(), CliError> {
    let mut cfg = load_config(&inv.common)?;
    match inv.command {
        Command::Train => {
            let out = out_dir(&cfg);
            let summary = run_train(&cfg, Some(&out))?;
            println!("trials {}  epochs {}", summary.n_trials, summary.epochs);
            println!("train accuracy {}", show(Some(summary.train_accuracy)));
            println!("valid accuracy {}", show(summary.valid_accuracy));
            println!("test accuracy  {}", show(summary.test_accuracy));
            println!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint,
            trial,
            json,
        } => {
            let report = run_eval(&cfg, &checkpoint, trial)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!(
                    "{} accuracy {:.6} ({}/{})  loss {:.6}",
                    report.split, report.accuracy, report.correct, report.total, report.loss
                );
            }
        }
        Command::Sweep { axes } => {
            if !axes.is_empty() {
                cfg.sweep.axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<_, _>>()?;
            }
            let out = out_dir(&cfg);
            let report = run_sweep(&cfg, Some(&out))?;
            for cell in &report.cells {
                let keys: Vec<String> = cell.cell.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let delta = cell.delta.map_or(String::new(), |d| format!("  delta {d:+.4}"));
                println!("{}  accuracy {}{delta}", keys.join(" "), show(Some(cell.summary.accuracy())));
            }
            println!("wrote {}", out.join(tempo_snn_cli::sweep::SWEEP_FILE).display());
        }
        Command::Gradcheck => {
            let report = run_gradcheck_cmd(&cfg)?;
            let mut groups: Vec<(usize, &str, f64)> = Vec::new();
            for g in report.cases.iter().flat_map(|c| &c.groups) {
                match groups.iter_mut().find(|(l, f, _)| *l == g.layer && *f == g.field) {
                    Some(entry) => entry.2 = entry.2.max(g.max_rel_error),
                    None => groups.push((g.layer, g.field, g.max_rel_error)),
                }
            }
            groups.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            for (layer, field, err) in &groups {
                println!("layer {layer} {field:<8} max relative error {err:.3e}");
            }
            println!(
                "{} cases  weights {:.3e} (tol {:.0e})  tau {:.3e} (tol {:.0e})",
                report.cases.len(),
                report.max_rel_weights(),
                cfg.gradcheck.weight_tolerance,
                report.max_rel_tau(),
                cfg.gradcheck.tau_tolerance
            );
            if let Some(out) = &cfg.output {
                std::fs::create_dir_all(out)?;
                write_json(&out.join("gradcheck.json"), &report)?;
            }
            if !report.passed() {
                let mut msg = report.failures.join("; ");
                if report.cases.is_empty() && msg.is_empty() {
                    msg = "no admissible cases".into();
                }
                return Err(CliError::Gradcheck(msg));
            }
            println!("gradcheck passed");
        }
        Command::GenMtsxor => {
            let out = out_dir(&cfg);
            for path in run_gen_mtsxor(&cfg, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let inv = match Invocation::try_parse_from(&args) {
        Ok(inv) => inv,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let pool = thread_pool(inv.common.jobs)?;
    pool.install(|| execute(inv))
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tempo-snn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
