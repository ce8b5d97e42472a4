//! Command-line front end: argument parsing, run configuration and the
//! subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use driftbench_core::probe::ProbeTask;
use serde::Serialize;

use commands::correlate::{load_records, run_correlate, run_fixture, run_report, ReportSettings};
use commands::evaluate::{run_evaluate, EvaluatePaths};
use commands::probe::{run_model_probe, run_toy_probe, toy_config};
use commands::score::{run_score, NativeProjector, ScoreSettings};
use commands::simulate::{run_simulate, SimulateSettings};
use config::{hash_serializable, load_config};
use error::{io_err, CliError, CliResult};

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "DRIFTBENCH_CACHE";

#[derive(Debug, Parser)]
#[command(name = "driftbench", version, about = "Condition drift of autoencoder reconstructions")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Round-trip a dataset through each model and compute every metric.
    Evaluate(EvaluateArgs),
    /// Rank-correlate metric columns across models.
    Correlate(CorrelateArgs),
    /// Train a latent recoverability probe.
    Probe(ProbeArgs),
    /// Run the discrete-world and permutation-autoencoder simulations.
    Simulate(SimulateArgs),
    /// Score generated images against condition maps and reference statistics.
    ScoreControlled(ScoreArgs),
    /// Rebuild reports from stored metrics.json files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set projectors.canny.low=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = CACHE_ENV)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportFlags {
    /// Correlate signed values instead of |ρ| after direction alignment.
    #[arg(long)]
    pub signed: bool,
    #[arg(long)]
    pub no_heatmap: bool,
    #[arg(long)]
    pub no_scatter: bool,
}

impl ReportFlags {
    fn settings(&self) -> ReportSettings {
        ReportSettings {
            abs_mode: !self.signed,
            heatmap: !self.no_heatmap,
            scatter: !self.no_scatter,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fixture {
    Table4,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Use a bundled metric table.
    #[arg(long, conflicts_with = "metrics")]
    pub fixture: Option<Fixture>,
    /// metrics.json files to merge.
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub output: PathBuf,
    #[command(flatten)]
    pub report: ReportFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub output: PathBuf,
    #[command(flatten)]
    pub report: ReportFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Edges,
    Depth,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Train on synthetic step edges with a fixed 4x4-pool latent.
    #[arg(long, conflicts_with_all = ["config", "model"])]
    pub toy: bool,
    #[arg(long, requires = "model")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, requires = "config")]
    pub model: Option<String>,
    #[arg(long, value_enum, default_value = "edges")]
    pub task: TaskArg,
    /// Toy sample count.
    #[arg(long, default_value_t = 320)]
    pub samples: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "probe-out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "8,32,128")]
    pub prop1_sizes: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub generated: PathBuf,
    /// Condition maps: grayscale PNGs or `{height,width,values}` JSON files.
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    /// Reference FeatureStats JSON, or a directory of reference images.
    #[arg(long)]
    pub reference_stats: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "canny")]
    pub projector: NativeProjector,
    #[arg(long, default_value_t = driftbench_core::data::DEFAULT_SIDE)]
    pub side: usize,
    /// Pooling grid of the distribution features.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value = "score.json")]
    pub output: PathBuf,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Evaluate(a) => {
            let loaded = load_config(&a.config, &a.overrides)?;
            let paths = EvaluatePaths {
                output: a.output.unwrap_or_else(|| loaded.resolve(&loaded.config.output_dir)),
                cache: a.cache.unwrap_or_else(|| loaded.resolve(&loaded.config.cache_dir)),
            };
            let m = run_evaluate(&loaded, &paths)?;
            println!(
                "evaluated {} model(s) on {} images; reports in {}",
                m.models.len(),
                m.dataset.images,
                paths.output.display()
            );
        }
        Command::Correlate(a) => {
            let settings = a.report.settings();
            match a.fixture {
                Some(Fixture::Table4) => {
                    let hash = hash_serializable(&("correlate", "table4", &settings));
                    let al = run_fixture(&settings, &hash, &a.output)?;
                    println!("{:<10} {:>8} {:>8} {:>8}", "column", "|ρ|PSNR", "|ρ|rFID", "|ρ|gFID");
                    for r in &al.rows {
                        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                        println!("{:<10} {:>8} {:>8} {:>8}", r.column, f(r.psnr), f(r.rfid), f(r.gfid));
                    }
                }
                None => {
                    if a.metrics.is_empty() {
                        return Err(CliError::config("give --fixture table4 or --metrics FILE..."));
                    }
                    let records = load_records(&a.metrics)?;
                    let hash = hash_serializable(&("correlate", &records.iter().map(|r| &r.name).collect::<Vec<_>>(), &settings));
                    run_correlate(&records, &settings, &hash, &a.output)?;
                    println!("correlated {} models; reports in {}", records.len(), a.output.display());
                }
            }
        }
        Command::Report(a) => {
            let settings = a.report.settings();
            let records = load_records(&a.metrics)?;
            let hash = hash_serializable(&("report", &records.iter().map(|r| &r.name).collect::<Vec<_>>(), &settings));
            run_report(&records, &settings, &hash, &a.output)?;
            println!("reports for {} models in {}", records.len(), a.output.display());
        }
        Command::Probe(a) => {
            let task = match a.task {
                TaskArg::Edges => ProbeTask::Edges,
                TaskArg::Depth => ProbeTask::Depth,
            };
            let report = if a.toy {
                if task != ProbeTask::Edges {
                    return Err(CliError::config("the toy probe only trains edges"));
                }
                let mut cfg = toy_config();
                cfg.lr = a.lr.unwrap_or(cfg.lr);
                cfg.max_epochs = a.epochs.unwrap_or(cfg.max_epochs);
                cfg.seed = a.seed.unwrap_or(cfg.seed);
                cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
                let hash = hash_serializable(&("probe-toy", a.samples, &cfg));
                run_toy_probe(a.samples, &cfg, &hash, &a.output)?
            } else {
                let (Some(config), Some(model)) = (&a.config, &a.model) else {
                    return Err(CliError::config("give --toy or --config FILE --model NAME"));
                };
                let mut overrides = a.overrides.clone();
                if let Some(lr) = a.lr {
                    overrides.push(format!("probe.lr={lr:?}"));
                }
                if let Some(e) = a.epochs {
                    overrides.push(format!("probe.max_epochs={e}"));
                }
                if let Some(s) = a.seed {
                    overrides.push(format!("probe.seed={s}"));
                }
                let loaded = load_config(config, &overrides)?;
                run_model_probe(&loaded, model, task, &a.output)?
            };
            println!(
                "probe ({:?}): test metric {:.4}, best epoch {}/{}{}",
                report.task,
                report.test_metric,
                report.best_epoch,
                report.epochs_run,
                match (report.test_dice, report.baseline_dice) {
                    (Some(d), Some(b)) => format!(", dice {d:.3} vs constant {b:.3}"),
                    _ => String::new(),
                }
            );
        }
        Command::Simulate(a) => {
            let settings = SimulateSettings {
                trials: a.trials,
                seed: a.seed,
                prop1_sizes: a.prop1_sizes,
                side: a.side,
            };
            if settings.trials == 0 {
                return Err(CliError::config("--trials must be positive"));
            }
            let hash = hash_serializable(&("simulate", &settings));
            let report = run_simulate(&settings, &hash)?;
            match &a.output {
                Some(p) => write_json(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
        }
        Command::ScoreControlled(a) => {
            let settings = ScoreSettings {
                generated: a.generated,
                conditions: a.conditions,
                reference_stats: a.reference_stats,
                projector: a.projector,
                side: a.side,
                grid: a.grid,
            };
            let hash = hash_serializable(&("score-controlled", &settings));
            let report = run_score(&settings, &hash)?;
            write_json(&a.output, &report)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!(
                "fid {}, condition L1 {} over {} matched images; results in {}",
                fmt(report.fid),
                fmt(report.l1),
                report.matched,
                a.output.display()
            );
        }
    }
    Ok(())
}
