use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hrel::config::RunConfig;
use hrel::pipeline::{cmd_prune, cmd_report, cmd_score, cmd_train};
use hrel::pruner::SelectionMode;
use hrel::{Error, ErrorKind};

/// Relevance-based filter pruning for LeNet-5 on MNIST.
#[derive(Parser)]
#[command(name = "hrel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline network and fix per-layer kernel widths.
    Train(RunArgs),
    /// Prune and retrain a trained baseline until the filter limits are met.
    Prune {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this checkpoint instead of the run's baseline.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank the filters of an activation dump by relevance.
    Score {
        /// HRAD activation dump.
        hrad: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        sigma_label: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_layer: f64,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run directory.
    Report(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Layerwise,
    Global,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (lenet5_desk, lenet5_paper).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Global threshold percentage; implies `--mode global`.
    #[arg(long = "T", value_name = "PCT")]
    t: Option<f64>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the config's run id.
    #[arg(long)]
    run_id: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> hrel::Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::preset("lenet5_desk")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(dir) = &self.data {
            cfg.data.dir = dir.clone();
        }
        if let Some(id) = &self.run_id {
            cfg.run_id = id.clone();
        }
        cfg.mode = match (self.mode, self.t) {
            (Some(Mode::Layerwise), Some(_)) => {
                return Err(Error::InvalidArgument(
                    "--T only applies to --mode global".into(),
                ))
            }
            (Some(Mode::Layerwise), None) => SelectionMode::Layerwise,
            (_, Some(t)) => SelectionMode::Global { t },
            (Some(Mode::Global), None) => match cfg.mode {
                SelectionMode::Global { t } => SelectionMode::Global { t },
                SelectionMode::Layerwise => {
                    return Err(Error::InvalidArgument("--mode global needs --T".into()))
                }
            },
            (None, None) => cfg.mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> hrel::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let m = cmd_train(&cfg)?;
            println!(
                "{}",
                to_json(&serde_json::json!({
                    "run_id": m.run_id,
                    "baseline_accuracy": m.baseline_accuracy,
                    "sigma": m.sigma,
                    "flops": m.cost.flops,
                    "flops_2x": m.cost.flops_2x,
                    "params": m.cost.params,
                }))
            );
        }
        Command::Prune { run, checkpoint } => {
            let cfg = run.resolve()?;
            let progress = cmd_prune(&cfg, checkpoint.as_deref())?;
            let summary = cmd_report(&cfg.out_dir, &cfg.run_id)?;
            if let Some(reason) = &progress.stop_reason {
                log::warn!("pruning stopped: {reason}");
            }
            println!("{}", to_json(&summary));
        }
        Command::Score {
            hrad,
            sigma_label,
            sigma_layer,
            out,
        } => {
            let scores = cmd_score(&hrad, sigma_label, sigma_layer)?;
            let text = to_json(&scores);
            match out {
                Some(path) => {
                    std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?
                }
                None => println!("{text}"),
            }
        }
        Command::Report(args) => {
            let cfg = args.resolve()?;
            println!("{}", to_json(&cmd_report(&cfg.out_dir, &cfg.run_id)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
