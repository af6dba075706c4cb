use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridcast::model::Modality;
use gridcast_cli::{
    cmd_eval, cmd_featurize, cmd_fuse, cmd_plot, cmd_render, cmd_simulate, cmd_train, CliError, FusionRule, Predictor, RunConfig,
};

/// Multi-modal top-down semantic grid prediction.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error (missing or
/// mismatched inputs, I/O), 4 training diverged.
#[derive(Parser)]
#[command(name = "gridcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; every key is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Lidar,
    Radar,
    Vision,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Lidar => Modality::Lidar,
            ModalityArg::Radar => Modality::Radar,
            ModalityArg::Vision => Modality::Vision,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Average,
    Priority,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and print its class statistics.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (default: data.samples).
        #[arg(long)]
        samples: Option<usize>,
        /// Seed of the first sample (default: data.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one modality's network inputs for every sample.
    Featurize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Output feature file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one modality's network; writes the checkpoint and a loss log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Output checkpoint (the loss log goes to `<out>.loss.csv`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the configured modalities and both fusion rules.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding `<modality>.ckpt` for each configured modality.
        #[arg(long, required_unless_present = "labels")]
        checkpoints: Option<PathBuf>,
        /// Use the labels as every modality's prediction (sanity check).
        #[arg(long)]
        labels: bool,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse prediction files written by `eval`.
    Fuse {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "priority")]
        rule: RuleArg,
        /// Output prediction file.
        #[arg(long)]
        out: PathBuf,
        /// Input prediction files, in modality order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Draw inputs, labels and predictions of one sample as a PNG.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Prediction files to draw under the labels.
        #[arg(long = "predictions")]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Redraw plots from `curves.csv` or a `*.loss.csv`.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { cfg, out, samples, seed } => {
            let cfg = cfg.load()?;
            let stats = cmd_simulate(&cfg, samples.unwrap_or(cfg.data.samples), seed.unwrap_or(cfg.data.seed), &out)?;
            println!(
                "{} samples, {} labelled cells: vru {:.5}, vehicle {:.5}, background {:.5}",
                stats.samples, stats.cells, stats.vru, stats.vehicle, stats.background
            );
        }
        Command::Featurize { cfg, dataset, modality, out } => {
            let shape = cmd_featurize(&cfg.load()?, &dataset, modality.into(), &out)?;
            println!("per-sample input shape {shape:?}");
        }
        Command::Train { cfg, dataset, modality, out } => {
            let log = cmd_train(&cfg.load()?, modality.into(), &dataset, &out)?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                println!("{} steps, loss {:.5} -> {:.5}", log.len(), first.loss, last.loss);
            }
        }
        Command::Eval {
            cfg,
            dataset,
            checkpoints,
            labels,
            out,
        } => {
            let predictor = match (labels, checkpoints) {
                (true, _) => Predictor::Labels,
                (false, Some(dir)) => Predictor::Checkpoints(dir),
                (false, None) => return Err(CliError::Config("either --checkpoints or --labels is required".into())),
            };
            let report = cmd_eval(&cfg.load()?, &predictor, &dataset, &out)?;
            print!("{}", report.table);
        }
        Command::Fuse { cfg, rule, out, inputs } => {
            let rule = match rule {
                RuleArg::Average => FusionRule::Average,
                RuleArg::Priority => FusionRule::Priority,
            };
            let fused = cmd_fuse(&inputs, rule, &cfg.load()?.fusion.priority, &out)?;
            println!("fused {} samples", fused.sequences.len());
        }
        Command::Render {
            cfg,
            dataset,
            index,
            predictions,
            out,
        } => cmd_render(&cfg.load()?, &dataset, index, &predictions, &out)?,
        Command::Plot { input, out } => {
            for p in cmd_plot(&input, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
