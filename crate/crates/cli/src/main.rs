mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cdwce_core::data::{load_csv, write_csv};
use cdwce_core::harness::{
    power_sweep, resolve_dataset, run_cross_validation, write_report, DataSource, ExperimentConfig,
    ExperimentReport, RunOptions,
};
use cdwce_core::losses::LossKind;
use cdwce_core::metrics::summary_metrics;
use cdwce_core::model::{predict_dataset, train, MlpModel};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

/// Ordinal classification experiments with class-distance weighted cross-entropy.
#[derive(Debug, Parser)]
#[command(name = "cdwce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Destination CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        /// Loss to train with.
        #[arg(long)]
        loss: Option<LossKind>,
        /// CDW-CE power term (required with --loss cdw_ce).
        #[arg(long)]
        power: Option<f64>,
        /// Destination checkpoint file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate one or more losses against a fixed test set.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        protocol: Protocol,
        /// Comma-separated losses.
        #[arg(long, value_delimiter = ',')]
        loss: Vec<LossKind>,
        /// CDW-CE power term.
        #[arg(long, conflicts_with = "powers")]
        power: Option<f64>,
        /// Comma-separated CDW-CE powers, each cross-validated separately.
        #[arg(long, value_delimiter = ',')]
        powers: Vec<f64>,
        /// Report file; a summary is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate CDW-CE over a grid of powers.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        protocol: Protocol,
        /// Comma-separated powers [default: 1,2,...,10].
        #[arg(long, value_delimiter = ',')]
        powers: Vec<f64>,
        /// Report file; a summary is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved checkpoint on a CSV dataset.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// CSV dataset to score.
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config (or a saved report); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV dataset to use instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Training {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 2e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. 32,32.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct Protocol {
    /// Number of cross-validation folds [default: 10].
    #[arg(long)]
    folds: Option<usize>,
    /// Share of samples held out as the fixed test set [default: 0.15].
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Record wall-clock seconds per run (reports are then no longer reproducible byte for byte).
    #[arg(long)]
    timings: bool,
}

impl Protocol {
    fn options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs,
            record_timings: self.timings,
        }
    }
}

fn usage_error(subcommand: &str, message: &str) -> ! {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand_mut(subcommand).expect("known subcommand");
    sub.error(ErrorKind::MissingRequiredArgument, message).exit()
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => config::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(path) = &common.data {
        config.data = DataSource::Csv(path.clone());
    }
    Ok(config)
}

fn apply_training(config: &mut ExperimentConfig, t: Training) {
    if let Some(v) = t.epochs {
        config.epochs = v;
    }
    if let Some(v) = t.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = t.lr {
        config.lr = v;
    }
    if let Some(v) = t.hidden {
        config.hidden = v;
    }
}

fn apply_protocol(config: &mut ExperimentConfig, p: &Protocol) {
    if let Some(v) = p.folds {
        config.folds = v;
    }
    if let Some(v) = p.test_fraction {
        config.test_fraction = v;
    }
}

fn print_summary(report: &ExperimentReport) {
    println!("experiment {}", report.experiment_id);
    for s in &report.summaries {
        let name = match s.power {
            Some(p) => format!("{} power {p}", s.loss),
            None => s.loss.to_string(),
        };
        println!(
            "{name:<20} qwk {:.4} ± {:.4}  mae {:.4} ± {:.4}  ({} folds)",
            s.mean_qwk, s.std_qwk, s.mean_mae, s.std_mae, s.folds
        );
    }
}

fn finish(report: &ExperimentReport, out: Option<PathBuf>) -> Result<()> {
    print_summary(report);
    if let Some(path) = out {
        write_report(report, &path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let config = base_config(&common)?;
            if let DataSource::Csv(path) = &config.data {
                bail!("gen-data generates synthetic data; got a CSV source {}", path.display());
            }
            let ds = resolve_dataset(&config)?;
            write_csv(&ds, &out)?;
            println!("wrote {} samples in {} groups to {}", ds.len(), ds.group_ids().len(), out.display());
        }
        Command::Train {
            common,
            training,
            loss,
            power,
            out,
        } => {
            let mut config = base_config(&common)?;
            apply_training(&mut config, training);
            let loss = loss.or(config.losses.first().copied()).unwrap_or(LossKind::Ce);
            let power = power.or_else(|| config.powers.first().copied());
            if loss == LossKind::CdwCe && power.is_none() {
                usage_error("train", "--loss cdw_ce requires --power <POWER>");
            }
            let tc = config.train_config(loss, power, config.seed);
            let ds = resolve_dataset(&config)?;
            let fit = train(&ds, &tc)?;
            fit.model.save(&out)?;
            println!("final train loss {:.6}; checkpoint written to {}", fit.final_loss(), out.display());
        }
        Command::Cv {
            common,
            training,
            protocol,
            loss,
            power,
            powers,
            out,
        } => {
            let mut config = base_config(&common)?;
            apply_training(&mut config, training);
            apply_protocol(&mut config, &protocol);
            if !loss.is_empty() {
                config.losses = loss;
            }
            if let Some(p) = power {
                config.powers = vec![p];
            } else if !powers.is_empty() {
                config.powers = powers;
            }
            if config.losses.contains(&LossKind::CdwCe) && config.powers.is_empty() {
                usage_error("cv", "--loss cdw_ce requires --power <POWER> or --powers <LIST>");
            }
            let report = run_cross_validation(&config, protocol.options())?;
            finish(&report, out)?;
        }
        Command::Sweep {
            common,
            training,
            protocol,
            powers,
            out,
        } => {
            let mut config = base_config(&common)?;
            apply_training(&mut config, training);
            apply_protocol(&mut config, &protocol);
            let powers = if !powers.is_empty() {
                powers
            } else if !config.powers.is_empty() {
                config.powers.clone()
            } else {
                (1..=10).map(f64::from).collect()
            };
            let report = power_sweep(&config, &powers, protocol.options())?;
            finish(&report, out)?;
        }
        Command::Eval { model, data } => {
            let model = MlpModel::load(&model)?;
            let ds = load_csv(&data, Some(model.n_classes()))?;
            let preds = predict_dataset(&model, &ds)?;
            let m = summary_metrics(&preds, ds.labels(), ds.n_classes())
                .with_context(|| format!("cannot score {}", data.display()))?;
            println!("qwk = {}\naccuracy = {}\nmae = {}", m.qwk, m.accuracy, m.mae);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
