//! `bass`: band-adaptive spectral-spatial classification of
//! hyperspectral scenes.

use bassnet::run::{
    cmd_eval, cmd_gradcheck, cmd_map, cmd_split, cmd_train, GradcheckOptions, RunConfig,
    SplitChoice,
};
use bassnet::{gradcheck, Error};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "bass",
    version,
    about = "Band-adaptive spectral-spatial networks for hyperspectral pixel classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. --set schedule.epochs=50.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::from_file(&self.config, &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw the stratified split and write manifest.csv plus classes.csv.
    Split(ConfigArgs),
    /// Train, checkpointing every epoch, then score the test split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a manifest.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to read; defaults to manifest.csv in the output dir.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Which split to score: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render a thematic map as binary PPM.
    Map {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output path; defaults to map.ppm in the output dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Color the label raster instead of predictions.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Compare backpropagated gradients against finite differences on
    /// reduced configurations.
    Gradcheck {
        /// Restrict to one configuration (1-4); default runs all four.
        #[arg(long)]
        configuration: Option<u8>,
        /// Restrict parameter sharing to "on" or "off"; default runs both.
        #[arg(long)]
        parameter_sharing: Option<String>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

fn parse_sharing(raw: Option<&str>) -> Result<Option<bool>, Error> {
    match raw {
        None => Ok(None),
        Some("on") => Ok(Some(true)),
        Some("off") => Ok(Some(false)),
        Some(other) => Err(Error::config(format!(
            "parameter sharing must be \"on\" or \"off\", got {:?}",
            other
        ))),
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Split(args) => {
            let config = args.load()?;
            let outcome = cmd_split(&config)?;
            for warning in &outcome.warnings {
                eprintln!("warning: {}", warning);
            }
            print!(
                "{}",
                bassnet::data::io::class_table_csv(&outcome.class_map, &outcome)
            );
            println!("manifest written to {}", config.manifest_path().display());
        }
        Command::Train { config, resume } => {
            let config = config.load()?;
            let summary = cmd_train(&config, resume.as_deref(), |line| println!("{}", line))?;
            println!(
                "best epoch {} with validation accuracy {:.4}{}",
                summary.best_epoch,
                summary.best_val_acc,
                if summary.stopped_early {
                    " (stopped early)"
                } else {
                    ""
                }
            );
            if let Some(report) = &summary.report {
                print!("{}", report.to_table());
            }
            println!("artifacts in {}", config.output_dir.display());
        }
        Command::Eval {
            config,
            checkpoint,
            manifest,
            split,
        } => {
            let config = config.load()?;
            let which: SplitChoice = split.parse()?;
            let report = cmd_eval(&config, &checkpoint, manifest.as_deref(), which)?;
            print!("{}", report.to_table());
        }
        Command::Map {
            config,
            checkpoint,
            out,
            ground_truth,
        } => {
            let config = config.load()?;
            let path = cmd_map(&config, checkpoint.as_deref(), out.as_deref(), ground_truth)?;
            println!("map written to {}", path.display());
        }
        Command::Gradcheck {
            configuration,
            parameter_sharing,
            seed,
            step,
            tolerance,
        } => {
            let opts = GradcheckOptions {
                configuration,
                parameter_sharing: parse_sharing(parameter_sharing.as_deref())?,
                seed,
                step,
                tolerance,
            };
            let reports = cmd_gradcheck(&opts)?;
            let mut all_passed = true;
            for report in &reports {
                println!(
                    "configuration {} sharing {}: max_rel_err {:.3e} tolerance {:.1e} {}",
                    report.configuration,
                    if report.parameter_sharing { "on" } else { "off" },
                    report.max_rel_err,
                    report.tolerance,
                    if report.passed { "PASS" } else { "FAIL" }
                );
                for layer in &report.layers {
                    println!(
                        "  {:<24} max_rel_err {:.3e} ({} values)",
                        layer.path, layer.max_rel_err, layer.checked
                    );
                }
                all_passed &= report.passed;
            }
            if !all_passed {
                return Err(Error::numeric("gradient check failed"));
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version exit cleanly; usage mistakes are config errors
            if e.use_stderr() {
                let _ = e.print();
                std::process::exit(1);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {}", err);
            std::process::exit(err.exit_code());
        }
    }
}
