use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use approxfl::config::{load_config, model_preset, RunConfig};
use approxfl::error::{Result, RunnerError};
use approxfl::experiment::{run_experiment, Prepared, RayonExecutor};
use approxfl::formats::{self, DatasetFormat};
use approxfl::report;

#[derive(Parser)]
#[command(name = "approxfl", version, about = "Energy-aware heterogeneous federated learning simulator")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for client training (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment and write CSV/JSON artifacts.
    Run,
    /// Per-component one-mini-batch energy of C1…C5 and S1…S4.
    Breakdown {
        /// Model preset; defaults to the configuration's model, or resnet20.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Re-derive the MBM correction constants from the exhaustive sweep.
    CalibrateMbm {
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 3, 7])]
        bits: Vec<u8>,
    },
    /// Exhaustive relative-error statistics of every multiplier.
    CharacterizeMultiplier {
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 3, 7])]
        bits: Vec<u8>,
    },
    /// Show per-device shard sizes and class histograms.
    PartitionPreview,
    /// Write the bundled synthetic dataset (train and test files).
    GenDataset {
        #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn stdout_write(f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let mut out = std::io::stdout().lock();
    f(&mut out).map_err(|e| RunnerError::io("<stdout>", e))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| RunnerError::io(&path, e))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run => {
            let cfg = config(cli)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| RunnerError::config("no output directory: pass --out or set output_dir"))?;
            let prepared = Prepared::new(cfg)?;
            let exec = RayonExecutor::new(cli.threads)?;
            let (summary, artifacts) = run_experiment(&prepared, &out, &exec)?;
            println!(
                "top-1 {:.4} ± {:.4}, fleet energy {:.4e} ± {:.4e} J over {} seed(s); summary in {}",
                summary.top1.mean,
                summary.top1.std,
                summary.total_energy_j.mean,
                summary.total_energy_j.std,
                summary.seeds.len(),
                artifacts.summary.display()
            );
            Ok(())
        }
        Command::Breakdown { model, batch } => {
            let (spec, table) = match (model, &cli.config) {
                (Some(name), _) => {
                    let cfg = config(cli)?;
                    let spec =
                        model_preset(name, [3, 8, 8], 10).ok_or_else(|| RunnerError::config(format!("unknown model preset {name:?}")))?;
                    (spec, cfg.energy()?)
                }
                (None, Some(_)) => {
                    let cfg = config(cli)?;
                    let (train, _) = cfg.datasets()?;
                    (cfg.model_spec(train.sample_shape(), train.classes())?, cfg.energy()?)
                }
                (None, None) => (model_preset("resnet20", [3, 32, 32], 10).expect("known preset"), Default::default()),
            };
            let rows = report::energy_breakdown(&spec, &table, *batch)?;
            stdout_write(|o| report::write_breakdown_table(&rows, o))?;
            if let Some(dir) = &cli.out {
                write_json(dir, "breakdown.json", &rows)?;
            }
            Ok(())
        }
        Command::CalibrateMbm { bits } => {
            let rows = report::calibrate(bits)?;
            stdout_write(|o| report::write_calibration_table(&rows, o))?;
            if let Some(dir) = &cli.out {
                write_json(dir, "mbm_calibration.json", &rows)?;
            }
            Ok(())
        }
        Command::CharacterizeMultiplier { bits } => {
            let rows = report::characterize(bits)?;
            stdout_write(|o| report::write_multiplier_table(&rows, o))?;
            if let Some(dir) = &cli.out {
                write_json(dir, "multiplier_error.json", &rows)?;
            }
            Ok(())
        }
        Command::PartitionPreview => {
            let cfg = config(cli)?;
            let (train, _) = cfg.datasets()?;
            let assignment = cfg.assignment(&cfg.fleet.expand()?)?;
            let seed = cfg.seeds[0];
            let rows = report::partition_preview(&train, &cfg.partition_spec(seed), &assignment)?;
            stdout_write(|o| report::write_partition_table(&rows, o))?;
            if let Some(dir) = &cli.out {
                write_json(dir, &format!("partition_seed{seed}.json"), &rows)?;
            }
            Ok(())
        }
        Command::GenDataset { format } => {
            let dir = cli.out.as_deref().ok_or_else(|| RunnerError::config("gen-dataset needs --out"))?;
            std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
            let (format, ext) = match format {
                FormatArg::Binary => (DatasetFormat::Binary, "bin"),
                FormatArg::Csv => (DatasetFormat::Csv, "csv"),
            };
            let (train, test) = formats::generate_bundled()?;
            for (name, data) in [("desk_train", &train), ("desk_test", &test)] {
                let path = dir.join(format!("{name}.{ext}"));
                formats::write_dataset(&path, data, format)?;
                println!("{}: {} samples", path.display(), data.len());
            }
            Ok(())
        }
    }
}
