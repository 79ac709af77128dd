//! `dacnet` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure during training or inference, 1 anything else.

mod commands;
mod config;
mod map;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dacnet::data::Partition;
use dacnet::Error;

use commands::{Report, SynthArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "dacnet", version, about = "Hyperspectral classification with dynamic attention 3D convolutions")]
struct Cli {
    /// Print a JSON document on stdout instead of a human summary.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled cube.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stratified train/validation/test split of the labelled pixels.
    Split {
        #[arg(long, env = "DACNET_DATA")]
        data: PathBuf,
        /// Train:validation:test weights.
        #[arg(long, default_value = "5:1:4", value_parser = parse_ratios)]
        ratios: [u32; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write checkpoints, the epoch log and the resolved config.
    Train {
        #[arg(long, env = "DACNET_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DACNET_DATA")]
        data: Option<PathBuf>,
        #[arg(long, env = "DACNET_OUT_DIR")]
        out_dir: Option<PathBuf>,
        /// Use this split instead of drawing one from the config.
        #[arg(long)]
        split: Option<PathBuf>,
        /// No per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Accuracy metrics of a checkpoint on one split partition.
    Eval {
        #[arg(long, env = "DACNET_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "DACNET_DATA")]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        partition: Part,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer parameter and multiply-add counts of a configuration.
    Audit {
        #[arg(long, env = "DACNET_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        bands: usize,
        #[arg(long, default_value_t = 16)]
        classes: usize,
        /// Where to write the JSON report; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify pixels and write a PGM class map with a JSON legend.
    Predict {
        #[arg(long, env = "DACNET_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "DACNET_DATA")]
        data: PathBuf,
        #[arg(long)]
        out_map: PathBuf,
        /// Classify unlabelled pixels too.
        #[arg(long)]
        all_pixels: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

fn parse_ratios(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split([':', ',']).collect();
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("bad ratio {p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    nums.try_into().map_err(|_| format!("expected three ratios like 5:1:4, got {s:?}"))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 2,
                Error::Numeric(_) => 4,
                Error::Data(_)
                | Error::Shape(_)
                | Error::Format(_)
                | Error::State(_)
                | Error::Io(_)
                | Error::Json(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<Report> {
    match cli.command {
        Command::Synth { out, height, width, bands, classes, noise, seed } => {
            commands::synth(&SynthArgs { out, height, width, bands, classes, noise, seed })
        }
        Command::Split { data, ratios, seed, out } => commands::split(&data, ratios, seed, &out),
        Command::Train { config, data, out_dir, split, quiet } => {
            commands::train_cmd(&TrainArgs { config, data, out_dir, split, quiet: quiet || cli.json })
        }
        Command::Eval { checkpoint, data, split, partition, out } => {
            let part = match partition {
                Part::Train => Partition::Train,
                Part::Val => Partition::Val,
                Part::Test => Partition::Test,
            };
            commands::eval(&checkpoint, &data, &split, part, out.as_deref())
        }
        Command::Audit { config, bands, classes, out } => {
            commands::audit_cmd(config.as_deref(), bands, classes, out.as_deref())
        }
        Command::Predict { checkpoint, data, out_map, all_pixels } => {
            commands::predict_cmd(&checkpoint, &data, &out_map, all_pixels)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report.json).expect("report serializes"));
            } else {
                print!("{}", report.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_accept_colons_and_commas() {
        assert_eq!(parse_ratios("5:1:4").unwrap(), [5, 1, 4]);
        assert_eq!(parse_ratios("2,1,7").unwrap(), [2, 1, 7]);
        assert!(parse_ratios("5:1").is_err());
        assert!(parse_ratios("a:1:1").is_err());
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e).context("wrapped"));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::Data("x".into())), 3);
        assert_eq!(code(Error::Numeric("x".into())), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
