//! `moesep`: data synthesis, training, separation, benchmarking and
//! verification for mixture-of-experts Conformer speech separation.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moesep::bench::{BenchParams, DEFAULT_BENCH_SECONDS, DEFAULT_REPEATS, DEFAULT_WARMUP};

use settings::{Overrides, Settings};

#[derive(Parser, Debug)]
#[command(
    name = "moesep",
    version,
    about = "Mixture-of-experts Conformer speech separation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file; flags take precedence over it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Number of experts per MoE layer (enables MoE on a dense config).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(usize))]
    experts: Option<usize>,
    /// Use the two-gate variant.
    #[arg(long)]
    mmoe: bool,
    #[arg(long, value_name = "X")]
    capacity_factor: Option<f64>,
    /// Separation window length in seconds.
    #[arg(long = "window-s", value_name = "X")]
    window_s: Option<f64>,
    /// Separation window hop in seconds.
    #[arg(long = "hop-s", value_name = "X")]
    hop_s: Option<f64>,
    /// Write per-step, per-expert routing rows as CSV.
    #[arg(long, value_name = "PATH")]
    trace_routing: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic two-talker mixtures and a manifest.
    SynthData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of mixtures.
        #[arg(long, value_name = "N")]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a separation model.
    Train {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Dataset directory (or manifest) from `synth-data`; mixtures are
        /// synthesized on the fly when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Separate a long recording with sliding windows.
    Separate {
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Real-time factor of a checkpoint, or of the configured model against
    /// its dense counterpart.
    BenchRtf {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "X", default_value_t = DEFAULT_BENCH_SECONDS)]
        seconds: f64,
        #[arg(long, value_name = "N", default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, value_name = "N", default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks of every layer and a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Per-layer expert utilisation of a checkpoint in eval mode.
    RoutingReport {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Recording to route; synthetic mixtures are used when absent.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        experts: c.experts,
        mmoe: c.mmoe,
        capacity_factor: c.capacity_factor,
        window_s: c.window_s,
        hop_s: c.hop_s,
        ..Overrides::default()
    }
}

fn run(cli: Cli) -> moesep::Result<ExitCode> {
    match cli.command {
        Command::SynthData { out, count, common } => {
            let s = Settings::resolve(
                common.config.as_deref(),
                &Overrides {
                    count,
                    ..overrides(&common)
                },
            )?;
            commands::synth_data(&s, &out, common.seed)?;
        }
        Command::Train {
            out,
            data,
            steps,
            common,
        } => {
            let s = Settings::resolve(
                common.config.as_deref(),
                &Overrides {
                    steps,
                    ..overrides(&common)
                },
            )?;
            commands::train(
                &s,
                &out,
                data.as_deref(),
                common.trace_routing.as_deref(),
                common.seed,
            )?;
        }
        Command::Separate {
            input,
            checkpoint,
            out,
            common,
        } => {
            let s = Settings::resolve(common.config.as_deref(), &overrides(&common))?;
            commands::separate(&s, &input, &checkpoint, &out)?;
        }
        Command::BenchRtf {
            checkpoint,
            seconds,
            repeats,
            warmup,
            common,
        } => {
            let s = Settings::resolve(common.config.as_deref(), &overrides(&common))?;
            let p = BenchParams {
                seconds,
                repeats,
                warmup,
                seed: common.seed,
            };
            if !(seconds > 0.0) || repeats == 0 {
                return Err(moesep::Error::InvalidArgument(
                    "need seconds > 0 and repeats >= 1".into(),
                ));
            }
            commands::bench(&s, checkpoint.as_deref(), &p)?;
        }
        Command::Gradcheck { common } => {
            Settings::resolve(common.config.as_deref(), &overrides(&common))?;
            if !commands::gradcheck(common.seed)? {
                eprintln!("error: gradcheck-failed: at least one check exceeded its tolerance");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::RoutingReport {
            checkpoint,
            input,
            common,
        } => {
            let s = Settings::resolve(common.config.as_deref(), &overrides(&common))?;
            commands::routing_report(
                &s,
                &checkpoint,
                input.as_deref(),
                common.trace_routing.as_deref(),
                common.seed,
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
