//! `nvcharge`: predictions, emulation, fits and readout optimization for
//! real-time NV charge-state initialization.
//!
//! Exit status: 0 on success, 2 for invalid input, 3 when a numerical
//! procedure fails or a fit does not converge.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "nvcharge", version, about = "Model, emulate, fit and optimize real-time NV charge initialization")]
pub struct Cli {
    /// JSON configuration file; built-in defaults when absent.
    #[arg(long, global = true, env = "NVCHARGE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override one configuration path, e.g. `protocol.delay=0ns`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,

    /// Output file; stdout when absent.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    #[value(name = "SSI_PL")]
    SsiPl,
    #[value(name = "RTI_PL")]
    RtiPl,
    #[value(name = "SSI_SCC")]
    SsiScc,
    #[value(name = "RTI_SCC")]
    RtiScc,
}

impl From<StrategyArg> for nvcharge::optimize::Strategy {
    fn from(s: StrategyArg) -> Self {
        use nvcharge::optimize::Strategy;
        match s {
            StrategyArg::SsiPl => Strategy::SsiPl,
            StrategyArg::RtiPl => Strategy::RtiPl,
            StrategyArg::SsiScc => Strategy::SsiScc,
            StrategyArg::RtiScc => Strategy::RtiScc,
        }
    }
}

/// Flags that override `protocol.*`.
#[derive(Debug, Clone, Default, Args)]
pub struct ProtocolArgs {
    /// Probe power, e.g. `6uW`.
    #[arg(long)]
    pub probe_power: Option<String>,
    /// Probe window, e.g. `5us`.
    #[arg(long)]
    pub probe_duration: Option<String>,
    /// Photon threshold ν.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<i64>,
    /// Control latency, e.g. `550ns`.
    #[arg(long)]
    pub delay: Option<String>,
    /// NV⁻ population after the pump.
    #[arg(long)]
    pub prior: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic fidelity, attempts and time-to-initialize.
    Predict {
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Discrete-event emulation of the feedback loop: per-run CSV plus summary JSON.
    #[command(alias = "simulate")]
    Emulate {
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Summary JSON (ensemble statistics next to the prediction).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Fit histograms or curves as described by a fit spec.
    Fit {
        /// Fit spec JSON; data paths inside it are relative to its directory.
        spec: PathBuf,
    },
    /// Best settings for one strategy at one operation time.
    Optimize {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Operation time, e.g. `1ms`.
        #[arg(long)]
        tau_o: String,
        /// Coherence time for the AC sensitivity, e.g. `800us`.
        #[arg(long)]
        t2: Option<String>,
    },
    /// Speedup over SSI_PL across operation times, as CSV.
    SpeedupCurve {
        /// Comma-separated operation times, e.g. `10us,100us,1ms`.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["from", "to", "points"])]
        tau_o: Vec<String>,
        #[arg(long, requires_all = ["to", "points"])]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        /// Log-spaced points between `--from` and `--to`.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        strategies: Vec<StrategyArg>,
    },
    /// AC magnetic sensitivity of a Hahn-echo measurement.
    Sensitivity {
        #[arg(long)]
        t2: String,
        /// Initialization time; with `--tau-r` and `--sigma-r`/`--snr`.
        #[arg(long, conflicts_with = "strategy")]
        tau_i: Option<String>,
        #[arg(long, conflicts_with = "strategy")]
        tau_r: Option<String>,
        #[arg(long, conflicts_with_all = ["snr", "strategy"])]
        sigma_r: Option<f64>,
        #[arg(long, conflicts_with = "strategy")]
        snr: Option<f64>,
        /// Optimize this strategy instead of taking explicit timings.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Operation time for `--strategy`; defaults to `--t2`.
        #[arg(long, requires = "strategy")]
        tau_o: Option<String>,
    },
    /// Write seeded synthetic histograms, curves and matching fit specs.
    GenFixtures {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// How a command finished when it did not fail outright.
pub enum Status {
    Ok,
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<nvcharge::Error>())
        .any(nvcharge::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(&cli, argv) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("error: fit did not converge; see diagnostics in the output");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
