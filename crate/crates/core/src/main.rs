use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use biphoton::config::ExperimentConfig;
use biphoton::experiment;
use biphoton::Result;

#[derive(Parser)]
#[command(name = "biphoton", version, about = "Entangled photon pairs through a double slit: simulate, synthesize frames, estimate, fit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed, overriding `acquisition.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Two-qubit visibilities and coincidence patterns.
    Analytic(Common),
    /// Noiseless detector distributions and profiles.
    Simulate(Common),
    /// Synthetic photon-counting frame stacks.
    Frames(Common),
    /// Coincidence estimation from a frame stack.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// BPFS frame stack.
        #[arg(long)]
        stack: PathBuf,
    },
    /// Fringe fit of a profile CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Profile CSV written by `simulate` or `estimate`.
        #[arg(long)]
        profile: PathBuf,
    },
    /// Visibility sweep over pump waists.
    Sweep(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.acquisition.seed = seed;
    }
    cfg.validate()?;
    // Kept out of the config so the provenance hash does not depend on where outputs go.
    let out = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<experiment::Outputs> {
    let common = match &cli.command {
        Command::Analytic(c) | Command::Simulate(c) | Command::Frames(c) | Command::Sweep(c) => c,
        Command::Estimate { common, .. } | Command::Fit { common, .. } => common,
    };
    let level = if common.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (cfg, out) = load(common)?;
    match &cli.command {
        Command::Analytic(_) => experiment::cmd_analytic(&cfg, &out),
        Command::Simulate(_) => experiment::cmd_simulate(&cfg, &out),
        Command::Frames(_) => experiment::cmd_frames(&cfg, &out),
        Command::Estimate { stack, .. } => experiment::cmd_estimate(&cfg, stack, &out),
        Command::Fit { profile, .. } => experiment::cmd_fit(&cfg, profile, &out),
        Command::Sweep(_) => experiment::cmd_sweep(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => {
            for f in &o.files {
                println!("{}", o.dir.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
