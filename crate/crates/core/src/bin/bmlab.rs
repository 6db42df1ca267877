use boltzmann_moments::harness::{emit_plots, parse_override, run_experiment, ExperimentConfig, ExperimentMode};
use boltzmann_moments::Error;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bmlab", version, about = "Moment bounds and particle checks for the homogeneous Boltzmann equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Povzner constants by sup-search, checked on random configurations
    Gamma(Common),
    /// Proof constants and moment envelopes
    Bounds(Common),
    /// Particle run with conservation checks
    Simulate(Common),
    /// Randomised inequality suites
    Verify(Common),
    /// Moment creation from heavy-tailed data
    Creation(Common),
    /// Exponential moment propagation
    Propagation(Common),
    /// SVG plots from an output directory
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// INI configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, `section.key=value` (repeatable)
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
}

fn load(common: &Common, mode: Option<ExperimentMode>) -> Result<ExperimentConfig, Error> {
    let mut overrides = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = mode {
        overrides.push(("experiment.mode".into(), m.as_str().into()));
    }
    if let Some(out) = &common.out {
        overrides.push(("experiment.out".into(), out.display().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("experiment.seed".into(), seed.to_string()));
    }
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_ini_str("", &overrides),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, mode) = match &cli.command {
        Command::Gamma(c) => (c, Some(ExperimentMode::Gamma)),
        Command::Bounds(c) => (c, Some(ExperimentMode::Bounds)),
        Command::Simulate(c) => (c, Some(ExperimentMode::Simulate)),
        Command::Verify(c) => (c, Some(ExperimentMode::Verify)),
        Command::Creation(c) => (c, Some(ExperimentMode::Creation)),
        Command::Propagation(c) => (c, Some(ExperimentMode::Propagation)),
        Command::Plot(c) => (c, None),
    };
    let cfg = match load(common, mode) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("bmlab: {e}");
            return ExitCode::from(2);
        }
    };
    if mode.is_none() {
        return match emit_plots(&cfg.out) {
            Ok(out) => {
                for w in &out.warnings {
                    eprintln!("warning: {w}");
                }
                for f in &out.files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("bmlab: {e}");
                ExitCode::from(2)
            }
        };
    }
    match run_experiment(&cfg) {
        Ok(report) => {
            print!("{}", report.summary());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("bmlab: {e}");
            ExitCode::from(2)
        }
    }
}
