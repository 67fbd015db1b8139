//! `rollwave`: command-line driver for the roll-wave pipeline.
//!
//! Every pipeline command writes into `<output.dir>/<run-id>/` and leaves a
//! `manifest.json` that `rollwave manifest replay` can re-execute.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{ProjectConfig, SimMode};
use run::RunDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] rollwave::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 for configuration and domain errors, 3 for solver non-convergence,
    /// 4 for numerical or internal failure.
    pub fn exit_code(&self) -> u8 {
        use rollwave::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Library(e) => match e {
                E::InvalidParameter { .. } | E::Domain(_) | E::Parse(_) => 2,
                E::NoConvergence { .. } | E::RankDeficient { .. } | E::NoHopf | E::PathLost { .. } => 3,
                E::Integration { .. } | E::Eigensolver(_) | E::Simulation { .. } | E::Io(_) => 4,
            },
            CliError::Io(_) | CliError::Numerical(_) => 4,
        }
    }
}

/// Selects the wave a command works on.
#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct Target {
    /// Period of the family member; solved exactly if not already cached.
    #[arg(long)]
    pub period: Option<f64>,
    /// Profile file in the family-cache format, used instead of the family.
    #[arg(long, conflicts_with = "period")]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Constant states for given integration constant and wavespeed.
    Equilibrium {
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
    },
    /// Hopf data at a constant state, or the Hopf point of the configured family.
    Hopf {
        #[arg(long)]
        tau0: Option<f64>,
    },
    /// One periodic orbit and its diagnostics.
    Orbit(Target),
    /// The orbit family from the Hopf point to the target period.
    Family,
    /// Hill-method spectrum with stability verdicts.
    Spectrum(Target),
    /// Whitham modulation system and its comparison with the spectrum.
    Whitham(Target),
    /// Evans function sweep, origin check and leading-order ratio.
    Evans(Target),
    /// Time evolution experiments.
    Simulate {
        #[command(flatten)]
        target: Target,
        /// Overrides `simulate.mode`.
        #[arg(long, value_enum)]
        mode: Option<SimMode>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Equilibrium { .. } => "equilibrium",
            Command::Hopf { .. } => "hopf",
            Command::Orbit(_) => "orbit",
            Command::Family => "family",
            Command::Spectrum(_) => "spectrum",
            Command::Whitham(_) => "whitham",
            Command::Evans(_) => "evans",
            Command::Simulate { .. } => "simulate",
        }
    }
}

#[derive(Debug, Subcommand)]
enum ManifestAction {
    /// Re-runs a recorded command and compares output digests.
    Replay {
        /// A manifest file or the run directory containing it.
        manifest: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TopLevel {
    #[command(flatten)]
    Pipeline(Command),
    /// Operations on recorded runs.
    Manifest {
        #[command(subcommand)]
        action: ManifestAction,
    },
}

#[derive(Debug, Parser)]
#[command(name = "rollwave", version, about = "Periodic roll waves: profiles, spectra, modulation and time evolution")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set spectrum.n_modes=32`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Name of the output directory; defaults to a digest of command and configuration.
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[command(subcommand)]
    command: TopLevel,
}

fn execute(command: &Command, cfg: &ProjectConfig, run_id: Option<String>) -> Result<run::RunManifest, CliError> {
    let start = Instant::now();
    let id = run_id.unwrap_or_else(|| run::default_run_id(command, cfg));
    let mut dir = RunDir::open(std::path::Path::new(&cfg.output.dir), &id)?;
    commands::dispatch(command, cfg, &mut dir)?;
    let manifest = dir.finish(command, cfg, start.elapsed().as_secs_f64())?;
    println!("outputs in {}", std::path::Path::new(&cfg.output.dir).join(&id).display());
    Ok(manifest)
}

fn replay(path: &std::path::Path, run_id: Option<String>) -> Result<(), CliError> {
    let recorded = run::read_manifest(path)?;
    let id = run_id.unwrap_or_else(|| format!("{}-replay", run::default_run_id(&recorded.command, &recorded.config)));
    let fresh = execute(&recorded.command, &recorded.config, Some(id))?;
    let mut mismatches = Vec::new();
    for (name, digest) in &recorded.outputs {
        match fresh.outputs.get(name) {
            Some(d) if d == digest => {}
            Some(_) => mismatches.push(format!("{name}: contents differ")),
            None => mismatches.push(format!("{name}: not produced")),
        }
    }
    for name in fresh.outputs.keys().filter(|n| !recorded.outputs.contains_key(*n)) {
        mismatches.push(format!("{name}: not in the recorded run"));
    }
    if mismatches.is_empty() {
        println!("replay identical: {} output files", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Numerical(format!("replay differs from the recorded run: {}", mismatches.join("; "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        TopLevel::Pipeline(command) => {
            let mut cfg = ProjectConfig::load(cli.config.as_deref(), &cli.set)?;
            if let Command::Simulate { mode: Some(m), .. } = &command {
                cfg.simulate.mode = *m;
            }
            execute(&command, &cfg, cli.run_id).map(|_| ())
        }
        TopLevel::Manifest { action: ManifestAction::Replay { manifest } } => replay(&manifest, cli.run_id),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
