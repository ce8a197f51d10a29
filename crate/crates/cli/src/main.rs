//! `qg3d`: dispersion relations, bifurcation points and V-state branches of
//! rotating 3D quasi-geostrophic vortex patches.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use output::{Failure, EXIT_IO};

#[derive(Parser)]
#[command(name = "qg3d", version, about = "Rotating vortex-patch numerics for the 3D QG model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check (H1)-(H3) and report arc-chord constants and kappa
    Validate,
    /// Largest eigenvalue for every mode and angular velocity
    Dispersion,
    /// Angular velocities where lambda_m = 1, with eigenfunctions
    Bifpoints,
    /// Dominant eigenfunctions for every mode and angular velocity
    Eigenfun,
    /// Continue the bifurcated branch of one mode
    Branch,
    /// Compare the two representations of the linearized operator
    Crosscheck,
}

fn set_threads(flag: Option<usize>) -> Result<(), Failure> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("QG3D_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Failure::parse(format!("QG3D_THREADS = `{v}`: {e}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    set_threads(cli.overrides.threads)?;
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Validate => commands::validate(&cfg),
        Command::Dispersion => commands::dispersion(&cfg),
        Command::Bifpoints => commands::bifpoints(&cfg),
        Command::Eigenfun => commands::eigenfun(&cfg),
        Command::Branch => commands::branch(&cfg),
        Command::Crosscheck => commands::crosscheck(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors; here 2 means a validation failure
            return if e.use_stderr() { ExitCode::from(EXIT_IO as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qg3d: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
