//! Config-driven command-line front end.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::generator::GeneratorRegistry;
pub use config::{load_config, parse_config, RunConfig};
pub use run::{derive_constants, exit_code_for, infer_oracle, run, Command, Context, RunOutcome};

#[derive(Debug, Parser)]
#[command(name = "bsde-lab", version, about = "Regression Monte Carlo BSDE solver and hypothesis checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Binary path ensemble to load (or to write, for gen-paths).
    #[arg(long)]
    pub paths_file: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Shape, Osgood, H1, z-Lipschitz, H3 and envelope checks.
    Check(Common),
    /// Picard solve; writes the solution and the iteration report.
    Solve(Common),
    /// Solve and compare against the matching closed-form solution.
    OracleCompare(Common),
    /// Bihari recursion on the y-modulus.
    Bihari(Common),
    /// Derived constants.
    Constants(Common),
    /// Generate and save a path ensemble.
    GenPaths(Common),
    /// Error sweep over the study grid of M and N.
    ConvergenceStudy(Common),
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::Check(c) => (Command::Check, c),
            Sub::Solve(c) => (Command::Solve, c),
            Sub::OracleCompare(c) => (Command::OracleCompare, c),
            Sub::Bihari(c) => (Command::Bihari, c),
            Sub::Constants(c) => (Command::Constants, c),
            Sub::GenPaths(c) => (Command::GenPaths, c),
            Sub::ConvergenceStudy(c) => (Command::ConvergenceStudy, c),
        }
    }
}

/// Caps the global worker pool from `BSDE_LAB_THREADS`, if set.
pub fn configure_threads() -> Result<(), String> {
    match std::env::var("BSDE_LAB_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| format!("BSDE_LAB_THREADS must be a positive integer, got `{v}`"))?;
            if n == 0 {
                return Err("BSDE_LAB_THREADS must be at least 1".into());
            }
            // a second initialization (e.g. in tests) keeps the existing pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

/// Runs a parsed command line with a custom-generator registry; returns the exit code.
pub fn execute(cli: &Cli, registry: &GeneratorRegistry) -> i32 {
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    let (cmd, common) = cli.command.split();
    let (mut cfg, base) = match load_config(&common.config) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = std::env::current_dir().map(|c| c.join(dir)).unwrap_or_else(|_| dir.clone());
    }
    let paths_file = common
        .paths_file
        .as_ref()
        .map(|p| std::env::current_dir().map(|c| c.join(p)).unwrap_or_else(|_| p.clone()));
    let ctx = Context { cfg: &cfg, base, registry, paths_file };
    match run(cmd, &ctx) {
        Ok(out) => {
            for m in &out.messages {
                eprintln!("warning: {m}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            out.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
