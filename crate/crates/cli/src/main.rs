//! Experiment runner: every subcommand executes one named experiment,
//! writes its CSV artifacts and a JSON report into the output directory, and
//! exits 0 only if all asserted checks pass (1 on check failure, 2 on usage
//! errors).
//!
//! All outputs are deterministic functions of (config, seed); reports carry
//! no timestamps, so identical runs produce byte-identical files.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{CommonOpts, GermChoice};

#[derive(Parser)]
#[command(name = "roughfbm", version, about = "rough-path workbench experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise checks: sample paths, covariance representation residuals
    Fbm {
        #[command(flatten)]
        common: CommonOpts,
        /// number of sample paths written to CSV
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
    /// Projection checks: projected inner products against the closed-form
    /// conditional covariance
    Cmspace {
        #[command(flatten)]
        common: CommonOpts,
        /// conditioning time (grid point of the dyadic grid)
        #[arg(long, default_value_t = 0.25)]
        s: f64,
    },
    /// Piecewise-linear lift diagnostics: Chen and geometric defects
    Lift {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Driftless flow, Jacobian, inverse, and the flow identity
    Flow {
        #[command(flatten)]
        common: CommonOpts,
        /// diffusion coefficient: const | sin | exp-bounded
        #[arg(long, default_value = "sin")]
        sigma: String,
        /// drift: none | quadratic-bump
        #[arg(long, default_value = "none")]
        b: String,
    },
    /// Monte-Carlo rate fits for conditional germ families
    GermRate {
        #[command(flatten)]
        common: CommonOpts,
        /// germ family: l | k | increment | planted
        #[arg(long, default_value = "l")]
        germ: GermChoice,
        /// dyadic scale widths in grid cells, comma separated
        #[arg(long, default_value = "64,32,16,8")]
        scales: String,
        #[arg(long, default_value_t = 400)]
        replicas: usize,
        #[arg(long, default_value_t = 100)]
        inner: usize,
    },
    /// Heat smoothing and negative-regularity norms of the rough drift
    Besov {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Joint lift of (B, L), drift-difference identity, two-scheme
    /// uniqueness experiment
    Regularise {
        #[command(flatten)]
        common: CommonOpts,
        /// mollification exponents k (eps = 2^-k), comma separated
        #[arg(long, default_value = "4,6,8")]
        eps_levels: String,
        #[arg(long, default_value_t = 8)]
        replicas: usize,
    },
    /// Run every experiment with reduced defaults
    All {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fbm { common, samples } => commands::run_fbm(&common, samples),
        Command::Cmspace { common, s } => commands::run_cmspace(&common, s),
        Command::Lift { common } => commands::run_lift(&common),
        Command::Flow { common, sigma, b } => commands::run_flow(&common, &sigma, &b),
        Command::GermRate { common, germ, scales, replicas, inner } => {
            commands::run_germ_rate(&common, germ, &scales, replicas, inner)
        }
        Command::Besov { common } => commands::run_besov(&common),
        Command::Regularise { common, eps_levels, replicas } => {
            commands::run_regularise(&common, &eps_levels, replicas)
        }
        Command::All { common } => commands::run_all(&common),
    };
    match outcome {
        Ok(true) => std::process::exit(0),
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
