//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "hostcap", version, about = "PV hosting capacity of radial distribution feeders")]
pub struct Cli {
    /// Report format on standard output (or in --output).
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Add wall-clock timings to the report.
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Overrides for the constraint defaults declared in the case file.
#[derive(Args, Clone, Default)]
pub struct ConstraintFlags {
    /// Lower voltage bound, p.u.
    #[arg(long)]
    pub vmin: Option<f64>,
    /// Upper voltage bound, p.u.
    #[arg(long)]
    pub vmax: Option<f64>,
    /// Bound on branch angle differences, rad.
    #[arg(long)]
    pub theta_max: Option<f64>,
    /// Power-factor floor for generator buses.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Args, Clone)]
pub struct PartitionFlags {
    /// Comma-separated cut bus ids.
    #[arg(long, value_delimiter = ',')]
    pub cut: Vec<i64>,
    /// Worker threads for the subsystem solves (default: one per subsystem).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the constructive hosting-capacity pipeline.
    Solve {
        case: PathBuf,
        #[command(flatten)]
        constraints: ConstraintFlags,
        #[command(flatten)]
        partition: PartitionFlags,
    },
    /// Brute-force grid search plus P1/P2 surfaces for a two-free-bus case.
    Oracle {
        case: PathBuf,
        #[command(flatten)]
        constraints: ConstraintFlags,
        /// Magnitude grid points per bus, box ends included.
        #[arg(long, default_value_t = 101)]
        grid_steps: usize,
        /// Angle grid points per branch on [−theta_max, theta_max].
        #[arg(long, default_value_t = 21)]
        angle_steps: usize,
        /// Directory for surface.csv and pairs.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sequence-component pipeline for a three-phase case.
    Unbalanced {
        case: PathBuf,
        #[command(flatten)]
        constraints: ConstraintFlags,
        /// Largest relative cross-sequence coupling accepted.
        #[arg(long, default_value_t = hostcap::sequence::DEFAULT_COUPLING_THRESHOLD)]
        coupling_threshold: f64,
        /// Extra passes recomputing load currents at the recombined voltages.
        #[arg(long, default_value_t = 0)]
        outer_iterations: usize,
    },
    /// Grow one generator at a time until a constraint breaks.
    Screen {
        case: PathBuf,
        #[command(flatten)]
        constraints: ConstraintFlags,
        /// Generation increment, p.u.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
    /// Time the partitioned solve against the monolithic one.
    PartitionBench {
        case: PathBuf,
        #[command(flatten)]
        constraints: ConstraintFlags,
        #[command(flatten)]
        partition: PartitionFlags,
    },
}
