//! `pldyn`: command-line front end for the plrnn-dyn analysis library.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use plrnn_dyn::dynamics::{BASIN_TOL, DEFAULT_TRANSIENT};
use plrnn_dyn::metrics::DEFAULT_BINS;

#[derive(Debug, Parser)]
#[command(name = "pldyn", version, about = "Analysis of piecewise-linear recurrent networks and 2D PL maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SaddleArg {
    Auto,
    Left,
    Right,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search fixed points and cycles; writes cycles.json.
    FixedPoints {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        max_period: usize,
        /// Maximum number of candidate linear solves.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
    },
    /// Stable or unstable manifold of a saddle cycle; writes manifold.csv and segments.json.
    Manifold {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SideArg::Stable)]
        side: SideArg,
        /// Region sequence of the cycle, e.g. "0" or "01,11".
        #[arg(long, conflicts_with = "cycles")]
        regions: Option<String>,
        /// cycles.json from a previous fixed-points run.
        #[arg(long)]
        cycles: Option<PathBuf>,
        /// Cycle index in --cycles, or among the saddles found by a fresh search.
        #[arg(long, default_value_t = 0)]
        id: usize,
        #[arg(long, default_value_t = 5)]
        max_period: usize,
        /// Bounding box "lo:hi" for every coordinate, or "x0:x1:y0:y1:..." per coordinate.
        #[arg(long = "box", default_value = "-10:10")]
        bounds: String,
        #[arg(long, default_value_t = 30)]
        max_iters: usize,
        #[arg(long, default_value_t = 500)]
        max_segments: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Cap on the half-width of the local segment.
        #[arg(long)]
        local_extent: Option<f64>,
        #[arg(long, default_value_t = plrnn_dyn::inversion::DEFAULT_BITFLIP_DEPTH)]
        bitflip_depth: usize,
        /// Use the seed-and-cluster construction instead of segment propagation.
        #[arg(long)]
        fallback: bool,
        #[arg(long, default_value_t = 4000)]
        seeds: usize,
        #[arg(long, default_value_t = 5)]
        horizon: usize,
    },
    /// Homoclinic intersection test for a general-2d map; writes homoclinic.json.
    Homoclinic {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SaddleArg::Auto)]
        saddle: SaddleArg,
        #[arg(long, default_value_t = 50)]
        max_return_time: usize,
    },
    /// Bifurcation sweep over one parameter; writes sweep.csv and sweep.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// "param:lo:hi:count".
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value_t = DEFAULT_TRANSIENT)]
        transient: usize,
        #[arg(long, default_value_t = 200)]
        record: usize,
        /// Initial state "x0,x1,..."; random in [-1, 1] when omitted.
        #[arg(long)]
        init: Option<String>,
        /// Start each value from the final state of the previous one.
        #[arg(long)]
        follow: bool,
    },
    /// Basin of attraction grid; writes basin.csv and basin.json.
    Basin {
        #[command(flatten)]
        common: Common,
        /// "x0:x1:y0:y1:res".
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 5)]
        max_period: usize,
        /// Random trial orbits used to detect non-periodic attractors.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        threads: Option<usize>,
        /// Distance at which an orbit counts as having reached a cycle.
        #[arg(long, default_value_t = BASIN_TOL)]
        tol_basin: f64,
        /// Neighbourhood radius around the samples of a non-periodic attractor.
        #[arg(long, default_value_t = 2e-3)]
        tol_radius: f64,
    },
    /// D_stsp and PE(n) of a trajectory against the model; writes metrics.json.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Observed trajectory CSV (header row, one state per line).
        #[arg(long = "true")]
        true_traj: PathBuf,
        /// Generated trajectory CSV; simulated from the first observed state when omitted.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Prediction horizons "n1,n2,...".
        #[arg(long, default_value = "1")]
        horizons: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pldyn: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
