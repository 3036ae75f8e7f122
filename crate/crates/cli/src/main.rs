mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ioc", version, about = "Inverse optimal control by relaxed optimal-value reformulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file (JSON)
    #[arg(long)]
    pub problem: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the lower-level solver tolerance of the problem file
    #[arg(long)]
    pub solver_tol: Option<f64>,
    /// Overrides the active-set tolerance of the problem file
    #[arg(long)]
    pub active_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the constructed default instance with its generating parameter
    MakeDefault {
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the lower-level problem at one parameter
    Lower {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_list)]
        x: Coords,
        /// Solver tolerance for this solve
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Evaluate the optimal-value function and its gradient
    Value {
        #[command(flatten)]
        common: Common,
        /// Parameter to sample; may be repeated
        #[arg(long, value_parser = parse_list)]
        x: Vec<Coords>,
        /// Number of random parameters drawn from X_ad
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slice start
        #[arg(long, value_parser = parse_list, requires = "to")]
        from: Option<Coords>,
        /// Slice end
        #[arg(long, value_parser = parse_list, requires = "from")]
        to: Option<Coords>,
        /// Number of slice samples
        #[arg(long, default_value_t = 11)]
        count: usize,
    },
    /// Solve one relaxed program
    Relax {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
        /// Inner stationarity tolerance
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Follow a geometric relaxation schedule and extract the limit candidate
    Path {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        eps0: f64,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Inner stationarity tolerance
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Classify a point with multipliers as W-, C- or S-stationary
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        point: PathBuf,
        #[arg(long)]
        multipliers: PathBuf,
        #[arg(long, default_value_t = ioc_core::stationarity::DEFAULT_TOL)]
        tol: f64,
    },
    /// Lattice search of the reduced upper objective (at most 3 parameters)
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Point file whose upper value is compared with the lattice optimum
        #[arg(long)]
        point: Option<PathBuf>,
    },
}

/// Comma-separated coordinates such as `0.3,0.7`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords(pub Vec<f64>);

fn parse_list(s: &str) -> Result<Coords, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Coords)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            commands::report("validation", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = commands::classify_error(&e);
            commands::report(kind, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}
