//! `sosenergy` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, RunConfig};
use output::OutDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(sosenergy::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<sosenergy::Error> for CliError {
    fn from(e: sosenergy::Error) -> Self {
        use sosenergy::Error as E;
        match e {
            E::InvalidInput(_) | E::DegreeOutOfRange { .. } | E::Assembly(_) | E::Json(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sosenergy",
    version,
    about = "Taylor and sum-of-squares energy function approximations"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: `out`, or `out` from the config].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Compute an energy function and write `energy.json` and `report.json`.
    Solve,
    /// Scalar benchmark errors against the exact past energy.
    ScalarError,
    /// Closed-loop stability and error table for the van der Pol ring.
    VdpTable {
        /// Initial conditions per window (overrides the config).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Closed-loop error table for the Burgers model.
    BurgersTable {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Objective grid over (L21, L22) with L11 fixed.
    Landscape,
    /// Evaluate an energy file at points.
    Eval {
        /// Energy JSON written by `solve` (overrides `eval.energy`).
        #[arg(long)]
        energy: Option<PathBuf>,
        /// Comma-separated point, repeatable.
        #[arg(long = "point", allow_hyphen_values = true)]
        points: Vec<String>,
    },
}

fn parse_point(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("point {s:?}: {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.serial {
        cfg.collocation.serial = true;
    }
    let cmd = match &cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::ScalarError => Command::ScalarError,
        Cmd::VdpTable { runs } | Cmd::BurgersTable { runs } => {
            if runs.is_some() {
                cfg.runs = *runs;
            }
            if matches!(cli.command, Cmd::VdpTable { .. }) {
                Command::VdpTable
            } else {
                Command::BurgersTable
            }
        }
        Cmd::Landscape => Command::Landscape,
        Cmd::Eval { energy, points } => {
            if energy.is_some() {
                cfg.eval.energy = energy.clone();
            }
            for p in points {
                cfg.eval.points.push(parse_point(p)?);
            }
            Command::Eval
        }
    };
    cfg.validate(cmd)?;
    let cfg = cfg.resolve(cmd);
    cfg.validate(cmd)?;
    let out_dir = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = OutDir::create(&out_dir, cfg.digest(), cfg.seed.expect("resolved"))?;
    match cmd {
        Command::Solve => commands::solve(&cfg, &out),
        Command::ScalarError => commands::scalar_error_cmd(&cfg, &out),
        Command::VdpTable => commands::vdp_table(&cfg, &out),
        Command::BurgersTable => commands::burgers_table(&cfg, &out),
        Command::Landscape => commands::landscape_cmd(&cfg, &out),
        Command::Eval => {
            let path = cfg.eval.energy.clone().ok_or_else(|| {
                CliError::Config("eval needs an energy file (--energy or eval.energy)".into())
            })?;
            commands::eval(&cfg, &path, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
