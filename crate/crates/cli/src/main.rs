//! `lorenz-lab`: command-line front end.
//!
//! Exit codes: 0 success or property holds, 1 usage or configuration error,
//! 2 numerical failure, 3 property does not hold or search failed,
//! 4 inconclusive.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lorenz_lab::config::{OutputFormat, RunConfig};

use crate::output::{CliError, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "lorenz-lab", version, about = "Shooting and homoclinic experiments for the Lorenz equations")]
struct Cli {
    /// Prandtl-like parameter s.
    #[arg(long, global = true, value_parser = parse_number)]
    s: Option<f64>,
    /// Geometry parameter q (accepts fractions such as 8/3).
    #[arg(long, global = true, value_parser = parse_number)]
    q: Option<f64>,
    /// Rayleigh-like parameter R.
    #[arg(long = "R", visible_alias = "r", global = true, value_parser = parse_number)]
    r: Option<f64>,
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report file, or output directory for `integrate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Integration horizon (the time span for `enclose`).
    #[arg(long, global = true, value_parser = parse_number)]
    horizon: Option<f64>,
    /// Relative integrator tolerance; the absolute tolerance keeps its ratio.
    #[arg(long, global = true, value_parser = parse_number)]
    tol: Option<f64>,
    /// Override any config key, e.g. `--set shoot.grid=129`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one orbit and write the trajectory CSV and event log.
    Integrate {
        /// gamma-plus, p0 or point.
        #[arg(long)]
        start: Option<String>,
        /// Start point for `--start point`, as x,y,z.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        #[arg(long)]
        backward: bool,
    },
    /// Bracket the homoclinic parameter by bisection in R.
    Rstar {
        #[arg(long, value_parser = parse_number)]
        lo: Option<f64>,
        #[arg(long, value_parser = parse_number)]
        hi: Option<f64>,
        /// Target bracket width.
        #[arg(long, value_parser = parse_number)]
        width: Option<f64>,
    },
    /// Check the crossing inequalities of the manifold branch.
    Checkpoints,
    /// Check the event ordering hypothesis at one R.
    CondA,
    /// Sweep R for the event ordering hypothesis.
    CondASweep {
        #[arg(long, value_parser = parse_number)]
        r_min: Option<f64>,
        #[arg(long, value_parser = parse_number)]
        r_max: Option<f64>,
        #[arg(long, value_parser = parse_number)]
        r_step: Option<f64>,
    },
    /// Sample the backward-time dichotomy on M and certify a few segments.
    CondB {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Realize a word of 1's and 3's by nested-interval shooting.
    Shoot {
        /// Target word, e.g. 1311.
        word: Option<String>,
    },
    /// Interval enclosure of a small box and its width growth.
    Enclose {
        /// gamma-plus, p0 or point.
        #[arg(long)]
        start: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
        center: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_number)]
        width: Option<f64>,
        #[arg(long, value_parser = parse_number)]
        step: Option<f64>,
    },
    /// Print the effective configuration in flat form.
    Config,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Integrate { .. } => "integrate",
            Command::Rstar { .. } => "rstar",
            Command::Checkpoints => "checkpoints",
            Command::CondA => "cond-a",
            Command::CondASweep { .. } => "cond-a-sweep",
            Command::CondB { .. } => "cond-b",
            Command::Shoot { .. } => "shoot",
            Command::Enclose { .. } => "enclose",
            Command::Config => "config",
        }
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    let parsed = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("not a number: {s}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("not a number: {s}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("not a number: {s}"))?,
    };
    if parsed.is_finite() {
        Ok(parsed)
    } else {
        Err(format!("not a finite number: {s}"))
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new("CONFIG_IO", format!("cannot read {}: {e}", path.display()), EXIT_USAGE))?;
            RunConfig::from_flat(&text).map_err(|e| CliError::new(e.code(), e.to_string(), EXIT_USAGE))?
        }
        None => RunConfig::default(),
    };
    let usage = |e: lorenz_lab::ConfigError| CliError::new(e.code(), e.to_string(), EXIT_USAGE);
    for kv in &cli.set {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| CliError::new("USAGE", format!("--set expects KEY=VALUE, got {kv:?}"), EXIT_USAGE))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(s) = cli.s {
        cfg.params.s = s;
    }
    if let Some(q) = cli.q {
        cfg.params.q = q;
    }
    if let Some(r) = cli.r {
        cfg.params.r = r;
    }
    if let Some(h) = cli.horizon {
        cfg.horizon = Some(h);
    }
    if let Some(tol) = cli.tol {
        let ratio = cfg.integrator.abs_tol / cfg.integrator.rel_tol;
        cfg.integrator.rel_tol = tol;
        cfg.integrator.abs_tol = tol * ratio;
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        };
    }
    if let Some(out) = &cli.out {
        cfg.output.path = Some(out.display().to_string());
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand)
            {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::new("USAGE", e.to_string().trim().to_string(), EXIT_USAGE);
            return output::fail(None, &err);
        }
    };
    let name = cli.command.name();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => return output::fail(Some(name), &e),
    };
    match commands::run(&cli.command, &cfg) {
        Ok(outcome) => output::finish(name, &cfg, outcome),
        Err(e) => output::fail(Some(name), &e),
    }
}
