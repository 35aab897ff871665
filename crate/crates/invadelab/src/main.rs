//! Command-line front end: build an experiment config from flags or a
//! JSON file, run it, and emit the rows as CSV, JSON, or an SVG plot.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use invadelab::experiments::{
    emit, run, ExperimentConfig, ExperimentKind, OutputFormat, Params,
};
use invadelab::Result;

#[derive(Parser)]
#[command(
    name = "invadelab",
    version,
    about = "Invasion percolation experiments on the square lattice",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every estimator subcommand.
#[derive(Args, Debug)]
struct Common {
    /// Base seed; decimal or 0x-prefixed hex.  Trial i draws from the
    /// stream mix(seed, i), so one seed fixes the whole run.
    #[arg(long, default_value = "1", value_parser = parse_seed)]
    seed: u64,
    /// Monte Carlo trials.
    #[arg(long, default_value_t = 100)]
    trials: u64,
    /// Worker threads for trial-level parallelism.  Results never depend
    /// on this; it only changes scheduling.
    #[arg(long, env = "INVADELAB_WORKERS")]
    workers: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv (default), json, or svg.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Left-right crossing probability of the (0,0)..(n,m) rectangle.
    Crossing {
        /// Rectangle width.
        #[arg(long)]
        n: u64,
        /// Rectangle height; defaults to n.
        #[arg(long)]
        m: Option<u64>,
        /// Threshold; defaults to 0.5.
        #[arg(long)]
        p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-size correlation length at a threshold p.
    Corrlen {
        /// Threshold (must differ from 0.5).
        #[arg(long)]
        p: f64,
        /// Crossing tolerance; defaults to 0.1.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Upper and lower crossing thresholds at scale n.
    Pnqn {
        /// Box scale.
        #[arg(long)]
        n: u64,
        /// Crossing tolerance; defaults to 0.05.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Probability that the origin reaches the boundary of B(n).
    Pi {
        /// Box radius.
        #[arg(long)]
        n: u64,
        /// Threshold; defaults to 0.5.
        #[arg(long)]
        p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Alternating four-arm probability at the central edge.
    Fourarm {
        /// Box radius (at least 2).
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Acceptance ratio per weight bin over n-step invasions.
    Profile {
        /// Invasion steps per trial.
        #[arg(long)]
        n: u64,
        /// Weight bins over [0,1]; defaults to 100.
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Acceptance ratios over the three diagnostic weight ranges.
    ProfileStep {
        /// Invasion steps per trial; defaults to 100000.
        #[arg(long)]
        n: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Count of weights in (1/2, 1/2+eps] invaded within n steps.
    Xi {
        /// Invasion steps per trial.
        #[arg(long)]
        n: u64,
        /// Width of the window above 1/2; defaults to 0.05.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Sup-norm radius of the n-step invaded cluster.
    Radius {
        /// Invasion steps per trial.
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Largest box left untouched after step n within a longer horizon.
    Stabilize {
        /// Step marker; the run extends to horizon-factor times n steps.
        #[arg(long)]
        n: u64,
        /// Horizon as a multiple of n (at least 2); defaults to 8.
        #[arg(long)]
        horizon_factor: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Outlets (weights above 1/2 exceeding every later one) in n steps.
    Outlets {
        /// Invasion steps per trial.
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Hit rate of the annulus-event detector at dyadic scales.
    Events {
        /// Base dyadic index.
        #[arg(long)]
        n: u64,
        /// Spread exponent (at least 1).
        #[arg(long)]
        m: u64,
        /// Truncation radius for the outward-link search.
        #[arg(long)]
        m_truncate: Option<i32>,
        /// Threshold-estimation tolerance; defaults to 0.05.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Invaded edges inside B(n) against the reference n²·π̂(n).
    Scaling {
        /// Box radius.
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the config; the file fixes kind, params, seed0, and
        /// trials.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's worker count.
        #[arg(long, env = "INVADELAB_WORKERS")]
        workers: Option<usize>,
        /// Override the config's output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's output format.
        #[arg(long)]
        format: Option<String>,
    },
}

fn parse_seed(s: &str) -> std::result::Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| format!("`{s}` is not a decimal or 0x-prefixed hex u64"))
}

fn with_common(kind: ExperimentKind, params: Params, common: Common) -> Result<ExperimentConfig> {
    let format = common.format.as_deref().map(OutputFormat::parse).transpose()?;
    Ok(ExperimentConfig {
        kind,
        params,
        seed0: common.seed,
        trials: common.trials,
        workers: common.workers,
        out: common.out,
        format,
    })
}

fn build_config(cmd: Cmd) -> Result<ExperimentConfig> {
    match cmd {
        Cmd::Crossing { n, m, p, common } => {
            let params = Params { n: Some(n), m, p, ..Params::default() };
            with_common(ExperimentKind::Crossing, params, common)
        }
        Cmd::Corrlen { p, eps, common } => {
            let params = Params { p: Some(p), eps, ..Params::default() };
            with_common(ExperimentKind::Corrlen, params, common)
        }
        Cmd::Pnqn { n, eps, common } => {
            let params = Params { n: Some(n), eps, ..Params::default() };
            with_common(ExperimentKind::Pnqn, params, common)
        }
        Cmd::Pi { n, p, common } => {
            let params = Params { n: Some(n), p, ..Params::default() };
            with_common(ExperimentKind::Pi, params, common)
        }
        Cmd::Fourarm { n, common } => {
            with_common(ExperimentKind::Fourarm, Params { n: Some(n), ..Params::default() }, common)
        }
        Cmd::Profile { n, bins, common } => {
            let params = Params { n: Some(n), bins, ..Params::default() };
            with_common(ExperimentKind::Profile, params, common)
        }
        Cmd::ProfileStep { n, common } => {
            with_common(ExperimentKind::ProfileStep, Params { n, ..Params::default() }, common)
        }
        Cmd::Xi { n, eps, common } => {
            let params = Params { n: Some(n), eps, ..Params::default() };
            with_common(ExperimentKind::Xi, params, common)
        }
        Cmd::Radius { n, common } => {
            with_common(ExperimentKind::Radius, Params { n: Some(n), ..Params::default() }, common)
        }
        Cmd::Stabilize { n, horizon_factor, common } => {
            let params = Params { n: Some(n), horizon_factor, ..Params::default() };
            with_common(ExperimentKind::Stabilize, params, common)
        }
        Cmd::Outlets { n, common } => {
            with_common(ExperimentKind::Outlets, Params { n: Some(n), ..Params::default() }, common)
        }
        Cmd::Events { n, m, m_truncate, eps, common } => {
            let params =
                Params { n: Some(n), m: Some(m), m_truncate, eps, ..Params::default() };
            with_common(ExperimentKind::Events, params, common)
        }
        Cmd::Scaling { n, common } => {
            with_common(ExperimentKind::Scaling, Params { n: Some(n), ..Params::default() }, common)
        }
        Cmd::Run { config, workers, out, format } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            if out.is_some() {
                cfg.out = out;
            }
            if let Some(f) = format {
                cfg.format = Some(OutputFormat::parse(&f)?);
            }
            Ok(cfg)
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let config = build_config(cli.cmd)?;
    let rows = run(&config)?;
    let format = config.format.unwrap_or(OutputFormat::Csv);
    match &config.out {
        Some(path) => emit::write_rows(&rows, format, path)?,
        None => print!("{}", emit::render(&rows, format)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
