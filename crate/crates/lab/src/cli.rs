//! Argument parsing and dispatch, usable in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Context, Outcome};
use crate::config::{parse_config, ExperimentConfig};
use crate::error::LabError;
use crate::parallel;

#[derive(Parser, Debug)]
#[command(name = "saddlescape", version, about = "Stochastic subgradient experiments near nonsmooth saddles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config file.
    #[arg(short, long)]
    config: PathBuf,
    /// Master seed (overrides `run.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs (overrides `run.runs`).
    #[arg(long)]
    runs: Option<u64>,
    /// Output directory (overrides `run.out`).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single trajectory to `trajectory.csv`.
    Run(Common),
    /// Escape statistics over many seeds.
    Mc(Common),
    /// Sharpness, angle, Verdier and weak convexity estimates plus classification.
    Conditions(Common),
    /// One-step drift inequality probes.
    Drift(Common),
    /// Decay-rate and weighted-tail diagnostics over an ensemble.
    Rates(Common),
    /// Nonconvergence experiment on a constructed system.
    Centerstable(Common),
    /// Gap of the limit-compatible curve on the window [t, t + T].
    Apt {
        #[arg(long = "T")]
        big_t: f64,
        #[arg(long = "t")]
        t: f64,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, LabError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|source| LabError::Io { path: common.config.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_override("run.seed", &seed.to_string())?;
    }
    if let Some(runs) = common.runs {
        cfg = cfg.with_override("run.runs", &runs.to_string())?;
    }
    if let Some(out) = &common.out {
        cfg = cfg.with_override("run.out", out)?;
    }
    Ok(cfg)
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), LabError> {
    type Handler = fn(&Context<'_>) -> Result<Outcome, LabError>;
    let (common, handler): (Common, Handler) = match command {
        Command::Apt { big_t, t } => {
            let gap = commands::apt(big_t, t)?;
            let _ = writeln!(stdout, "gap = {gap}");
            return Ok(());
        }
        Command::Run(c) => (c, commands::run),
        Command::Mc(c) => (c, commands::mc),
        Command::Conditions(c) => (c, commands::conditions),
        Command::Drift(c) => (c, commands::drift),
        Command::Rates(c) => (c, commands::rates),
        Command::Centerstable(c) => (c, commands::centerstable),
    };
    let cfg = load(&common)?;
    let workers = common.workers.unwrap_or_else(parallel::default_workers);
    if workers == 0 {
        return Err(LabError::InvalidArgument("--workers must be at least 1".into()));
    }
    let pool = parallel::pool(workers)?;
    let out = PathBuf::from(cfg.out.clone().unwrap_or_else(|| "out".to_string()));
    let outcome = handler(&Context { cfg: &cfg, out, pool: &pool })?;
    let _ = writeln!(stdout, "{}", outcome.summary);
    for f in &outcome.files {
        let _ = writeln!(stdout, "wrote {}", f.display());
    }
    Ok(())
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// invalid input, 2 for failures while running.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
