//! Command-line front end: `generate`, `train`, `eval` and `sweep`, all
//! driven by one JSON run configuration.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tcrnn::{Error, Result};

pub use commands::{cmd_eval, cmd_generate, cmd_sweep, cmd_train, load_data, read_data_dir, Manifest};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "tcrnn", version, about = "Thermodynamically consistent recurrent constitutive models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset described by the config as CSV files.
    Generate(Common),
    /// Train a model on the paths with role `train`.
    Train(Common),
    /// Evaluate a checkpoint on every path.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured parameter sweep, resuming an existing table.
    Sweep(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory written by `generate`; replaces the config's data section.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn config_dir(config: &Path) -> &Path {
    config.parent().unwrap_or_else(|| Path::new("."))
}

/// Exit status for an outcome: 0 on success, 1 for numerical failures,
/// 2 for everything else.
pub fn exit_code(r: &Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) if e.is_numerical() => 1,
        Err(_) => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Generate(c) => {
            let cfg = RunConfig::load(&c.config)?;
            let m = cmd_generate(&cfg, &c.out)?;
            eprintln!("wrote {} paths to {}", m.files.len(), c.out.display());
        }
        Command::Train(c) => {
            let cfg = RunConfig::load(&c.config)?;
            let every = (cfg.training.epochs / 20).max(1);
            cmd_train(&cfg, config_dir(&c.config), c.data.as_deref(), &c.out, c.seed, |e, l| {
                if e % every == 0 {
                    eprintln!("epoch {e}: loss {l:.6e}");
                }
            })?;
        }
        Command::Eval { common: c, checkpoint } => {
            let cfg = RunConfig::load(&c.config)?;
            let ckpt = checkpoint.unwrap_or_else(|| c.out.join(commands::CHECKPOINT));
            if !ckpt.exists() {
                return Err(Error::MissingData(format!("checkpoint not found: {}", ckpt.display())));
            }
            let paths = load_data(&cfg, config_dir(&c.config), c.data.as_deref())?;
            let reports = cmd_eval(&ckpt, &paths, cfg.eval.history_seed, &c.out)?;
            for r in &reports {
                eprintln!("{} ({}): open loop {:.4}, teacher forced {:.4}", r.id, r.role.as_str(), r.open_loop_error, r.teacher_forced_error);
            }
        }
        Command::Sweep(c) => {
            let cfg = RunConfig::load(&c.config)?;
            let rows = cmd_sweep(&cfg, config_dir(&c.config), c.data.as_deref(), &c.out, c.seed)?;
            eprintln!("{} new rows", rows.len());
        }
    }
    eprintln!("wall time {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

/// Parses arguments, runs, reports errors on stderr and returns the exit
/// status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let r = run(cli);
    if let Err(e) = &r {
        eprintln!("error: {e}");
    }
    exit_code(&r)
}
