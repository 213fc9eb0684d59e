use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use platoon_cli::{cmd_eval, cmd_metrics, cmd_train, Overrides};

#[derive(Parser)]
#[command(name = "platoon", version, about = "Train, evaluate and score cooperative platoon policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    platoon_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    v2v: Option<Switch>,
    #[arg(long, value_enum)]
    caring: Option<Switch>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        total_steps: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a test scenario against a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<u8>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recompute gap metrics from a trace file.
    Metrics {
        trace: PathBuf,
    },
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        platoon_size: c.platoon_size,
        out: c.out.clone(),
        v2v: c.v2v.map(Into::into),
        caring: c.caring.map(Into::into),
        ..Overrides::default()
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Train {
            common,
            total_steps,
            resume,
        } => {
            let o = Overrides {
                total_steps,
                ..overrides(&common)
            };
            cmd_train(common.config.as_deref(), &o, resume).map(drop)
        }
        Command::Eval {
            common,
            scenario,
            checkpoint,
        } => {
            let o = Overrides {
                scenario,
                checkpoint,
                ..overrides(&common)
            };
            cmd_eval(common.config.as_deref(), &o).map(drop)
        }
        Command::Metrics { trace } => cmd_metrics(&trace).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
