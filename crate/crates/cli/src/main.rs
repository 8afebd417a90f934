mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Session, Task, UsageError};
use config::{RunConfigFile, DATA_ROOT_ENV};

#[derive(Parser)]
#[command(name = "hopembed", version, about = "Self-supervised node embeddings from hop-count prediction")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the training and sampler seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for grid cells, ablation runs and matrix kernels.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Single-threaded kernels. Results do not depend on thread count, so
    /// this only trades speed for a simpler execution trace.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Directory that relative dataset paths resolve against.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the hop-context cache for the dataset.
    Prepare {
        /// Also build caches for every ablation policy.
        #[arg(long)]
        ablation: bool,
    },
    /// Train embeddings; with --grid, every (lr, epochs) cell of the grid.
    Train {
        #[arg(long)]
        grid: bool,
    },
    /// Evaluate trained embeddings.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        /// Embedding file to evaluate instead of the configured run's.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Single edge-removal ratio for linkpred.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train and classify once per merge policy and seed; print a table.
    Ablate {
        /// Fail unless the alpha=4 policy scores at least as well as alpha=2.
        #[arg(long)]
        check_trend: bool,
    },
    /// Recompute embeddings from a checkpoint and write them as text.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config_path = cli.config.ok_or_else(|| UsageError("--config <path> is required".into()))?;
    let mut cfg = RunConfigFile::load(&config_path, cli.data_root.as_deref())?;
    cfg.apply_seed(cli.seed);
    let jobs = if cli.deterministic { 1 } else { cli.jobs.max(1) };
    if jobs > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let session = Session { cfg, config_path, jobs };
    match cli.command {
        Command::Prepare { ablation } => session.prepare(ablation),
        Command::Train { grid } => session.train(grid),
        Command::Eval { task, embeddings, ratio } => session.eval(task, embeddings.as_deref(), ratio),
        Command::Ablate { check_trend } => session.ablate(check_trend),
        Command::Export { checkpoint, out } => session.export(&checkpoint, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<hopembed::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
