use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mlsl::cli::{self, Baseline};
use mlsl::config::RunConfig;
use mlsl::{Error, Result, Unfolding};

#[derive(Parser)]
#[command(name = "mlsl", version, about = "Multi-level sequence learners on graphs")]
struct Args {
    /// TOML run config, or a report.toml from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a spammer-hammer crowdsourcing graph.
    Synth,
    /// Train a model and score it on the held-out split.
    Train,
    /// Score a saved model on the held-out split.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run one baseline: majority, kos, em, avg, em_grades, proportional.
    Baseline { which: String },
    /// Print the unfolding of one node.
    Unfold {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        root: String,
        #[arg(long)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Mode::Asymmetric)]
        mode: Mode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Asymmetric,
}

fn load_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    cfg.resolve()
}

fn run(args: Args) -> Result<()> {
    let outcome = match &args.command {
        Command::Unfold {
            graph,
            root,
            depth,
            mode,
        } => {
            let mode = match mode {
                Mode::Full => Unfolding::Full,
                Mode::Asymmetric => Unfolding::Asymmetric,
            };
            print!("{}", cli::unfold(graph, root, *depth, mode)?);
            return Ok(());
        }
        Command::Synth => cli::synth(&load_config(&args)?)?,
        Command::Train => cli::train(&load_config(&args)?)?,
        Command::Eval { model } => cli::eval(&load_config(&args)?, model)?,
        Command::Baseline { which } => {
            let which: Baseline = which.parse()?;
            cli::baseline(&load_config(&args)?, which)?
        }
    };
    for (k, v) in &outcome.metrics {
        println!("{k} = {v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
