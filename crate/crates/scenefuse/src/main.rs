//! Thin command-line front end over the library: generate, train, eval,
//! ablate-modes, diagnose-mi. Exit codes: 0 success, 1 configuration
//! error, 2 contract violation, 3 i/o error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenefuse::cli;
use scenefuse::config::RunConfig;
use scenefuse::error::Error;

#[derive(Parser)]
#[command(name = "scenefuse", about = "Multi-view perception, fusion and planning on synthetic driving scenes")]
struct Args {
    /// Configuration file (flat key-value with section headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenarios.
    Generate,
    /// Train the pipeline on the stored scenarios.
    Train,
    /// Evaluate the trained model: metrics CSV plus BEV plots.
    Eval,
    /// Retrain and evaluate across trajectory-mode counts.
    AblateModes {
        /// Comma-separated mode counts.
        #[arg(long, default_value = "1,2,3,4,5,6,10")]
        modes: String,
    },
    /// Information diagnostics over pipeline features.
    DiagnoseMi,
}

fn load_config(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
        if args.config.is_none() {
            // without a config file, keep all artifacts under --out
            cfg.scenario_dir = out.join("scenarios");
            cfg.params_path = out.join("model.omsk");
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> Result<(), Error> {
    let cfg = load_config(&args)?;
    match args.command {
        Command::Generate => {
            cli::cmd_generate(&cfg)?;
        }
        Command::Train => {
            cli::cmd_train(&cfg)?;
        }
        Command::Eval => {
            cli::cmd_eval(&cfg)?;
        }
        Command::AblateModes { modes } => {
            let counts: Result<Vec<usize>, Error> = modes
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config(format!("bad mode count {t}")))
                })
                .collect();
            cli::cmd_ablate_modes(&cfg, &counts?)?;
        }
        Command::DiagnoseMi => {
            cli::cmd_diagnose_mi(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // help/version print and exit cleanly; bad flags are config errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
