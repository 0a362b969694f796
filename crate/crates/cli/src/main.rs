use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use karyosim::pipeline::{self, Arm, Outcome, PipelineError, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    PhantomGen,
    Perturb,
    RestoreTrain,
    RestoreRun,
    DetectTrain,
    Evaluate,
}

/// Synthetic karyotype anomaly pipeline.
#[derive(Debug, Parser)]
#[command(name = "karyosim", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured arm (baseline, syn, syn_eas, syn_star, syn_star_eas).
    #[arg(long)]
    arm: Option<String>,
    /// Restricts the run to one class.
    #[arg(long = "class")]
    class: Option<u32>,
}

fn configure(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(a) = &cli.arm {
        cfg.arm = a.parse::<Arm>()?;
    }
    if let Some(c) = cli.class {
        cfg.classes = Some(vec![c]);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, PipelineError> {
    let cfg = configure(cli)?;
    match cli.command {
        Command::PhantomGen => pipeline::phantom_gen(&cfg),
        Command::Perturb => pipeline::perturb(&cfg),
        Command::RestoreTrain => pipeline::restore_train(&cfg),
        Command::RestoreRun => pipeline::restore_run(&cfg),
        Command::DetectTrain => pipeline::detect_train(&cfg),
        Command::Evaluate => pipeline::evaluate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for p in &outcome.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
