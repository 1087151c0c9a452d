use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shiftlab::harness::{preset, preset_names, run_experiment, write_report, ExperimentConfig};
use shiftlab::Error;

#[derive(Parser)]
#[command(name = "shiftlab", version, about = "Distribution-shift experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a shipped preset, or run it with --run.
    Preset {
        name: Option<String>,
        /// List preset names.
        #[arg(long)]
        list: bool,
        #[arg(long)]
        run: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn apply(mut cfg: ExperimentConfig, o: &Overrides) -> Result<ExperimentConfig, Error> {
    if let Some(t) = o.trials {
        cfg.trials = t;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig, o: &Overrides) -> ExitCode {
    let (report, failures) = match run_experiment(cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = write_report(&report, o.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for f in &failures {
        eprintln!("trial {} {}: {}", f.trial, f.method, f.error);
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            match ExperimentConfig::from_file(&config).and_then(|c| apply(c, &overrides)) {
                Ok(cfg) => execute(&cfg, &overrides),
                Err(e) => fail(&e),
            }
        }
        Command::Preset {
            name,
            list,
            run,
            overrides,
        } => {
            if list || name.is_none() {
                for n in preset_names() {
                    println!("{n}");
                }
                return ExitCode::SUCCESS;
            }
            let name = name.expect("checked above");
            match preset(&name).and_then(|c| apply(c, &overrides)) {
                Ok(cfg) if run => execute(&cfg, &overrides),
                Ok(cfg) => {
                    println!("{}", cfg.to_json());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { config } => match ExperimentConfig::from_file(&config) {
            Ok(cfg) => {
                println!(
                    "ok: {} trials, {} methods",
                    cfg.trials,
                    cfg.methods.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
