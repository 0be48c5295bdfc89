use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sipsim_cli::commands::{EvaluateArgs, ReportArgs, SimulateArgs, SipTestArgs};
use sipsim_cli::CliError;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "sipsim",
    version,
    about = "Simulate and evaluate SIP-reasoning social agents"
)]
struct Cli {
    /// Log progress (repeat for debug output). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a time-step simulation seeded from an event file.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        event: Option<PathBuf>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Compare a simulation trace against the real event.
    Evaluate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        event: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Questionnaire responses CSV to summarize in the report.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Administer the 13-item questionnaire to agent cohorts.
    SipTest {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        respondents: Option<usize>,
        /// Human responses CSV to compare against.
        #[arg(long)]
        human: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print structural statistics of an event file as JSON.
    DatasetStats {
        path: PathBuf,
        /// Reject unknown fields instead of warning.
        #[arg(long)]
        strict: bool,
    },
    /// Merge evaluation reports into comparison CSVs.
    Report {
        /// `run_id=path` or `path`, where path is a report.json or its directory.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            output,
            seed,
            steps,
            event,
            force,
        } => {
            let out = sipsim_cli::simulate(&SimulateArgs {
                config,
                output,
                force,
                seed,
                steps,
                event,
            })?;
            println!(
                "{} records -> {} (sha256 {})",
                out.records,
                out.output_dir.display(),
                out.trace_sha256
            );
        }
        Command::Evaluate {
            trace,
            event,
            config,
            steps,
            responses,
            output,
            force,
        } => {
            let report = sipsim_cli::evaluate(&EvaluateArgs {
                trace,
                event,
                config,
                steps,
                responses,
                output: output.clone(),
                force,
            })?;
            match &report.propagation {
                Some(p) => println!(
                    "mean delta_bias {:.4}, mean delta_div {:.4}, dtw {:.4}",
                    p.mean_delta_bias, p.mean_delta_div, p.dtw
                ),
                None => println!("no step had attitudes on both sides"),
            }
            if let Some(s) = &report.alignment.stance {
                println!("stance macro-F1 {:.4}", s.scores.macro_f1);
            }
            println!("report -> {}", output.display());
        }
        Command::SipTest {
            config,
            output,
            respondents,
            human,
            force,
        } => {
            let report = sipsim_cli::sip_test(&SipTestArgs {
                config,
                output,
                force,
                respondents,
                human,
            })?;
            for c in &report.cohorts {
                println!(
                    "{}: {} respondents, {} complete",
                    c.cohort.as_str(),
                    c.respondents,
                    c.complete_respondents
                );
            }
        }
        Command::DatasetStats { path, strict } => {
            let stats = sipsim_cli::dataset_stats(&path, strict)?;
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
        }
        Command::Report { inputs, output, force } => {
            let ids = sipsim_cli::report(&ReportArgs {
                inputs,
                output: output.clone(),
                force,
            })?;
            println!("merged {} runs -> {}", ids.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
