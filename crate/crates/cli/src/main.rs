use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smarrt::bench::{
    format_summary, run_campaign, run_trial, summarize, BenchError, CampaignConfig, Outcome, PlannerName, ScenarioSpec,
    TraceSink,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "smarrt", version, about = "Reactive RRT replanning among moving obstacles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded trial and print its result row.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// smarrt, errt, drrt, mprrt or ebgrrt.
        #[arg(long)]
        planner: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write one JSON record per tick to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Add the utility grids to trace records of replan ticks.
        #[arg(long, requires = "trace")]
        trace_utility: bool,
    },
    /// Run a Monte-Carlo campaign, resuming from an existing results file.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file.
    Validate { file: PathBuf },
}

enum Failure {
    /// Missing, unreadable or invalid input files.
    Input(BenchError),
    Run(BenchError),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                BenchError::Io { .. } | BenchError::Trace(_) => EXIT_FAILURE,
                _ => EXIT_INVALID,
            };
            ExitCode::from(code)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Run { scenario, planner, seed, trace, trace_utility } => {
            let planner: PlannerName = planner.parse().map_err(Failure::Input)?;
            let spec = ScenarioSpec::load(&scenario).map_err(Failure::Input)?;
            let id = scenario.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let report = match trace {
                Some(path) => {
                    let file = File::create(&path)
                        .map_err(|source| Failure::Run(BenchError::Io { path: path.clone(), source }))?;
                    let mut out = BufWriter::new(file);
                    let sink = TraceSink { out: &mut out, utility: trace_utility };
                    let report = run_trial(&spec, &id, planner, seed, Some(sink)).map_err(Failure::Run)?;
                    out.flush().map_err(|e| Failure::Run(BenchError::Trace(e)))?;
                    report
                }
                None => run_trial(&spec, &id, planner, seed, None).map_err(Failure::Run)?,
            };
            let r = &report.result;
            println!(
                "{} planner={} seed={} outcome={:?} travel_time_s={} n_replans={} avg_replan_time_s={:.6}",
                r.scenario_id, r.planner, r.seed, report.outcome, r.travel_time_s, r.n_replans, r.avg_replan_time_s
            );
            Ok(if report.outcome == Outcome::Reached { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) })
        }
        Command::Campaign { config, out } => {
            let cfg = CampaignConfig::load(&config).map_err(Failure::Input)?;
            let rows = run_campaign(&cfg, &out).map_err(Failure::Run)?;
            print!("{}", format_summary(&summarize(&rows)));
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file } => {
            let spec = ScenarioSpec::load(&file).map_err(Failure::Input)?;
            println!("{}: ok ({} obstacles, {} statics)", file.display(), spec.obstacles.len(), spec.statics.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}
