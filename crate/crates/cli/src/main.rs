//! `wavearb run | selftest | compare`.
//!
//! Exit codes: 0 success, 1 invalid input (or an I/O failure), 2 the
//! simulation disagreed with the oracle or a self-test property failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavearb::protocol::Fidelity;
use wavearb::runner::{cmd_compare, cmd_run, cmd_selftest, write_latency_csv};
use wavearb::{load_config, Error, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "wavearb",
    version,
    about = "Wave-interference bus arbitration simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every round of a scenario and write rounds.jsonl, traces/ and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed for randomly drawn rounds, overriding the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Fidelity>,
    },
    /// Signal and line property checks plus exhaustive sweeps up to four nodes.
    Selftest,
    /// Wave versus serial arbitration latency for 2 to 8 nodes.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Fidelity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Input(Error),
    Property(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

fn load(
    config: &PathBuf,
    seed: Option<u64>,
    mode: Option<Fidelity>,
) -> Result<ScenarioConfig, Error> {
    let mut scenario = load_config(config)?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    if let Some(mode) = mode {
        scenario = scenario.with_mode(mode)?;
    }
    Ok(scenario)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            mode,
        } => {
            let scenario = load(&config, seed, mode)?;
            let report = cmd_run(&scenario, &out)?;
            let f = &report.fairness;
            println!(
                "{}: {} rounds ({} {}), wins {:?}, max wait {}, Jain {:.4}",
                report.name,
                report.rounds,
                report.mode,
                report.scheme,
                f.wins,
                f.max_wait,
                f.jain_index
            );
            let l = &report.latency;
            print!("latency: wave {:e} s, serial {:e} s", l.wave_s, l.serial_s);
            match l.measured_settle_s {
                Some(s) => println!(", measured settle {s:e} s"),
                None => println!(),
            }
            println!("output written to {}", out.display());
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Property(format!(
                    "{} of {} rounds disagree with the oracle",
                    report.mismatches, report.rounds
                )))
            }
        }
        Command::Selftest => {
            let report = cmd_selftest()?;
            for c in &report.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Property("self-test failed".into()))
            }
        }
        Command::Compare { config, out } => {
            let scenario = load(&config, None, None)?;
            let rows = cmd_compare(&scenario)?;
            println!("{:>5} {:>14} {:>14}", "nodes", "wave (s)", "serial (s)");
            for r in &rows {
                println!("{:>5} {:>14.4e} {:>14.4e}", r.nodes, r.wave_s, r.serial_s);
            }
            let path = write_latency_csv(&rows, &out)?;
            println!("written to {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap reports bad arguments with exit status 2, which here means a
    // failed property; bad arguments are invalid input
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Property(msg)) => {
            eprintln!("failure: {msg}");
            ExitCode::from(2)
        }
    }
}
