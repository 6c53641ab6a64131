//! `ipsverify`: runs configured verification experiments and evaluates bounds.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ips_core::experiment::formulas::{self, BoundRequest, FORMULAS};
use ips_core::experiment::{self, ExperimentConfig};
use ips_core::Error;

#[derive(Parser)]
#[command(
    name = "ipsverify",
    version,
    about = "Finite-volume checks of propagation and restriction bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Output directory for the CSV and JSON artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte Carlo replicas.
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Print the formula, inputs and anchor of one bound.
    Describe { formula_id: String },
    /// List every formula id.
    List,
    /// Evaluate a bound from a file with `formula_id` and an `[inputs]` table; prints JSON.
    Bound {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            threads,
            tol,
            out,
            replicas,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.numerics.seed = s;
            }
            if let Some(t) = threads {
                cfg.numerics.threads = t;
            }
            if let Some(t) = tol {
                if t.is_nan() || t <= 0.0 {
                    return Err(Error::Config("--tol must be positive".into()));
                }
                cfg.numerics.tol = t;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            if let Some(r) = replicas {
                cfg.numerics.replicas = r;
            }
            let threads = cfg.numerics.threads;
            let (outcome, csv, json) = experiment::with_threads(threads, || experiment::run(&cfg))??;
            let c = &outcome.summary.counts;
            println!(
                "{}: {} rows, {}/{} checks passed; wrote {} and {}",
                outcome.summary.experiment,
                c.rows,
                c.passed,
                c.checks,
                csv.display(),
                json.display()
            );
            Ok(())
        }
        Command::Describe { formula_id } => {
            print!("{}", formulas::describe_text(&formula_id)?);
            Ok(())
        }
        Command::List => {
            for f in FORMULAS {
                println!("{:<26} {}", f.id, f.anchor);
            }
            Ok(())
        }
        Command::Bound { config } => {
            let req = BoundRequest::load(&config)?;
            println!("{}", formulas::evaluate(&req)?.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
