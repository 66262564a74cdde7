use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use cbnn_harness::verify::{run_suite, Suite};
use cbnn_harness::{bench, run, ExperimentConfig, HarnessError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cbnn",
    version,
    about = "Nearest-neighbour contextual bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config and write its trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a property suite against the brute-force oracles.
    Verify {
        /// One of eq4, thmC1, exp4, lemmaE1, tst-height, nu, phi-cluster.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one evidence value without refreshing potentials.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Time the learner for several horizons and print a CSV table.
    Bench {
        /// Comma-separated horizons, e.g. 1024,131072.
        #[arg(long, value_delimiter = ',', required = true)]
        trials: Vec<usize>,
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn simulate(config: PathBuf, output: Option<PathBuf>) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::from_file(&config).map_err(|e| match e {
        HarnessError::Io { .. } => HarnessError::Config(e.to_string()),
        other => other,
    })?;
    if output.is_some() {
        cfg.output = output;
    }
    let out = run::run(&cfg)?;
    let path = out
        .config
        .output
        .clone()
        .unwrap_or_else(|| config.with_extension("csv"));
    run::write_outputs(&out, &path)?;
    let s = &out.summary;
    println!("trace: {}", path.display());
    println!(
        "trials={} final_regret={} comparator_phi={}",
        s.trials, s.final_regret, s.comparator_phi
    );
    for (name, r) in &s.baseline_regret {
        println!("baseline {name}: final_regret={r}");
    }
    Ok(())
}

fn verify(suite: &str, seed: u64, inject_fault: bool) -> Result<bool, HarnessError> {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite, seed, inject_fault)?;
    for note in &report.notes {
        println!("note: {note}");
    }
    for f in &report.failures {
        println!("FAIL {f}");
    }
    let verdict = if report.passed() { "pass" } else { "fail" };
    println!(
        "{suite}: {verdict} ({} cases, worst {:.3e})",
        report.cases, report.worst
    );
    Ok(report.passed())
}

fn exit_for(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, output } => match simulate(config, output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
        Command::Verify {
            suite,
            seed,
            inject_fault,
        } => match verify(&suite, seed, inject_fault) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => exit_for(&e),
        },
        Command::Bench {
            trials,
            actions,
            seed,
        } => {
            let table = bench::bench(&trials, actions, seed)
                .context("benchmark failed")
                .and_then(|rows| bench::render(&rows).context("rendering table"));
            match table {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    let config = e
                        .downcast_ref::<HarnessError>()
                        .is_some_and(HarnessError::is_config);
                    ExitCode::from(if config { 2 } else { 1 })
                }
            }
        }
    }
}
