use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use multifield_cli::report::Status;
use multifield_cli::{export_series, list_scenarios, load_scenario, run_scenario, CliError};

#[derive(Parser)]
#[command(name = "multifield", version, about = "Run multifield continuum scenarios and export their reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run {
        config: String,
        /// Report directory (default: the scenario's `output`, else reports/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Treat task warnings (no convergence, indeterminate order) as failures.
        #[arg(long)]
        strict: bool,
    },
    /// List bundled scenarios.
    List,
    /// Print one series of a summary.json report as CSV.
    Export {
        report: PathBuf,
        #[arg(long)]
        series: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, strict } => {
            let scenario = load_scenario(&config)?;
            let (summary, path) = run_scenario(&scenario, out.as_deref(), strict)?;
            for t in &summary.tasks {
                let status = match t.status {
                    Status::Pass => "pass",
                    Status::Fail => "FAIL",
                    Status::Error => "ERROR",
                };
                println!("{status:5} {} ({})", t.id, t.kind);
                if let Some(e) = &t.error {
                    println!("      {e}");
                }
                for c in t.checks.iter().filter(|c| !c.pass) {
                    println!("      {} = {:?} outside [{:?}, {:?}]", c.metric, c.value, c.min, c.max);
                }
                for w in &t.output.warnings {
                    println!("      warning: {w}");
                }
            }
            println!("report: {}", path.display());
            match summary.failures() {
                0 => Ok(()),
                n => Err(CliError::Failed(n)),
            }
        }
        Command::List => {
            print!("{}", list_scenarios());
            Ok(())
        }
        Command::Export { report, series } => {
            print!("{}", export_series(&report, &series)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
