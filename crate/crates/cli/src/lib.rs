//! Scenario runner for the multifield toolkit: parses JSON scenarios, runs
//! their tasks against the library and writes deterministic reports.

pub mod catalog;
pub mod error;
pub mod report;
pub mod scenario;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use error::{CliError, Result};
use report::{Status, Summary, TaskReport};
use scenario::Scenario;

/// Reads a scenario from a file, falling back to a bundled scenario name.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return Scenario::parse(&text, source);
    }
    match catalog::find(source) {
        Some(b) => Scenario::parse(b.config, b.name),
        None => Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"))),
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Runs every task in order. Task errors are recorded and later tasks still run.
pub fn run_scenario(scenario: &Scenario, out: Option<&Path>, strict: bool) -> Result<(Summary, PathBuf)> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(scenario.output.clone().unwrap_or_else(|| format!("reports/{}", scenario.name))),
    };
    let started = unix_seconds();
    let mut timings = serde_json::Map::new();
    let mut reports = Vec::new();
    for spec in &scenario.tasks {
        let clock = Instant::now();
        let kind = spec.task.kind();
        let report = match tasks::execute(scenario, &spec.task) {
            Ok(output) => TaskReport::evaluate(&spec.id, kind, output, &spec.expect, strict),
            Err(e) => TaskReport::errored(&spec.id, kind, CliError::Task { task: spec.id.clone(), source: e }.to_string()),
        };
        timings.insert(spec.id.clone(), clock.elapsed().as_secs_f64().into());
        reports.push(report);
    }
    let failed = reports.iter().any(|r| r.status != Status::Pass);
    let mut summary = Summary {
        scenario: scenario.name.clone(),
        description: scenario.description.clone(),
        seed: scenario.seed,
        strict,
        status: if failed { Status::Fail } else { Status::Pass },
        tasks: reports,
    };
    let metadata = serde_json::json!({
        "tool": "multifield",
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_seconds(),
        "task_seconds": timings,
    });
    let path = report::write_reports(&dir, &mut summary, &metadata)?;
    Ok((summary, path))
}

/// `name<TAB>description` lines, sorted.
pub fn list_scenarios() -> String {
    catalog::BUNDLED.iter().map(|b| format!("{}\t{}\n", b.name, b.description)).collect()
}

pub fn export_series(report: &Path, series: &str) -> Result<String> {
    let summary = report::load_summary(report)?;
    Ok(summary.find_series(series)?.to_csv())
}
