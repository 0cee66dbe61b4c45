//! Report structures, file output and series export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::scenario::Bound;

/// A labeled table of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV with shortest round-trip formatting of every value.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub value: Option<f64>,
    pub pass: bool,
}

/// Everything a task produced. Metrics are scalars; flags are booleans;
/// warnings become failures under `--strict`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskOutput {
    pub metrics: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
    pub series: BTreeMap<String, Series>,
}

impl TaskOutput {
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn flag(&mut self, name: &str, value: bool) {
        self.flags.insert(name.to_string(), value);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub id: String,
    pub kind: String,
    pub status: Status,
    pub error: Option<String>,
    #[serde(flatten)]
    pub output: TaskOutput,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl TaskReport {
    pub fn evaluate(id: &str, kind: &str, output: TaskOutput, expect: &BTreeMap<String, Bound>, strict: bool) -> Self {
        let checks: Vec<Check> = expect
            .iter()
            .map(|(metric, b)| {
                let value = output.metrics.get(metric).copied();
                let pass = value.map_or(false, |v| v.is_finite() && b.min.map_or(true, |m| v >= m) && b.max.map_or(true, |m| v <= m));
                Check { metric: metric.clone(), min: b.min, max: b.max, value, pass }
            })
            .collect();
        let failed = checks.iter().any(|c| !c.pass) || (strict && !output.warnings.is_empty());
        let status = if failed { Status::Fail } else { Status::Pass };
        Self { id: id.to_string(), kind: kind.to_string(), status, error: None, output, checks, files: Vec::new() }
    }

    pub fn errored(id: &str, kind: &str, error: String) -> Self {
        Self {
            id: id.to_string(),
            kind: kind.to_string(),
            status: Status::Error,
            error: Some(error),
            output: TaskOutput::default(),
            checks: Vec::new(),
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub strict: bool,
    pub status: Status,
    pub tasks: Vec<TaskReport>,
}

impl Summary {
    pub fn failures(&self) -> usize {
        self.tasks.iter().filter(|t| t.status != Status::Pass).count()
    }

    /// Qualified names `task-id/series` of every stored series.
    pub fn series_names(&self) -> Vec<String> {
        self.tasks.iter().flat_map(|t| t.output.series.keys().map(move |s| format!("{}/{s}", t.id))).collect()
    }

    /// Looks up `task-id/series`, or a bare series name that is unique in the report.
    pub fn find_series(&self, name: &str) -> Result<&Series> {
        let matches: Vec<&Series> = self
            .tasks
            .iter()
            .flat_map(|t| t.output.series.iter().map(move |(s, v)| (format!("{}/{s}", t.id), s, v)))
            .filter(|(full, short, _)| full == name || *short == name)
            .map(|(_, _, v)| v)
            .collect();
        match matches.as_slice() {
            [one] => Ok(one),
            _ => Err(CliError::Series { requested: name.to_string(), available: self.series_names() }),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes `summary.json`, one CSV per series and `metadata.json` (the only
/// file with run-dependent content). Returns the summary path.
pub fn write_reports(dir: &Path, summary: &mut Summary, metadata: &serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for task in &mut summary.tasks {
        task.files.clear();
        for (name, series) in &task.output.series {
            let file = format!("{}-{name}.csv", task.id);
            write(&dir.join(&file), &series.to_csv())?;
            task.files.push(file);
        }
    }
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    write(&path, &text)?;
    let mut meta = serde_json::to_string_pretty(metadata).expect("metadata serializes");
    meta.push('\n');
    write(&dir.join("metadata.json"), &meta)?;
    Ok(path)
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        origin: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output_with(metric: f64) -> TaskOutput {
        let mut out = TaskOutput::default();
        out.metric("residual", metric);
        let mut s = Series::new(&["h", "residual"]);
        s.push(vec![0.1, metric]);
        out.series.insert("refinement".into(), s);
        out
    }

    #[test]
    fn checks_apply_bounds() {
        let expect = BTreeMap::from([("residual".to_string(), Bound { min: None, max: Some(1e-3) })]);
        assert_eq!(TaskReport::evaluate("t", "k", output_with(1e-4), &expect, false).status, Status::Pass);
        assert_eq!(TaskReport::evaluate("t", "k", output_with(1e-2), &expect, false).status, Status::Fail);
        let missing = BTreeMap::from([("order".to_string(), Bound { min: Some(1.0), max: None })]);
        assert_eq!(TaskReport::evaluate("t", "k", output_with(1e-4), &missing, false).status, Status::Fail);
    }

    #[test]
    fn strict_turns_warnings_into_failures() {
        let mut out = output_with(0.0);
        out.warnings.push("not converged".into());
        assert_eq!(TaskReport::evaluate("t", "k", out.clone(), &BTreeMap::new(), false).status, Status::Pass);
        assert_eq!(TaskReport::evaluate("t", "k", out, &BTreeMap::new(), true).status, Status::Fail);
    }

    #[test]
    fn series_lookup() {
        let summary = Summary {
            scenario: "s".into(),
            description: String::new(),
            seed: 0,
            strict: false,
            status: Status::Pass,
            tasks: vec![
                TaskReport::evaluate("a", "k", output_with(1.0), &BTreeMap::new(), false),
                TaskReport::evaluate("b", "k", output_with(2.0), &BTreeMap::new(), false),
            ],
        };
        assert_eq!(summary.find_series("b/refinement").unwrap().rows[0][1], 2.0);
        match summary.find_series("refinement") {
            Err(CliError::Series { available, .. }) => assert_eq!(available, vec!["a/refinement", "b/refinement"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_keeps_full_precision() {
        let mut s = Series::new(&["x"]);
        s.push(vec![0.1 + 0.2]);
        assert_eq!(s.to_csv(), "x\n0.30000000000000004\n");
    }
}
