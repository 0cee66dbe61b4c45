//! Field exchange format: a JSON header describing the grid plus CSV rows
//! `i,j,k,X1,X2,X3,<columns...>`, one node per row.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::BodyGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub counts: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<String>,
    pub columns: Vec<String>,
}

impl FieldHeader {
    pub fn for_grid(grid: &BodyGrid, manifold: Option<String>, columns: Vec<String>) -> Self {
        Self { lower: grid.lower(), upper: grid.upper(), counts: grid.counts(), manifold, columns }
    }

    pub fn grid(&self) -> Result<BodyGrid> {
        BodyGrid::new(self.lower, self.upper, self.counts)
    }
}

/// Shortest round-trip decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Renders nodal rows (one `Vec` of column values per node) as CSV.
pub fn write_field_csv(grid: &BodyGrid, header: &FieldHeader, rows: &[Vec<f64>]) -> Result<String> {
    grid.check_len(rows.len(), "field rows")?;
    let mut out = String::from("i,j,k,X1,X2,X3");
    for c in &header.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (node, row) in rows.iter().enumerate() {
        if row.len() != header.columns.len() {
            return Err(Error::Input(format!("row {node} has {} values, header declares {}", row.len(), header.columns.len())));
        }
        let ijk = grid.ijk(node);
        let x = grid.coords(node);
        let mut fields: Vec<String> = ijk.iter().map(|v| v.to_string()).collect();
        fields.extend(x.iter().map(|v| fmt_f64(*v)));
        fields.extend(row.iter().map(|v| fmt_f64(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Parses CSV written by [`write_field_csv`], returning rows in node order.
pub fn read_field_csv(header: &FieldHeader, csv: &str) -> Result<Vec<Vec<f64>>> {
    let grid = header.grid()?;
    let mut lines = csv.lines();
    let head = lines.next().ok_or_else(|| Error::Input("empty field CSV".into()))?;
    let expected_cols = 6 + header.columns.len();
    if head.split(',').count() != expected_cols {
        return Err(Error::Input(format!("CSV header has {} columns, expected {expected_cols}", head.split(',').count())));
    }
    let mut rows = vec![None; grid.len()];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != expected_cols {
            return Err(Error::Input(format!("line {}: expected {expected_cols} fields", lineno + 2)));
        }
        let idx = |s: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Input(format!("line {}: bad index `{s}`", lineno + 2)))
        };
        let ijk = [idx(parts[0])?, idx(parts[1])?, idx(parts[2])?];
        if (0..3).any(|a| ijk[a] >= header.counts[a]) {
            return Err(Error::Input(format!("line {}: index out of range", lineno + 2)));
        }
        let values = parts[6..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Input(format!("line {}: bad number `{s}`", lineno + 2))))
            .collect::<Result<Vec<f64>>>()?;
        rows[grid.index(ijk)] = Some(values);
    }
    rows.into_iter()
        .enumerate()
        .map(|(n, r)| r.ok_or_else(|| Error::Input(format!("node {n} missing from CSV"))))
        .collect()
}
