use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::stats::{CiMethod, Estimate};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ci: CiMethod,
    pub description: String,
}

impl Column {
    pub fn new(name: &str, ci: CiMethod, description: &str) -> Self {
        Self {
            name: name.into(),
            ci,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Grid coordinates, one value per key column.
    pub key: Vec<String>,
    pub cells: Vec<Estimate>,
    /// Set when a replication in this grid cell failed; cells are then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Monte Carlo summary of one experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    pub key_columns: Vec<String>,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ResultTable {
    pub fn new(experiment: &str, key_columns: &[&str], columns: Vec<Column>) -> Self {
        Self {
            experiment: experiment.into(),
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            columns,
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, key: Vec<String>, cells: Vec<Estimate>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(Row { key, cells, failure: None });
    }

    pub fn push_failed(&mut self, key: Vec<String>, message: String) {
        let cells = vec![Estimate::missing(); self.columns.len()];
        self.rows.push(Row { key, cells, failure: Some(message) });
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// The row whose key equals `key` exactly.
    pub fn row(&self, key: &[&str]) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.key.len() == key.len() && r.key.iter().zip(key).all(|(a, b)| a == b))
    }

    pub fn cell(&self, key: &[&str], column: &str) -> Option<Estimate> {
        let j = self.column_index(column)?;
        self.row(key).map(|r| r.cells[j])
    }

    /// Point value of a cell, NaN if absent.
    pub fn value(&self, key: &[&str], column: &str) -> f64 {
        self.cell(key, column).map_or(f64::NAN, |e| e.get())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.key_columns.clone();
        for c in &self.columns {
            header.push(c.name.clone());
            header.push(format!("{}_lo", c.name));
            header.push(format!("{}_hi", c.name));
        }
        header.push("status".into());
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            let mut rec = r.key.clone();
            for e in &r.cells {
                rec.push(fmt(e.value));
                rec.push(fmt(e.lo));
                rec.push(fmt(e.hi));
            }
            rec.push(r.failure.clone().map_or("ok".into(), |m| format!("failed: {m}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width text rendering of the point values.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = self.key_columns.clone();
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = r.key.clone();
            match &r.failure {
                Some(m) => line.push(format!("FAILED: {m}")),
                None => line.extend(r.cells.iter().map(|e| match e.value {
                    Some(v) => format!("{v:.3}"),
                    None => "-".into(),
                })),
            }
            lines.push(line);
        }
        let ncol = lines.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..ncol)
            .map(|j| lines.iter().filter_map(|l| l.get(j)).map(String::len).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.experiment);
        for l in &lines {
            let cells: Vec<String> = l.iter().enumerate().map(|(j, s)| format!("{s:>w$}", w = widths[j])).collect();
            out.push_str(&cells.join("  "));
            out.push('\n');
        }
        out
    }

    /// Writes `<experiment>.csv` and `<experiment>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let stem = self.experiment.to_lowercase();
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&csv_path, self.to_csv()?)?;
        fs::write(&json_path, serde_json::to_string_pretty(self)?)?;
        Ok(vec![csv_path, json_path])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_estimate;

    #[test]
    fn csv_has_interval_columns() {
        let mut t = ResultTable::new("Demo", &["k"], vec![Column::new("z", CiMethod::NormalMean, "mean z")]);
        t.push(vec!["1".into()], vec![mean_estimate(&[1.0, 2.0, 3.0])]);
        t.push_failed(vec!["2".into()], "boom".into());
        let csv = t.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,z,z_lo,z_hi,status");
        assert!(lines.next().unwrap().starts_with("1,2,"));
        assert_eq!(lines.next().unwrap(), "2,,,,failed: boom");
        assert_eq!(t.value(&["1"], "z"), 2.0);
        assert_eq!(t.failed_rows(), 1);
    }
}
