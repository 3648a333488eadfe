//! Return-series ingestion and run configuration files.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::audit::NullSource;
use crate::environments::{EnvironmentSpec, ReturnPath};
use crate::harness::ExperimentSpec;
use crate::workflows::{WorkflowFamily, WorkflowSpec};
use crate::{Error, Result};

/// Marker used by some data vendors for missing returns.
pub const SENTINEL: f64 = -99.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// A run of missing calendar days between consecutive observations, longer than a weekend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub after: NaiveDate,
    pub before: NaiveDate,
    pub calendar_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub gaps: Vec<Gap>,
    pub warnings: Vec<String>,
}

/// Gaps longer than this many calendar days are reported.
const GAP_DAYS: i64 = 4;

fn parse_date(s: &str) -> Option<NaiveDate> {
    ["%Y-%m-%d", "%Y%m%d", "%Y/%m/%d"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

/// Reads a `(date, return)` CSV with a header row. `line` numbers in errors count the
/// header as line 1.
pub fn ingest_reader(
    reader: impl Read,
    label: &str,
    strictness: Strictness,
) -> Result<(ReturnPath, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 {
        return Err(Error::Ingestion {
            row: 1,
            message: format!("expected a two-column (date, return) header, got {} columns", headers.len()),
        });
    }
    let lenient = strictness == Strictness::Lenient;
    let mut warnings = Vec::new();
    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Ingestion { row: line, message: e.to_string() })?;
        if rec.len() != 2 {
            return Err(Error::Ingestion { row: line, message: format!("expected 2 fields, got {}", rec.len()) });
        }
        let date = parse_date(&rec[0]).ok_or_else(|| Error::Ingestion {
            row: line,
            message: format!("unparseable date {:?}", &rec[0]),
        })?;
        let value: f64 = rec[1].parse().map_err(|_| Error::Ingestion {
            row: line,
            message: format!("unparseable return {:?}", &rec[1]),
        })?;
        if value.is_nan() || value.is_infinite() {
            return Err(Error::Ingestion { row: line, message: format!("non-finite return {value}") });
        }
        if value == SENTINEL {
            return Err(Error::Ingestion { row: line, message: "sentinel missing value -99.99".into() });
        }
        if value.abs() > 1.0 {
            let msg = format!("suspicious return {value} (|r| > 1) at line {line}");
            if lenient {
                log::warn!("{msg}");
                warnings.push(msg);
            } else {
                return Err(Error::Ingestion { row: line, message: msg });
            }
        }
        if !seen.insert(date) {
            let msg = format!("duplicate date {date} at line {line}");
            if lenient {
                log::warn!("{msg}; keeping the first occurrence");
                warnings.push(msg);
                continue;
            }
            return Err(Error::Ingestion { row: line, message: msg });
        }
        if let Some((prev, _, _)) = rows.last() {
            if date < *prev {
                if !lenient {
                    return Err(Error::Ingestion {
                        row: line,
                        message: format!("date {date} precedes {prev}; dates must increase"),
                    });
                }
            }
        }
        rows.push((date, value, line));
    }
    if rows.is_empty() {
        return Err(Error::Ingestion { row: 1, message: "no data rows".into() });
    }
    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        let msg = "dates were not in chronological order and have been sorted".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        rows.sort_by_key(|r| r.0);
    }
    let gaps = rows
        .windows(2)
        .filter_map(|w| {
            let days = (w[1].0 - w[0].0).num_days();
            (days > GAP_DAYS).then(|| Gap { after: w[0].0, before: w[1].0, calendar_days: days })
        })
        .collect();
    let report = IngestReport {
        rows: rows.len(),
        first: rows[0].0,
        last: rows[rows.len() - 1].0,
        gaps,
        warnings,
    };
    let mut path = ReturnPath::from_returns(label, rows.iter().map(|r| r.1).collect());
    path.dates = Some(rows.iter().map(|r| r.0.to_string()).collect());
    Ok((path, report))
}

pub fn ingest_returns(path: impl AsRef<Path>, strictness: Strictness) -> Result<(ReturnPath, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "returns".into());
    ingest_reader(file, &label, strictness)
}

/// Audit settings of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Workflow the Stage-1 calibration is generated with and bound to.
    pub reference: Option<WorkflowSpec>,
    pub alpha: f64,
    pub replications: usize,
    pub length_t: usize,
    pub calibration_dir: Option<PathBuf>,
    /// Synthetic Stage-2 target, used when no return file is given.
    pub target: Option<EnvironmentSpec>,
    /// `(date, return)` CSV used as the Stage-2 target.
    pub data: Option<PathBuf>,
    pub strictness: Strictness,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            reference: None,
            alpha: 0.05,
            replications: 1000,
            length_t: 2520,
            calibration_dir: None,
            target: None,
            data: None,
            strictness: Strictness::Strict,
        }
    }
}

impl AuditConfig {
    pub fn reference(&self) -> WorkflowSpec {
        self.reference
            .clone()
            .unwrap_or_else(|| WorkflowSpec::default_for(WorkflowFamily::RandomBaseline))
    }
}

/// One JSON document per run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Null environments for calibration; the five canonical ones when unset.
    pub environments: Option<Vec<NullSource>>,
    /// The pipeline under audit.
    pub workflow: Option<WorkflowSpec>,
    pub audit: AuditConfig,
    pub experiment: Option<ExperimentSpec>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn environments(&self) -> Vec<NullSource> {
        self.environments
            .clone()
            .unwrap_or_else(|| crate::audit::canonical_sources(self.audit.length_t))
    }

    /// The configuration with every default written out.
    pub fn resolved(&self) -> Result<Self> {
        let mut r = self.clone();
        r.environments = Some(self.environments());
        r.audit.reference = Some(self.audit.reference());
        if let Some(w) = &r.workflow {
            w.validate()?;
        }
        if let Some(e) = &r.experiment {
            r.experiment = Some(e.resolved()?);
        }
        Ok(r)
    }
}
