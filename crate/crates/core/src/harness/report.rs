//! Experiment results and their CSV serialization.
//!
//! Schema, one row per (method, seed, M) cell:
//! `method,seed,M,train_loss,hard_loss,ref_sim,oracle_gap,best_metric,steps,wall_ms,error`
//! followed by a summary block whose lines are prefixed `#SUMMARY`. Floats
//! are printed with 17 significant digits, which round-trips f64 exactly, so
//! identical configs produce byte-identical files.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::stats::{mean, standard_error};

pub const CSV_HEADER: &str =
    "method,seed,M,train_loss,hard_loss,ref_sim,oracle_gap,best_metric,steps,wall_ms,error";
const SUMMARY_PREFIX: &str = "#SUMMARY";
const DATA_FIELDS: usize = 11;
const SUMMARY_FIELDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pez,
    AutopromptSgd,
    Fluentprompt,
    Soft,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pez => "pez",
            Method::AutopromptSgd => "autoprompt_sgd",
            Method::Fluentprompt => "fluentprompt",
            Method::Soft => "soft",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "pez" => Some(Method::Pez),
            "autoprompt_sgd" => Some(Method::AutopromptSgd),
            "fluentprompt" => Some(Method::Fluentprompt),
            "soft" => Some(Method::Soft),
            "oracle" => Some(Method::Oracle),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One experiment cell. A failed cell keeps its key columns and records the
/// failure in `error` instead of aborting the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub method: Method,
    pub seed: u64,
    pub m: usize,
    pub train_loss: Option<f64>,
    pub hard_loss: Option<f64>,
    pub ref_sim: Option<f64>,
    pub oracle_gap: Option<f64>,
    pub best_metric: Option<f64>,
    pub steps: usize,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl CellRow {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Per-(method, M) means and standard errors over non-error rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub count: usize,
    pub train_loss: (Option<f64>, Option<f64>),
    pub hard_loss: (Option<f64>, Option<f64>),
    pub ref_sim: (Option<f64>, Option<f64>),
    pub best_metric: (Option<f64>, Option<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<CellRow>,
    pub summary: Vec<SummaryRow>,
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    (mean(values), standard_error(values))
}

impl EvalReport {
    pub fn from_rows(rows: Vec<CellRow>) -> Self {
        let summary = compute_summary(&rows);
        Self { rows, summary }
    }

    /// Rows of one method, in file order.
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &CellRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                row.method,
                row.seed,
                row.m,
                fmt_opt(row.train_loss),
                fmt_opt(row.hard_loss),
                fmt_opt(row.ref_sim),
                fmt_opt(row.oracle_gap),
                fmt_opt(row.best_metric),
                row.steps,
                row.wall_ms,
                sanitize(row.error.as_deref())
            ));
        }
        for s in &self.summary {
            out.push_str(&format!(
                "{SUMMARY_PREFIX},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.method,
                s.m,
                s.count,
                fmt_opt(s.train_loss.0),
                fmt_opt(s.train_loss.1),
                fmt_opt(s.hard_loss.0),
                fmt_opt(s.hard_loss.1),
                fmt_opt(s.ref_sim.0),
                fmt_opt(s.ref_sim.1),
                fmt_opt(s.best_metric.0),
                fmt_opt(s.best_metric.1)
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::IoFailure {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::IoFailure {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |detail: String| Error::MalformedCsv {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header == CSV_HEADER => {}
            other => {
                return Err(malformed(format!("bad header {other:?}")));
            }
        }
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for (num, line) in lines.enumerate() {
            let context = |what: &str| malformed(format!("line {}: {what}", num + 2));
            if let Some(rest) = line.strip_prefix(SUMMARY_PREFIX) {
                let fields: Vec<&str> = rest.split(',').collect();
                if fields.len() != SUMMARY_FIELDS || !fields[0].is_empty() {
                    return Err(context("wrong summary field count"));
                }
                summary.push(SummaryRow {
                    method: Method::parse(fields[1]).ok_or_else(|| context("unknown method"))?,
                    m: fields[2].parse().map_err(|_| context("bad M"))?,
                    count: fields[3].parse().map_err(|_| context("bad count"))?,
                    train_loss: (
                        parse_opt(fields[4]).map_err(|_| context("bad float"))?,
                        parse_opt(fields[5]).map_err(|_| context("bad float"))?,
                    ),
                    hard_loss: (
                        parse_opt(fields[6]).map_err(|_| context("bad float"))?,
                        parse_opt(fields[7]).map_err(|_| context("bad float"))?,
                    ),
                    ref_sim: (
                        parse_opt(fields[8]).map_err(|_| context("bad float"))?,
                        parse_opt(fields[9]).map_err(|_| context("bad float"))?,
                    ),
                    best_metric: (
                        parse_opt(fields[10]).map_err(|_| context("bad float"))?,
                        parse_opt(fields[11]).map_err(|_| context("bad float"))?,
                    ),
                });
                continue;
            }
            if !summary.is_empty() {
                return Err(context("data row after the summary block"));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != DATA_FIELDS {
                return Err(context("wrong field count"));
            }
            rows.push(CellRow {
                method: Method::parse(fields[0]).ok_or_else(|| context("unknown method"))?,
                seed: fields[1].parse().map_err(|_| context("bad seed"))?,
                m: fields[2].parse().map_err(|_| context("bad M"))?,
                train_loss: parse_opt(fields[3]).map_err(|_| context("bad float"))?,
                hard_loss: parse_opt(fields[4]).map_err(|_| context("bad float"))?,
                ref_sim: parse_opt(fields[5]).map_err(|_| context("bad float"))?,
                oracle_gap: parse_opt(fields[6]).map_err(|_| context("bad float"))?,
                best_metric: parse_opt(fields[7]).map_err(|_| context("bad float"))?,
                steps: fields[8].parse().map_err(|_| context("bad steps"))?,
                wall_ms: fields[9].parse().map_err(|_| context("bad wall_ms"))?,
                error: if fields[10].is_empty() {
                    None
                } else {
                    Some(fields[10].to_string())
                },
            });
        }
        if summary.is_empty() {
            return Err(malformed("missing summary block (truncated file?)".into()));
        }
        Ok(EvalReport { rows, summary })
    }
}

/// Per-(method, M) aggregation in first-appearance order.
pub fn compute_summary(rows: &[CellRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for row in rows {
        if !keys.contains(&(row.method, row.m)) {
            keys.push((row.method, row.m));
        }
    }
    keys.into_iter()
        .map(|(method, m)| {
            let group: Vec<&CellRow> = rows
                .iter()
                .filter(|r| r.method == method && r.m == m && !r.is_error())
                .collect();
            let collect = |get: fn(&CellRow) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| get(r)).collect()
            };
            SummaryRow {
                method,
                m,
                count: group.len(),
                train_loss: mean_se(&collect(|r| r.train_loss)),
                hard_loss: mean_se(&collect(|r| r.hard_loss)),
                ref_sim: mean_se(&collect(|r| r.ref_sim)),
                best_metric: mean_se(&collect(|r| r.best_metric)),
            }
        })
        .collect()
}

/// 17 significant digits: enough to reproduce the f64 bit pattern exactly.
fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse().map(Some)
    }
}

/// Error messages may not break the CSV row structure.
fn sanitize(error: Option<&str>) -> String {
    match error {
        Some(e) => e.replace(['\n', '\r'], " ").replace(',', ";"),
        None => String::new(),
    }
}
