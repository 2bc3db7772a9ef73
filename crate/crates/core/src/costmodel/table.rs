use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CostError, CostOracle};
use crate::heuristics::VariableOrder;
use crate::polyset::ProblemInstance;

const HEADER: [&str; 4] = ["problem", "ordering", "time_s", "timed_out"];

/// One measured run. `ordering` is in `x>y>z` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub problem_id: String,
    pub ordering: String,
    pub time_s: f64,
    pub timed_out: bool,
}

/// Recorded times keyed by (problem id, ordering). Timed-out runs cost
/// `timeout_s * penalty_factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingTable {
    records: HashMap<(String, String), CostRecord>,
    timeout_s: f64,
    penalty_factor: f64,
}

impl TimingTable {
    pub fn new(records: Vec<CostRecord>, timeout_s: f64, penalty_factor: f64) -> Self {
        let records = records
            .into_iter()
            .map(|r| ((r.problem_id.clone(), r.ordering.clone()), r))
            .collect();
        TimingTable {
            records,
            timeout_s,
            penalty_factor,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timeout_s(&self) -> f64 {
        self.timeout_s
    }

    pub fn get(&self, problem: &str, ordering: &str) -> Option<&CostRecord> {
        self.records.get(&(problem.to_string(), ordering.to_string()))
    }
}

impl CostOracle for TimingTable {
    fn id(&self) -> String {
        format!("table({} records,timeout={},penalty={})", self.records.len(), self.timeout_s, self.penalty_factor)
    }

    fn cost(&self, pr: &ProblemInstance, ord: &VariableOrder) -> Result<f64, CostError> {
        let ordering = ord.display(pr);
        let rec = self.get(pr.label(), &ordering).ok_or_else(|| CostError::MissingRecord {
            problem: pr.label().to_string(),
            ordering,
        })?;
        Ok(if rec.timed_out {
            self.timeout_s * self.penalty_factor
        } else {
            rec.time_s
        })
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a `problem,ordering,time_s,timed_out` CSV.
///
/// Without an explicit `timeout_s`, the limit is taken as the largest
/// recorded time. Rows are numbered as file lines (the header is row 1).
pub fn load_timing_table(path: &Path, timeout_s: Option<f64>, penalty_factor: f64) -> Result<TimingTable, CostError> {
    let table_err = |message: String| CostError::Table {
        path: path.to_path_buf(),
        message,
    };
    if !(penalty_factor.is_finite() && penalty_factor > 0.0) {
        return Err(table_err(format!("penalty factor must be positive, got {penalty_factor}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| table_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| table_err(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(table_err(format!("header must be `{}`, found `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }

    let mut rows: Vec<(u64, CostRecord)> = Vec::new();
    let mut seen: HashMap<(String, String), u64> = HashMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            CostError::Row {
                path: path.to_path_buf(),
                row,
                message: e.to_string(),
            }
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| CostError::Row {
            path: path.to_path_buf(),
            row,
            message,
        };
        let problem_id = record[0].to_string();
        let ordering: String = record[1].split('>').map(str::trim).collect::<Vec<_>>().join(">");
        if problem_id.is_empty() || ordering.is_empty() {
            return Err(row_err("empty problem or ordering field".into()));
        }
        let time_s: f64 = record[2]
            .parse()
            .map_err(|_| row_err(format!("time_s `{}` is not a number", &record[2])))?;
        if !time_s.is_finite() || time_s < 0.0 {
            return Err(row_err(format!("negative or non-finite time_s {time_s}")));
        }
        let timed_out = parse_bool(&record[3]).ok_or_else(|| row_err(format!("timed_out `{}` is not a boolean", &record[3])))?;
        let key = (problem_id.clone(), ordering.clone());
        if let Some(&first_row) = seen.get(&key) {
            return Err(CostError::DuplicateKey {
                path: path.to_path_buf(),
                problem: problem_id,
                ordering,
                first_row,
                second_row: row,
            });
        }
        seen.insert(key, row);
        rows.push((
            row,
            CostRecord {
                problem_id,
                ordering,
                time_s,
                timed_out,
            },
        ));
    }

    let timeout_s = match timeout_s {
        Some(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(table_err(format!("timeout must be positive, got {t}")));
            }
            if let Some((row, r)) = rows.iter().find(|(_, r)| !r.timed_out && r.time_s > t) {
                return Err(CostError::Row {
                    path: path.to_path_buf(),
                    row: *row,
                    message: format!("time_s {} exceeds the timeout {t} but is not marked timed out", r.time_s),
                });
            }
            t
        }
        None => {
            let max = rows.iter().map(|(_, r)| r.time_s).fold(0.0, f64::max);
            if max > 0.0 {
                max
            } else {
                1.0
            }
        }
    };
    Ok(TimingTable::new(rows.into_iter().map(|(_, r)| r).collect(), timeout_s, penalty_factor))
}
