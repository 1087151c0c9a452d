//! Long-format CSV reports: `trial,seed,metric,value,ms`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::stats::{mean, sample_std};

pub const HEADER: &str = "trial,seed,metric,value,ms";

/// One measurement. Aggregate rows carry `trial = -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub trial: i64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    /// Per-trial values of `metric`, in trial order.
    pub fn values(&self, metric: &str) -> Vec<f64> {
        let mut v: Vec<(i64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.trial >= 0 && r.metric == metric)
            .map(|r| (r.trial, r.value))
            .collect();
        v.sort_by_key(|&(t, _)| t);
        v.into_iter().map(|(_, x)| x).collect()
    }

    /// The aggregate row `metric:stat` (`stat` is `mean` or `std`).
    pub fn aggregate(&self, metric: &str, stat: &str) -> Option<f64> {
        let name = format!("{metric}:{stat}");
        self.rows
            .iter()
            .find(|r| r.trial < 0 && r.metric == name)
            .map(|r| r.value)
    }

    /// Per-trial metric names in first-appearance order.
    pub fn metrics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.rows.iter().filter(|r| r.trial >= 0) {
            if !out.contains(&r.metric) {
                out.push(r.metric.clone());
            }
        }
        out
    }

    /// Appends `metric:mean` and `metric:std` rows over the finite values.
    pub fn append_aggregates(&mut self, seed: u64) {
        let mut rows: Vec<Row> = self.rows.iter().filter(|r| r.trial >= 0).cloned().collect();
        rows.sort_by_key(|r| r.trial);
        for metric in self.metrics() {
            let v: Vec<f64> = self
                .values(&metric)
                .into_iter()
                .filter(|x| x.is_finite())
                .collect();
            for (stat, value) in [("mean", mean(&v)), ("std", sample_std(&v))] {
                rows.push(Row {
                    trial: -1,
                    seed,
                    metric: format!("{metric}:{stat}"),
                    value,
                    ms: 0,
                });
            }
        }
        self.rows = rows;
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.trial, r.seed, r.metric, r.value, r.ms)
                .expect("writing to a String cannot fail");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Report> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header {HEADER}"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.into(),
            };
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(Error::RaggedRows {
                    line: i + 1,
                    found: cells.len(),
                    expected: 5,
                });
            }
            rows.push(Row {
                trial: cells[0].parse().map_err(|_| bad("bad trial"))?,
                seed: cells[1].parse().map_err(|_| bad("bad seed"))?,
                metric: cells[2].to_string(),
                value: cells[3].parse().map_err(|_| bad("bad value"))?,
                ms: cells[4].parse().map_err(|_| bad("bad ms"))?,
            });
        }
        Ok(Report { rows })
    }
}

/// Writes the report to `path`, or to stdout when `path` is `None`.
pub fn write_report(report: &Report, path: Option<&Path>) -> Result<()> {
    let csv = report.to_csv();
    match path {
        Some(p) => std::fs::write(p, csv).map_err(Error::from),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
