use std::fmt::Write as _;
use std::path::Path;

use trajsim_core::{fmt_real, BoxplotSummary, Result, SimError};

/// One line of a long-format summary: grouping values, statistic, value.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub groups: Vec<String>,
    pub statistic: String,
    pub value: f64,
}

/// Long-format ("tidy") table of summary statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, groups: &[&str], statistic: &str, value: f64) {
        debug_assert_eq!(groups.len(), self.columns.len());
        self.rows.push(SummaryRow {
            groups: groups.iter().map(|g| (*g).to_owned()).collect(),
            statistic: statistic.to_owned(),
            value,
        });
    }

    /// Adds the five boxplot percentiles as `p5`..`p95` rows.
    pub fn push_boxplot(&mut self, groups: &[&str], b: &BoxplotSummary<f64>) {
        for (level, v) in BoxplotSummary::<f64>::LEVELS.iter().zip(b.values()) {
            self.push(groups, &format!("p{level}"), v);
        }
    }

    /// Value of the first row matching `groups` and `statistic`.
    pub fn get(&self, groups: &[&str], statistic: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.groups.iter().map(String::as_str).eq(groups.iter().copied()))
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            out.push_str(c);
            out.push(',');
        }
        out.push_str("statistic,value\n");
        for r in &self.rows {
            for g in &r.groups {
                out.push_str(g);
                out.push(',');
            }
            let _ = writeln!(out, "{},{}", r.statistic, fmt_real(r.value));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })
    }
}
