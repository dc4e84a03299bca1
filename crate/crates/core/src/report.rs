//! Plain-text report writers: tab-separated tables and `key=value`
//! summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses_metrics::EvalReport;
use crate::TV_NAMES;

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Per-TV and average PPMC/MSE/MAE under `prefix`.
    pub fn push_eval(&mut self, prefix: &str, report: &EvalReport) -> &mut Self {
        for (name, m) in TV_NAMES.iter().zip(&report.per_tv) {
            self.push(format!("{prefix}.{name}.ppmc"), format!("{:.6}", m.ppmc));
            self.push(format!("{prefix}.{name}.mse"), format!("{:.6}", m.mse));
            self.push(format!("{prefix}.{name}.mae"), format!("{:.6}", m.mae));
        }
        self.push(format!("{prefix}.average.ppmc"), format!("{:.6}", report.average.ppmc));
        self.push(format!("{prefix}.average.mse"), format!("{:.6}", report.average.mse));
        self.push(format!("{prefix}.average.mae"), format!("{:.6}", report.average.mae));
        self.push(format!("{prefix}.frames"), report.frames);
        self.push(format!("{prefix}.degenerate"), report.degenerate)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("summary line {} has no '='", i + 1)))?;
            out.push(k, v);
        }
        Ok(out)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Metric table with a row per metric and a column per TV plus Average.
pub fn eval_table(report: &EvalReport) -> String {
    let mut out = EvalReport::header();
    out.push('\n');
    for row in report.rows() {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Before/after adaptation table, one row per speaker.
pub fn adaptation_table(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::from("speaker\tbefore\tafter\n");
    for (s, b, a) in rows {
        let _ = writeln!(out, "{s}\t{b:.4}\t{a:.4}");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
