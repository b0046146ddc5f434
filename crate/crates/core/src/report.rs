//! Text reports.
//!
//! A report is a flat header followed by `[config]` and `[metrics]`
//! key-value sections and any number of `[table NAME]` CSV blocks:
//!
//! ```text
//! command: eval
//! version: corpusseg 0.1.0
//! seed: 7
//! wall_time_s: 0.0123
//! [config]
//! preds = a.hard,b.hard
//! [metrics]
//! mean_iou = 2.50000000e-1
//! [table per_class]
//! class,iou,uoi
//! 0,0.00000000e0,
//! ```
//!
//! Real numbers are written with 9 significant digits so reports diff
//! cleanly across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::losses::LossReport;

/// 9 significant digits in scientific notation, e.g. `-1.00000000e-3`.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.8e}")
}

pub const VERSION: &str = concat!("corpusseg ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Outcome of one CLI command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub seed: Option<u64>,
    /// Effective configuration, defaults included.
    pub config: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, String>,
    pub tables: Vec<Table>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(command: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            seed,
            config: BTreeMap::new(),
            metrics: BTreeMap::new(),
            tables: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), fmt_sig(value));
        self
    }

    pub fn metric_text(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metrics.insert(key.to_string(), value.to_string());
        self
    }

    /// Adds a loss report under `prefix` as flat keys.
    pub fn loss(&mut self, prefix: &str, loss: &LossReport) -> &mut Self {
        for (key, value) in loss_record(loss) {
            self.metrics.insert(format!("{prefix}.{key}"), value);
        }
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        let _ = writeln!(out, "version: {VERSION}");
        match self.seed {
            Some(seed) => {
                let _ = writeln!(out, "seed: {seed}");
            }
            None => out.push_str("seed: none\n"),
        }
        let _ = writeln!(out, "wall_time_s: {:.4}", self.wall_time_s);
        out.push_str("[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("[metrics]\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k} = {v}");
        }
        for table in &self.tables {
            let _ = writeln!(out, "[table {}]", table.name);
            out.push_str(&table.to_csv());
        }
        out
    }

    /// Every metric as CSV `key,value` lines.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Flat key-value form of a [`LossReport`]: `name`, `value`, `mean` (when
/// defined), `class.K` per included class and `excluded`.
pub fn loss_record(loss: &LossReport) -> Vec<(String, String)> {
    let mut record = vec![
        ("name".to_string(), loss.name.clone()),
        ("value".to_string(), fmt_sig(loss.value)),
    ];
    if let Some(mean) = loss.mean() {
        record.push(("mean".to_string(), fmt_sig(mean)));
    }
    if let Some(per_class) = &loss.per_class {
        for (k, v) in per_class {
            record.push((format!("class.{k}"), fmt_sig(*v)));
        }
    }
    let excluded: Vec<String> = loss.excluded.iter().map(|k| k.to_string()).collect();
    record.push(("excluded".to_string(), excluded.join(" ")));
    record
}
