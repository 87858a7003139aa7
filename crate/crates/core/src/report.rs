//! Measured constants with their sample tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Result of a feasibility fit or a measurement run.
///
/// Constants are named (`"C"`, `"c"`, `"beta"`, `"N"`, `"alpha"`, ...). With the
/// reported constants the fitted inequality holds on every sampled point, so
/// `max_violation <= 0` unless the caller documents otherwise.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FitReport {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub max_violation: f64,
    pub flags: Vec<String>,
    pub notices: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FitReport {
    pub fn new(name: &str) -> Self {
        FitReport { name: name.to_string(), ..Default::default() }
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    /// Named constant; NaN when absent.
    pub fn get(&self, key: &str) -> f64 {
        self.constants.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn flag(&mut self, flag: &str) {
        if !self.has_flag(flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// Sample table as CSV with a header row.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One-row summary: constants then the maximal violation.
    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.constants.keys().cloned().collect();
        header.push("max_violation".into());
        w.write_record(&header)?;
        let mut row: Vec<String> = self.constants.values().map(|v| format!("{v:.17e}")).collect();
        row.push(format!("{:.17e}", self.max_violation));
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}
