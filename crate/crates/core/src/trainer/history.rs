//! Append-only record of per-step loss reports and its CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::losses::LossReport;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    reports: Vec<LossReport>,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `report`; its step must exceed the last recorded one.
    pub fn push(&mut self, report: LossReport) -> Result<()> {
        if let Some(last) = self.reports.last() {
            if report.step <= last.step {
                return Err(Error::Invalid(format!("history step {} after {}", report.step, last.step)));
            }
        }
        self.reports.push(report);
        Ok(())
    }

    pub fn reports(&self) -> &[LossReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn last(&self) -> Option<&LossReport> {
        self.reports.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = LossReport::COLUMNS.join(",");
        out.push('\n');
        for r in &self.reports {
            write!(out, "{}", r.step).unwrap();
            for v in r.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty history file".into()))?;
        if header.trim() != LossReport::COLUMNS.join(",") {
            return Err(Error::Format(format!("unexpected history header {header:?}")));
        }
        let mut history = LossHistory::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("history row {}: {line:?}", i + 1));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != LossReport::COLUMNS.len() {
                return Err(bad());
            }
            let step = cells[0].trim().parse().map_err(|_| bad())?;
            let v: Vec<f64> = cells[1..].iter().map(|c| c.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
            history.push(LossReport {
                step,
                sigma: v[0],
                nll: v[1],
                kl_total: v[2],
                elbo: v[3],
                lsgan_g: v[4],
                lsgan_d: v[5],
                fm: v[6],
                gan_g: v[7],
                gan_d: v[8],
                total_generator: v[9],
                total_discriminator: v[10],
            })?;
        }
        Ok(history)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(Error::io(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(Error::io(path))?)
    }
}
