use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "sentences,nll,rewe_raw,rewe_scaled,total,val_ppl,lr";

/// Interval means of the training losses, plus the validation result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub sentences: usize,
    pub nll: f64,
    pub rewe_raw: f64,
    pub rewe_scaled: f64,
    pub total: f64,
    pub val_ppl: Option<f64>,
    pub lr: f64,
    /// Seconds since training started. Not written to the CSV.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; `sentences` must grow strictly.
    pub fn push(&mut self, r: LogRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.sentences > last.sentences, "log records must advance");
        }
        self.records.push(r);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let ppl = r.val_ppl.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.sentences, r.nll, r.rewe_raw, r.rewe_scaled, r.total, ppl, r.lr
            )
            .unwrap();
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Running sums for the current logging interval.
#[derive(Debug, Clone, Default)]
pub(crate) struct Interval {
    batches: usize,
    nll: f64,
    rewe_raw: f64,
}

impl Interval {
    pub fn add(&mut self, nll: f64, rewe_raw: f64) {
        self.batches += 1;
        self.nll += nll;
        self.rewe_raw += rewe_raw;
    }

    pub fn is_empty(&self) -> bool {
        self.batches == 0
    }

    /// Closes the interval. The scaled and total columns are derived from
    /// the interval means so the row identities hold exactly.
    pub fn finish(
        &mut self,
        sentences: usize,
        lambda: f64,
        val_ppl: Option<f64>,
        lr: f64,
        wall_time: f64,
    ) -> LogRecord {
        let n = self.batches.max(1) as f64;
        let nll = self.nll / n;
        let rewe_raw = self.rewe_raw / n;
        let rewe_scaled = lambda * rewe_raw;
        *self = Self::default();
        LogRecord {
            sentences,
            nll,
            rewe_raw,
            rewe_scaled,
            total: nll + rewe_scaled,
            val_ppl,
            lr,
            wall_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = TrainLog::new();
        let mut iv = Interval::default();
        iv.add(2.0, 0.5);
        iv.add(1.0, 0.25);
        log.push(iv.finish(80, 4.0, Some(3.5), 0.001, 0.0));
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "80,1.5,0.375,1.5,3,3.5,0.001");
        assert!(iv.is_empty());
    }

    #[test]
    #[should_panic]
    fn records_must_advance() {
        let mut log = TrainLog::new();
        let mut iv = Interval::default();
        log.push(iv.finish(10, 0.0, None, 0.1, 0.0));
        log.push(iv.finish(10, 0.0, None, 0.1, 0.0));
    }
}
