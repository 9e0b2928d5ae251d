use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::EpochStats;

/// Column order of every metrics CSV.
pub const CSV_HEADER: &str = "epoch,split,loss,accuracy,wall_seconds";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_seconds: f64,
}

/// Per-epoch train and test records of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub parameter_count: usize,
    pub wall_seconds: f64,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

impl RunMetrics {
    /// Two records per epoch. Wall time is zeroed unless `record_wall_time`.
    pub fn from_history(history: &[EpochStats], record_wall_time: bool) -> Self {
        let wall = |s: &EpochStats| if record_wall_time { s.wall_seconds } else { 0.0 };
        let records = history
            .iter()
            .flat_map(|s| {
                [
                    MetricRecord {
                        epoch: s.epoch,
                        split: "train".into(),
                        loss: s.train_loss,
                        accuracy: s.train_accuracy,
                        wall_seconds: wall(s),
                    },
                    MetricRecord {
                        epoch: s.epoch,
                        split: "test".into(),
                        loss: s.test_loss,
                        accuracy: s.test_accuracy,
                        wall_seconds: wall(s),
                    },
                ]
            })
            .collect();
        Self { records }
    }

    pub fn validate(&self) -> Result<()> {
        let mut last: Option<(usize, &str)> = None;
        for r in &self.records {
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::Validation(format!("accuracy {} outside [0, 1]", r.accuracy)));
            }
            if let Some((e, split)) = last {
                if r.epoch < e || (r.epoch == e && split == r.split) {
                    return Err(Error::Validation(format!("epoch {} out of order", r.epoch)));
                }
            }
            last = Some((r.epoch, &r.split));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
        }
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn summary(&self, seed: u64, parameter_count: usize, wall_seconds: f64) -> Option<RunSummary> {
        let n = self.records.len();
        if n < 2 {
            return None;
        }
        let (train, test) = (&self.records[n - 2], &self.records[n - 1]);
        Some(RunSummary {
            seed,
            epochs: test.epoch,
            final_train_loss: train.loss,
            final_train_accuracy: train.accuracy,
            final_test_loss: test.loss,
            final_test_accuracy: test.accuracy,
            parameter_count,
            wall_seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(epoch: usize) -> EpochStats {
        EpochStats {
            epoch,
            train_loss: 0.5,
            train_accuracy: 0.75,
            test_loss: 0.625,
            test_accuracy: 0.5,
            wall_seconds: 1.25,
        }
    }

    #[test]
    fn csv_layout() {
        let m = RunMetrics::from_history(&[stats(1), stats(2)], false);
        m.validate().unwrap();
        let csv = m.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1,train,0.5,0.75,0.0");
        assert_eq!(lines[4], "2,test,0.625,0.5,0.0");
        let timed = RunMetrics::from_history(&[stats(1)], true).to_csv().unwrap();
        assert!(timed.lines().nth(1).unwrap().ends_with(",1.25"));
        assert_eq!(RunMetrics::default().to_csv().unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn summary_takes_last_epoch() {
        let m = RunMetrics::from_history(&[stats(1), stats(2)], false);
        let s = m.summary(4, 10, 2.0).unwrap();
        assert_eq!((s.epochs, s.seed, s.final_test_loss), (2, 4, 0.625));
        assert!(RunMetrics::default().summary(0, 0, 0.0).is_none());
    }

    #[test]
    fn validate_rejects_bad_records() {
        let mut m = RunMetrics::from_history(&[stats(2), stats(1)], false);
        assert!(m.validate().is_err());
        m = RunMetrics::from_history(&[stats(1)], false);
        m.records[0].accuracy = 1.5;
        assert!(m.validate().is_err());
    }
}
