use std::fs::File;
use std::path::Path;
use std::time::Instant;

use crate::error::Result;
use crate::train::EpochMetrics;

pub const METRICS_HEADER: [&str; 8] = [
    "member",
    "epoch",
    "lr",
    "train_loss",
    "head_train_acc",
    "joint_train_acc",
    "test_error",
    "joint_test_error",
];

/// Writes `metrics.csv` (deterministic for a fixed seed) and `timings.csv`
/// (wall-clock seconds per epoch, which naturally varies between runs).
pub struct MetricsWriter {
    metrics: csv::Writer<File>,
    timings: csv::Writer<File>,
    start: Instant,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
        metrics.write_record(METRICS_HEADER)?;
        let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
        timings.write_record(["member", "epoch", "wall_seconds"])?;
        Ok(MetricsWriter {
            metrics,
            timings,
            start: Instant::now(),
        })
    }

    pub fn write(&mut self, row: &EpochMetrics) -> Result<()> {
        let heads: Vec<String> = row.head_train_acc.iter().map(f64::to_string).collect();
        // Members are 1-based in every artifact.
        self.metrics.write_record([
            (row.member + 1).to_string(),
            row.epoch.to_string(),
            row.lr.to_string(),
            row.train_loss.to_string(),
            heads.join(" "),
            row.joint_train_acc.to_string(),
            row.test_error.to_string(),
            row.joint_test_error.to_string(),
        ])?;
        self.metrics.flush()?;
        self.timings.write_record([
            (row.member + 1).to_string(),
            row.epoch.to_string(),
            format!("{:.3}", self.start.elapsed().as_secs_f64()),
        ])?;
        self.timings.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        w.write(&EpochMetrics {
            epoch: 1,
            member: 0,
            lr: 0.1,
            train_loss: 1.25,
            head_train_acc: vec![0.5, 0.25],
            joint_train_acc: 0.5,
            test_error: 0.4,
            joint_test_error: 0.375,
        })
        .unwrap();
        drop(w);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(
            text,
            "member,epoch,lr,train_loss,head_train_acc,joint_train_acc,test_error,joint_test_error\n\
             1,1,0.1,1.25,0.5 0.25,0.5,0.4,0.375\n"
        );
    }
}
