//! JSON Lines training log: one record per optimizer step and one per epoch.

use serde::{Deserialize, Serialize};

use crate::assignment::LossBreakdown;
use crate::error::{Error, Result};
use crate::puzzle::EvalReport;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    pub assign: f64,
    pub token: f64,
    pub region: f64,
    pub global: f64,
    pub pairwise: f64,
    pub lr: f64,
}

impl StepRecord {
    pub fn new(step: u64, epoch: usize, loss: &LossBreakdown, lr: f64) -> Self {
        Self {
            step,
            epoch,
            total: loss.total,
            assign: loss.assign,
            token: loss.token,
            region: loss.region,
            global: loss.global,
            pairwise: loss.pairwise,
            lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total training loss over the epoch's steps.
    pub train_loss: f64,
    pub val: EvalReport,
    /// Whether this epoch produced the retained checkpoint.
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Parses a whole log; errors carry the 1-based line number.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("log line {}", i + 1), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::OffByHistogram;

    #[test]
    fn records_round_trip_and_are_distinguished() {
        let step = LogRecord::Step(StepRecord {
            step: 3,
            epoch: 0,
            total: 2.0,
            assign: 1.9,
            token: 0.3,
            region: -0.2,
            global: -0.1,
            pairwise: 0.7,
            lr: 1e-3,
        });
        let epoch = LogRecord::Epoch(EpochRecord {
            epoch: 0,
            lr: 1e-3,
            train_loss: 2.0,
            val: EvalReport {
                perfect: 0.0,
                piece: 0.25,
                horizontal: 0.1,
                vertical: 0.2,
                off_by_k: OffByHistogram::default(),
                n_samples: 4,
            },
            best: true,
        });
        let text = format!("{}\n{}\n", step.to_json(), epoch.to_json());
        assert!(step.to_json().starts_with(r#"{"step":3,"epoch":0,"total":2.0"#));
        assert_eq!(parse_log(&text).unwrap(), vec![step, epoch]);
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = parse_log("\n{\"step\": 1}\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
