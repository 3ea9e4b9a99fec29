//! Optimization, scheduling, checkpointing, and the training loop.

mod checkpoint;
mod log;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use log::{parse_log, EpochRecord, LogRecord, StepRecord};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use schedule::{cosine_lr, Scheduler, SchedulerConfig};
pub use trainer::{
    batch_gradients, dataset_mode, evaluate, evaluate_samples, prepare_split, train, train_step, TrainOutcome,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelConfig};

/// Every knob of a training run. Loaded from a single JSON file; unknown
/// keys are rejected and missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub scheduler: SchedulerConfig,
    pub label_smoothing: f64,
    /// Weight of the three alignment losses.
    pub lambda: f64,
    /// Weight of the pairwise adjacency loss.
    pub lambda_p: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Per-channel multiplicative colour noise on training pieces.
    pub color_jitter: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            lr: 1e-3,
            weight_decay: 1e-4,
            scheduler: SchedulerConfig::default(),
            label_smoothing: 0.08,
            lambda: 0.1,
            lambda_p: 0.05,
            seed: 0,
            grad_clip: Some(5.0),
            color_jitter: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay * self.lr < 1.0) {
            return bad(format!("weight_decay {} out of range", self.weight_decay));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 0.5)", self.label_smoothing));
        }
        if !(self.lambda >= 0.0 && self.lambda_p >= 0.0) {
            return bad("lambda and lambda_p must be non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        match self.scheduler {
            SchedulerConfig::Cosine { t_max, eta_min } => {
                if t_max == 0 || !(eta_min >= 0.0 && eta_min < self.lr) {
                    return bad(format!("cosine schedule needs t_max > 0 and 0 <= eta_min < lr (eta_min = {eta_min})"));
                }
            }
            SchedulerConfig::Plateau { factor, .. } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return bad(format!("plateau factor {factor} outside (0, 1)"));
                }
            }
        }
        self.model.encoder.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            lambda_p: self.lambda_p,
            label_smoothing: self.label_smoothing,
        }
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} does not exist", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}
