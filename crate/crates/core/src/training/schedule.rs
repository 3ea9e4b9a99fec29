use serde::{Deserialize, Serialize};

/// Learning-rate schedule, stepped once per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchedulerConfig {
    /// `η_min + (η_0 − η_min)·(1 + cos(π·t/T_max))/2`.
    Cosine { t_max: usize, eta_min: f64 },
    /// Multiplies the rate by `factor` after more than `patience` epochs
    /// without improvement of the validation piece accuracy.
    Plateau { factor: f64, patience: usize },
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig::Cosine {
            t_max: 50,
            eta_min: 1e-6,
        }
    }
}

/// Closed-form cosine annealing rate at epoch `t`.
pub fn cosine_lr(base: f64, eta_min: f64, t_max: usize, t: usize) -> f64 {
    let phase = std::f64::consts::PI * t as f64 / t_max as f64;
    eta_min + (base - eta_min) * (1.0 + phase.cos()) / 2.0
}

/// Relative improvement threshold of the plateau schedule.
const PLATEAU_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub base_lr: f64,
    pub lr: f64,
    pub epoch: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, base_lr: f64) -> Self {
        Self {
            config,
            base_lr,
            lr: base_lr,
            epoch: 0,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Rate for the current epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Ends an epoch with its validation metric (higher is better).
    pub fn step(&mut self, metric: f64) {
        self.epoch += 1;
        match self.config {
            SchedulerConfig::Cosine { t_max, eta_min } => {
                self.lr = cosine_lr(self.base_lr, eta_min, t_max, self.epoch);
            }
            SchedulerConfig::Plateau { factor, patience } => {
                let improved = self.best.is_none_or(|b| metric > b * (1.0 + PLATEAU_THRESHOLD));
                if improved {
                    self.best = Some(metric);
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs > patience {
                        self.lr *= factor;
                        self.bad_epochs = 0;
                    }
                }
            }
        }
    }
}
