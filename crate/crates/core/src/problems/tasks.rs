use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::numkit::{LossKind, TaskLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
    Binary,
}

/// One task of a synthetic suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    /// Regression width, class count, or 1 for binary.
    #[serde(default = "one")]
    pub output_dim: usize,
    /// Positive multiplier on the task loss.
    #[serde(default = "unit")]
    pub scale: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl TaskSpec {
    pub fn regression(name: &str, scale: f64) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::Regression,
            output_dim: 1,
            scale,
        }
    }

    pub fn classification(name: &str, classes: usize, scale: f64) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::Classification,
            output_dim: classes,
            scale,
        }
    }

    pub fn binary(name: &str, scale: f64) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::Binary,
            output_dim: 1,
            scale,
        }
    }

    pub fn metric(&self) -> MetricKind {
        match self.kind {
            TaskKind::Regression => MetricKind::Rmse,
            TaskKind::Classification | TaskKind::Binary => MetricKind::Accuracy,
        }
    }

    pub fn lower_is_better(&self) -> bool {
        self.metric().lower_is_better()
    }

    pub fn loss(&self) -> TaskLoss {
        let kind = match self.kind {
            TaskKind::Regression => LossKind::SquaredError,
            TaskKind::Classification => LossKind::SoftmaxCrossEntropy,
            TaskKind::Binary => LossKind::weighted_bce(),
        };
        TaskLoss {
            kind,
            scale: self.scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::config(format!("task '{}': scale must be positive", self.name)));
        }
        match self.kind {
            TaskKind::Regression if self.output_dim == 0 => {
                Err(Error::config(format!("task '{}': output_dim must be positive", self.name)))
            }
            TaskKind::Classification if self.output_dim < 2 => {
                Err(Error::config(format!("task '{}': classification needs >= 2 classes", self.name)))
            }
            TaskKind::Binary if self.output_dim != 1 => {
                Err(Error::config(format!("task '{}': binary tasks have output_dim 1", self.name)))
            }
            _ => Ok(()),
        }
    }
}
