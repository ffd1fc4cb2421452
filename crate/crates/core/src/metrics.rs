//! Per-task metrics and the multi-task gain `Delta_m`: the mean signed
//! relative improvement over a single-task baseline, in percent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, TaskTargets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    Accuracy,
}

impl MetricKind {
    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricKind::Rmse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub task: String,
    pub metric: MetricKind,
    pub value: f64,
}

/// RMSE over every entry for real targets; accuracy of the arg-max (or of
/// the sign of a single logit) for label targets.
pub fn metric_value(kind: MetricKind, preds: &Matrix, targets: &TaskTargets) -> Result<f64> {
    if preds.rows() != targets.len() {
        return Err(Error::config("prediction and target counts differ"));
    }
    if preds.rows() == 0 {
        return Err(Error::config("metric over an empty split"));
    }
    match (kind, targets) {
        (MetricKind::Rmse, TaskTargets::Real(y)) => {
            if y.cols() != preds.cols() {
                return Err(Error::config("prediction and target widths differ"));
            }
            let sse: f64 = preds
                .as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(p, t)| (p - t).powi(2))
                .sum();
            Ok((sse / preds.as_slice().len() as f64).sqrt())
        }
        (MetricKind::Accuracy, TaskTargets::Labels(labels)) => {
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(i, &label)| predicted_class(preds.row(*i)) == label)
                .count();
            Ok(correct as f64 / labels.len() as f64)
        }
        _ => Err(Error::config(format!("metric {} does not match target type", kind.as_str()))),
    }
}

pub fn predicted_class(logits: &[f64]) -> usize {
    if logits.len() == 1 {
        return usize::from(logits[0] > 0.0);
    }
    logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub lower_is_better: bool,
}

/// Single-task reference values `M_b,i`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineTable {
    pub tasks: Vec<BaselineEntry>,
}

impl BaselineTable {
    pub fn from_metrics(values: &[MetricValue]) -> Self {
        Self {
            tasks: values
                .iter()
                .map(|m| BaselineEntry {
                    task: m.task.clone(),
                    metric: m.metric.as_str().to_string(),
                    value: m.value,
                    lower_is_better: m.metric.lower_is_better(),
                })
                .collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("baseline table: {e}")))
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaM {
    /// `M_i` in percent.
    pub per_task: Vec<f64>,
    /// Mean of `per_task`, in percent.
    pub mean: f64,
}

/// `M_i = (-1)^{l_i} (M_m,i - M_b,i) / M_b,i`, `Delta_m = mean_i M_i`, both in percent.
pub fn delta_m(values: &[f64], baseline: &BaselineTable) -> Result<DeltaM> {
    if values.len() != baseline.len() || values.is_empty() {
        return Err(Error::config(format!(
            "{} metric values for a {}-task baseline",
            values.len(),
            baseline.len()
        )));
    }
    let mut per_task = Vec::with_capacity(values.len());
    for (v, b) in values.iter().zip(&baseline.tasks) {
        if b.value == 0.0 || !b.value.is_finite() {
            return Err(Error::config(format!("baseline for task '{}' is {}", b.task, b.value)));
        }
        let sign = if b.lower_is_better { -1.0 } else { 1.0 };
        per_task.push(100.0 * sign * (v - b.value) / b.value);
    }
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(DeltaM { per_task, mean })
}

/// Two-decimal rounding with ties to even, as printed in result tables.
pub fn round_percent(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}
