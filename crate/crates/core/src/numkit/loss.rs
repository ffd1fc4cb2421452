//! Per-task losses and their gradients with respect to head outputs.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Positive-class weight for the edge-style binary loss; negatives get `1 - w`.
pub const DEFAULT_POSITIVE_WEIGHT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    SoftmaxCrossEntropy,
    WeightedBinaryCrossEntropy { positive_weight: f64 },
}

impl LossKind {
    pub fn weighted_bce() -> Self {
        LossKind::WeightedBinaryCrossEntropy {
            positive_weight: DEFAULT_POSITIVE_WEIGHT,
        }
    }
}

/// Supervision for one task over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskTargets {
    /// `n x k` real targets.
    Real(Matrix),
    /// One class index per sample (binary tasks use 0/1).
    Labels(Vec<usize>),
}

impl TaskTargets {
    pub fn len(&self) -> usize {
        match self {
            TaskTargets::Real(m) => m.rows(),
            TaskTargets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> TaskTargets {
        match self {
            TaskTargets::Real(m) => TaskTargets::Real(m.select_rows(idx)),
            TaskTargets::Labels(l) => TaskTargets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

fn log_sigmoid(z: f64) -> f64 {
    // log(1 / (1 + e^-z)) without overflow on either tail
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over the batch and its gradient with respect to `preds`.
pub fn loss_and_grad(kind: LossKind, preds: &Matrix, targets: &TaskTargets) -> Result<(f64, Matrix)> {
    let n = preds.rows();
    if targets.len() != n {
        return Err(Error::config(format!(
            "target count {} does not match prediction count {n}",
            targets.len()
        )));
    }
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, preds.cols())));
    }
    let mut grad = Matrix::zeros(n, preds.cols());
    let loss = match (kind, targets) {
        (LossKind::SquaredError, TaskTargets::Real(y)) => {
            if y.cols() != preds.cols() {
                return Err(Error::config("regression target width mismatch"));
            }
            let denom = (n * preds.cols()) as f64;
            let mut total = 0.0;
            for (g, (p, t)) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(preds.as_slice().iter().zip(y.as_slice()))
            {
                let r = p - t;
                total += r * r;
                *g = 2.0 * r / denom;
            }
            total / denom
        }
        (LossKind::SoftmaxCrossEntropy, TaskTargets::Labels(labels)) => {
            let k = preds.cols();
            let mut total = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::config(format!("label {label} out of range for {k} classes")));
                }
                let row = preds.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[label];
                let g = grad.row_mut(i);
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (row[j] - lse).exp() / n as f64;
                }
                g[label] -= 1.0 / n as f64;
            }
            total / n as f64
        }
        (LossKind::WeightedBinaryCrossEntropy { positive_weight }, TaskTargets::Labels(labels)) => {
            if preds.cols() != 1 {
                return Err(Error::config("binary task needs a single logit"));
            }
            let negative_weight = 1.0 - positive_weight;
            let mut total = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let z = preds.get(i, 0);
                let (l, g) = match label {
                    1 => (-positive_weight * log_sigmoid(z), positive_weight * (sigmoid(z) - 1.0)),
                    0 => (-negative_weight * log_sigmoid(-z), negative_weight * sigmoid(z)),
                    other => return Err(Error::config(format!("binary label {other} is not 0/1"))),
                };
                total += l;
                grad.set(i, 0, g / n as f64);
            }
            total / n as f64
        }
        (kind, _) => {
            return Err(Error::config(format!("targets do not match loss kind {kind:?}")));
        }
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(kind: LossKind, preds: &Matrix, t: &TaskTargets) -> Vec<f64> {
        let h = 1e-6;
        (0..preds.as_slice().len())
            .map(|k| {
                let mut p = preds.clone();
                p.as_mut_slice()[k] += h;
                let up = loss_and_grad(kind, &p, t).unwrap().0;
                p.as_mut_slice()[k] -= 2.0 * h;
                let down = loss_and_grad(kind, &p, t).unwrap().0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn squared_error_zero_at_targets() {
        let y = Matrix::from_rows(&[vec![1.0], vec![-2.0]]);
        let (l, g) = loss_and_grad(LossKind::SquaredError, &y, &TaskTargets::Real(y.clone())).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_gradients_match_differences() {
        let preds = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![-0.7, 0.1, 0.4]]);
        let cases = [
            (LossKind::SoftmaxCrossEntropy, TaskTargets::Labels(vec![2, 0])),
            (
                LossKind::SquaredError,
                TaskTargets::Real(Matrix::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.0, 0.0, -1.0]])),
            ),
        ];
        for (kind, t) in cases {
            let (_, g) = loss_and_grad(kind, &preds, &t).unwrap();
            for (a, b) in g.as_slice().iter().zip(finite_diff(kind, &preds, &t)) {
                assert!((a - b).abs() < 1e-8, "{kind:?}: {a} vs {b}");
            }
        }
        let logits = Matrix::from_rows(&[vec![0.8], vec![-3.0], vec![40.0]]);
        let t = TaskTargets::Labels(vec![1, 0, 0]);
        let (_, g) = loss_and_grad(LossKind::weighted_bce(), &logits, &t).unwrap();
        for (a, b) in g.as_slice().iter().zip(finite_diff(LossKind::weighted_bce(), &logits, &t)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn mismatched_targets_are_config_errors() {
        let preds = Matrix::zeros(2, 1);
        let err = loss_and_grad(LossKind::SoftmaxCrossEntropy, &preds, &TaskTargets::Labels(vec![0])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = loss_and_grad(LossKind::weighted_bce(), &preds, &TaskTargets::Labels(vec![0, 2])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
