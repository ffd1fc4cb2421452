use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{all_finite, FlatVector, Matrix};

/// Which part of the shared parameters a norm or weight is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Full,
    #[default]
    LastShared,
}

/// Per-task gradients with respect to the shared parameters (one row per
/// task), the current task losses, and the training step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Matrix,
    losses: Vec<f64>,
    step: usize,
    last_shared: Range<usize>,
}

impl GradientSet {
    pub fn new(grads: Matrix, losses: Vec<f64>, step: usize) -> Result<Self> {
        if grads.rows() == 0 {
            return Err(Error::config("gradient set needs at least one task"));
        }
        if losses.len() != grads.rows() {
            return Err(Error::config(format!(
                "{} losses for {} task gradients",
                losses.len(),
                grads.rows()
            )));
        }
        for (t, row) in grads.iter_rows().enumerate() {
            if !all_finite(row) {
                return Err(Error::NonFinite {
                    task: Some(t),
                    what: "task gradient".into(),
                });
            }
        }
        if let Some(t) = losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                task: Some(t),
                what: format!("loss = {}", losses[t]),
            });
        }
        let cols = grads.cols();
        Ok(Self {
            grads,
            losses,
            step,
            last_shared: 0..cols,
        })
    }

    /// Gradients only; every loss set to 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let lens: Vec<usize> = rows.iter().map(Vec::len).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::config("task gradients have different lengths"));
        }
        Self::new(Matrix::from_rows(rows), vec![1.0; rows.len()], 0)
    }

    pub fn with_losses(mut self, losses: Vec<f64>) -> Result<Self> {
        let step = self.step;
        let span = self.last_shared.clone();
        self = Self::new(self.grads, losses, step)?;
        self.last_shared = span;
        Ok(self)
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    /// Marks which columns belong to the last shared layer. Panics when out of range.
    pub fn with_last_shared(mut self, span: Range<usize>) -> Self {
        assert!(span.end <= self.grads.cols() && span.start <= span.end);
        self.last_shared = span;
        self
    }

    pub fn n_tasks(&self) -> usize {
        self.grads.rows()
    }

    pub fn dim(&self) -> usize {
        self.grads.cols()
    }

    pub fn grads(&self) -> &Matrix {
        &self.grads
    }

    pub fn grad(&self, t: usize) -> &[f64] {
        self.grads.row(t)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn last_shared(&self) -> Range<usize> {
        self.last_shared.clone()
    }

    pub fn span(&self, scope: Scope) -> Range<usize> {
        match scope {
            Scope::Full => 0..self.dim(),
            Scope::LastShared => self.last_shared(),
        }
    }

    /// Task gradient `t` restricted to `scope`.
    pub fn scoped_grad(&self, t: usize, scope: Scope) -> &[f64] {
        &self.grad(t)[self.span(scope)]
    }

    /// Copy of the set with every gradient restricted to `scope`.
    pub fn scoped(&self, scope: Scope) -> GradientSet {
        let span = self.span(scope);
        let rows: Vec<Vec<f64>> = (0..self.n_tasks()).map(|t| self.grad(t)[span.clone()].to_vec()).collect();
        let grads = Matrix::from_rows(&rows);
        let cols = grads.cols();
        GradientSet {
            grads,
            losses: self.losses.clone(),
            step: self.step,
            last_shared: 0..cols,
        }
    }
}

/// Output of a combiner: task weights (for weight-based methods) and the
/// update direction for the shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineResult {
    pub weights: Option<Vec<f64>>,
    pub direction: FlatVector,
    /// Method-specific scalars: solver residuals, iteration counts, objectives.
    pub aux: BTreeMap<String, f64>,
    /// Set when an iterative solver stopped on its iteration cap.
    pub warning: Option<String>,
}

impl CombineResult {
    /// `d = sum_i weights[i] * g_i`.
    pub fn from_weights(gs: &GradientSet, weights: Vec<f64>) -> Result<Self> {
        let direction = FlatVector::new(gs.grads().weighted_row_sum(&weights))?;
        Ok(Self {
            weights: Some(weights),
            direction,
            aux: BTreeMap::new(),
            warning: None,
        })
    }

    pub fn from_direction(direction: Vec<f64>) -> Result<Self> {
        Ok(Self {
            weights: None,
            direction: FlatVector::new(direction)?,
            aux: BTreeMap::new(),
            warning: None,
        })
    }

    pub fn with_aux(mut self, key: &str, value: f64) -> Self {
        self.aux.insert(key.to_string(), value);
        self
    }
}
