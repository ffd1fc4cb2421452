//! Two-objective quadratic landscape on the plane.

use serde::{Deserialize, Serialize};

use crate::combiners::{min_norm_simplex, Combiner, GradientSet, SolverOptions};
use crate::error::Result;
use crate::numkit::Matrix;

/// `f1 = (x1-1)^2 + (x2-1)^2/4`, `f2 = beta * ((x1+1)^2 + (x2+1)^2/4)`.
/// Pareto-stationary points lie on the segment between `(-1,-1)` and `(1,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyLandscape {
    pub beta: f64,
}

impl Default for ToyLandscape {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

pub fn gen_toy_landscape() -> ToyLandscape {
    ToyLandscape::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentPath {
    pub points: Vec<[f64; 2]>,
    pub values: Vec<[f64; 2]>,
    /// Norm of the min-norm convex combination at the final point.
    pub final_min_norm: f64,
}

impl ToyLandscape {
    pub fn with_beta(beta: f64) -> Self {
        Self { beta }
    }

    pub fn values(&self, x: [f64; 2]) -> [f64; 2] {
        let f1 = (x[0] - 1.0).powi(2) + 0.25 * (x[1] - 1.0).powi(2);
        let f2 = self.beta * ((x[0] + 1.0).powi(2) + 0.25 * (x[1] + 1.0).powi(2));
        [f1, f2]
    }

    pub fn gradients(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        [
            [2.0 * (x[0] - 1.0), 0.5 * (x[1] - 1.0)],
            [2.0 * self.beta * (x[0] + 1.0), 0.5 * self.beta * (x[1] + 1.0)],
        ]
    }

    pub fn gradient_set(&self, x: [f64; 2], step: usize) -> Result<GradientSet> {
        let [g1, g2] = self.gradients(x);
        let losses = self.values(x).to_vec();
        GradientSet::new(Matrix::from_rows(&[g1.to_vec(), g2.to_vec()]), losses, step)
    }

    /// Norm of the min-norm point of the gradients' convex hull; zero
    /// exactly at Pareto-stationary points.
    pub fn min_norm(&self, x: [f64; 2]) -> f64 {
        let [g1, g2] = self.gradients(x);
        let k = Matrix::from_rows(&[g1.to_vec(), g2.to_vec()]).gram();
        let (w, _, _) = min_norm_simplex(&k, SolverOptions::default());
        let d = [w[0] * g1[0] + w[1] * g2[0], w[0] * g1[1] + w[1] * g2[1]];
        d[0].hypot(d[1])
    }

    /// Plain descent `x <- x - lr * d` with `d` from `combiner`, stopping
    /// early once the min-norm value drops below `tol`.
    pub fn descend(&self, start: [f64; 2], combiner: &mut Combiner, lr: f64, steps: usize, tol: f64) -> Result<DescentPath> {
        let mut x = start;
        let mut points = vec![x];
        let mut values = vec![self.values(x)];
        for step in 0..steps {
            if self.min_norm(x) < tol {
                break;
            }
            let gs = self.gradient_set(x, step)?;
            let res = combiner.combine(&gs)?;
            let before = self.values(x);
            x = [x[0] - lr * res.direction[0], x[1] - lr * res.direction[1]];
            let after = self.values(x);
            if combiner.needs_post_step_losses() {
                combiner.after_step(&before, &after)?;
            }
            points.push(x);
            values.push(after);
        }
        Ok(DescentPath {
            points,
            values,
            final_min_norm: self.min_norm(x),
        })
    }
}
