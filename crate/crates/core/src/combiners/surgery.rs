//! Direction-only combiners that edit the task gradients themselves.

use super::gradient_set::{CombineResult, GradientSet};
use super::solvers::{simplex_project, SolverOptions};
use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, Matrix, Rng};

/// PCGrad: each task gradient is projected off the normal plane of every
/// other task's (original) gradient it conflicts with, visiting the others
/// in a shuffled order. Returns the projected gradients and the number of
/// projections made.
pub fn pcgrad_project(gs: &GradientSet, rng: &mut Rng) -> (Matrix, usize) {
    let t = gs.n_tasks();
    let sq_norms: Vec<f64> = (0..t).map(|j| dot(gs.grad(j), gs.grad(j))).collect();
    let mut out = Matrix::zeros(t, gs.dim());
    let mut projections = 0usize;
    for i in 0..t {
        let projected = out.row_mut(i);
        projected.copy_from_slice(gs.grad(i));
        let mut order: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        rng.shuffle(&mut order);
        for j in order {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let conflict = dot(projected, gs.grad(j));
            if conflict < 0.0 {
                axpy(-conflict / sq_norms[j], gs.grad(j), projected);
                projections += 1;
            }
        }
    }
    (out, projections)
}

/// Sum of the PCGrad-projected gradients.
pub fn pcgrad_combine(gs: &GradientSet, rng: &mut Rng) -> Result<CombineResult> {
    let (projected, projections) = pcgrad_project(gs, rng);
    let direction = projected.weighted_row_sum(&vec![1.0; gs.n_tasks()]);
    Ok(CombineResult::from_direction(direction)?.with_aux("projections", projections as f64))
}

/// CAGrad: maximises the worst-case local improvement within a ball of
/// radius `c * |g0|` around the mean gradient `g0`.
pub fn cagrad_combine(gs: &GradientSet, c: f64, opts: SolverOptions) -> Result<CombineResult> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::config(format!("CAGrad radius c = {c} must be >= 0")));
    }
    let t = gs.n_tasks();
    let mean: Vec<f64> = gs.grads().weighted_row_sum(&vec![1.0 / t as f64; t]);
    let mean_norm = dot(&mean, &mean).sqrt();
    let radius = c * mean_norm;
    if radius == 0.0 {
        return Ok(CombineResult::from_direction(mean)?
            .with_aux("objective", 0.0)
            .with_aux("ball_distance", 0.0)
            .with_aux("iterations", 0.0));
    }

    let k = gs.grads().gram();
    let b = k.mul_vec(&vec![1.0 / t as f64; t]);
    let (w, objective, iters, converged) = cagrad_solve(&k, &b, radius, opts);

    let gw = gs.grads().weighted_row_sum(&w);
    let gw_norm = dot(&gw, &gw).sqrt();
    let mut direction = mean;
    if gw_norm >= 1e-12 {
        axpy(radius / gw_norm, &gw, &mut direction);
    }
    let ball_distance = if gw_norm >= 1e-12 { radius } else { 0.0 };
    let mut out = CombineResult::from_direction(direction)?
        .with_aux("objective", objective)
        .with_aux("ball_distance", ball_distance)
        .with_aux("iterations", iters as f64);
    if !converged {
        out.warning = Some(format!("CAGrad inner solver stopped after {iters} iterations"));
    }
    Ok(out)
}

/// Projected gradient with backtracking on
/// `F(w) = w^T b + radius * sqrt(w^T K w)` over the simplex.
fn cagrad_solve(k: &Matrix, b: &[f64], radius: f64, opts: SolverOptions) -> (Vec<f64>, f64, usize, bool) {
    let t = k.rows();
    let objective = |w: &[f64]| -> (f64, Vec<f64>) {
        let kw = k.mul_vec(w);
        let norm = dot(w, &kw).max(0.0).sqrt();
        (dot(w, b) + radius * norm, kw)
    };
    let mut w = vec![1.0 / t as f64; t];
    let (mut f, mut kw) = objective(&w);
    let trace: f64 = (0..t).map(|i| k.get(i, i)).sum();
    let mut step = 1.0 / trace.max(1e-300);
    for it in 0..opts.max_iter {
        let norm = dot(&w, &kw).max(0.0).sqrt();
        let grad: Vec<f64> = b
            .iter()
            .zip(&kw)
            .map(|(bi, kwi)| bi + if norm > 1e-15 { radius * kwi / norm } else { 0.0 })
            .collect();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            let trial = simplex_project(&trial);
            let (ft, kwt) = objective(&trial);
            let moved: f64 = trial.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            // sufficient decrease for the projected step
            if ft <= f - moved / (2.0 * step) + 1e-15 * f.abs() {
                let change = moved.sqrt();
                w = trial;
                kw = kwt;
                f = ft;
                accepted = true;
                step *= 1.5;
                if change <= opts.tol {
                    return (w, f, it + 1, true);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease possible at machine precision: stationary
            return (w, f, it + 1, true);
        }
    }
    (w, f, opts.max_iter, false)
}

/// GradDrop: per coordinate, keep only the positive or only the negative
/// task contributions, choosing positive with probability equal to the
/// sign purity `P = (1 + sum g / sum |g|) / 2`.
pub fn graddrop_combine(gs: &GradientSet, rng: &mut Rng) -> Result<CombineResult> {
    let mut direction = vec![0.0; gs.dim()];
    for (k, d) in direction.iter_mut().enumerate() {
        let (mut pos, mut neg, mut abs) = (0.0, 0.0, 0.0);
        for t in 0..gs.n_tasks() {
            let v = gs.grad(t)[k];
            if v > 0.0 {
                pos += v;
            } else {
                neg += v;
            }
            abs += v.abs();
        }
        let purity = if abs > 0.0 { 0.5 * (1.0 + (pos + neg) / abs) } else { 0.5 };
        let u = rng.uniform();
        *d = if u < purity { pos } else { neg };
    }
    CombineResult::from_direction(direction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>]) -> GradientSet {
        GradientSet::from_rows(rows).unwrap()
    }

    #[test]
    fn pcgrad_without_conflict_is_sum() {
        let gs = set(&[vec![1.0, 2.0], vec![0.5, 0.0], vec![3.0, 1.0]]);
        let r = pcgrad_combine(&gs, &mut Rng::new(0)).unwrap();
        assert_eq!(r.direction.as_slice(), &[4.5, 3.0]);
        assert!(r.weights.is_none());
    }

    #[test]
    fn pcgrad_hand_example() {
        let gs = set(&[vec![1.0, 0.0], vec![-1.0, 1.0]]);
        let r = pcgrad_combine(&gs, &mut Rng::new(0)).unwrap();
        assert!((r.direction[0] - 0.5).abs() < 1e-15);
        assert!((r.direction[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn pcgrad_skips_zero_gradient() {
        let gs = set(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let r = pcgrad_combine(&gs, &mut Rng::new(0)).unwrap();
        assert_eq!(r.direction.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn cagrad_zero_radius_is_mean() {
        let gs = set(&[vec![1.0, 3.0], vec![-2.0, 1.0]]);
        let r = cagrad_combine(&gs, 0.0, SolverOptions::default()).unwrap();
        assert_eq!(r.direction.as_slice(), &[-0.5, 2.0]);
    }

    #[test]
    fn cagrad_symmetric_example() {
        let gs = set(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = cagrad_combine(&gs, 0.4, SolverOptions::default()).unwrap();
        assert!((r.direction[0] - 0.7).abs() < 1e-9, "{:?}", r.direction);
        assert!((r.direction[1] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn cagrad_rejects_negative_radius() {
        let gs = set(&[vec![1.0]]);
        assert!(cagrad_combine(&gs, -0.1, SolverOptions::default()).is_err());
    }

    #[test]
    fn graddrop_sign_consistent_is_sum() {
        let gs = set(&[vec![1.0, -2.0, 0.0], vec![3.0, -1.0, 0.0]]);
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let r = graddrop_combine(&gs, &mut rng).unwrap();
            assert_eq!(r.direction.as_slice(), &[4.0, -3.0, 0.0]);
        }
    }
}
