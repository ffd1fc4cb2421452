//! Simplex and min-norm machinery shared by MGDA, CAGrad and the
//! bargaining solvers.

use super::gradient_set::{CombineResult, GradientSet};
use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix};

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `gamma in [0, 1]` minimising `|gamma * g1 + (1 - gamma) * g2|`.
pub fn min_norm_gamma(g1: &[f64], g2: &[f64]) -> f64 {
    min_norm_gamma_gram(dot(g1, g1), dot(g1, g2), dot(g2, g2))
}

/// Same as [`min_norm_gamma`] from inner products `<g1,g1>`, `<g1,g2>`, `<g2,g2>`.
pub fn min_norm_gamma_gram(g11: f64, g12: f64, g22: f64) -> f64 {
    let denom = g11 - 2.0 * g12 + g22;
    if denom <= 0.0 {
        return 0.5;
    }
    ((g22 - g12) / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Weights for the min-norm point of the convex hull of the task
/// gradients (MGDA).
pub fn mgda_weights(gs: &GradientSet, opts: SolverOptions) -> Result<CombineResult> {
    let k = gs.grads().gram();
    let (w, iters, gap) = min_norm_simplex(&k, opts);
    let converged = gap <= gap_tolerance(&k, opts.tol);
    let mut out = CombineResult::from_weights(gs, w)?
        .with_aux("iterations", iters as f64)
        .with_aux("duality_gap", gap);
    if !converged {
        out.warning = Some(format!("min-norm solver stopped after {iters} iterations (gap {gap:e})"));
    }
    Ok(out)
}

// the duality gap is in units of |g|^2
fn gap_tolerance(k: &Matrix, tol: f64) -> f64 {
    let scale = (0..k.rows()).map(|i| k.get(i, i)).fold(1.0, f64::max);
    tol * scale
}

/// `min_{w in simplex} w^T K w`. Wolfe's active-set min-norm-point method,
/// falling back to Frank-Wolfe if an affine subproblem turns singular.
/// Returns `(w, iterations, duality gap)`.
pub fn min_norm_simplex(k: &Matrix, opts: SolverOptions) -> (Vec<f64>, usize, f64) {
    let t = k.rows();
    if t == 1 {
        return (vec![1.0], 0, 0.0);
    }
    match wolfe_min_norm(k, opts) {
        Some(done) => done,
        None => frank_wolfe(k, opts),
    }
}

fn duality_gap(k: &Matrix, w: &[f64]) -> (f64, usize) {
    let kw = k.mul_vec(w);
    let (best, &kw_best) = kw.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("at least one task");
    ((dot(w, &kw) - kw_best).max(0.0), best)
}

/// Affine min-norm point of the gradients in `support`: coefficients
/// summing to one.
fn affine_min_norm(k: &Matrix, support: &[usize]) -> Option<Vec<f64>> {
    let s = support.len();
    let a = nalgebra::DMatrix::from_fn(s + 1, s + 1, |i, j| match (i < s, j < s) {
        (true, true) => k.get(support[i], support[j]),
        (false, false) => 0.0,
        _ => 1.0,
    });
    let mut rhs = nalgebra::DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = a.lu().solve(&rhs)?;
    let alpha: Vec<f64> = sol.iter().take(s).copied().collect();
    alpha.iter().all(|v| v.is_finite()).then_some(alpha)
}

fn wolfe_min_norm(k: &Matrix, opts: SolverOptions) -> Option<(Vec<f64>, usize, f64)> {
    let t = k.rows();
    let tol = gap_tolerance(k, opts.tol);
    let start = (0..t).min_by(|&a, &b| k.get(a, a).total_cmp(&k.get(b, b)))?;
    let mut support = vec![start];
    let mut lambda = vec![1.0];
    let weights = |support: &[usize], lambda: &[f64]| {
        let mut w = vec![0.0; t];
        for (&i, &l) in support.iter().zip(lambda) {
            w[i] = l;
        }
        w
    };
    let mut iters = 0;
    loop {
        let w = weights(&support, &lambda);
        let (gap, best) = duality_gap(k, &w);
        if gap <= tol || iters >= opts.max_iter {
            return Some((w, iters, gap));
        }
        if support.contains(&best) {
            // no further progress at working precision
            return Some((w, iters, gap));
        }
        support.push(best);
        lambda.push(0.0);
        // minor cycles: move towards the affine minimiser until it lies
        // inside the current simplex
        loop {
            iters += 1;
            let alpha = affine_min_norm(k, &support)?;
            if alpha.iter().all(|&a| a > 0.0) {
                lambda = alpha;
                break;
            }
            let theta = lambda
                .iter()
                .zip(&alpha)
                .filter(|(_, &a)| a <= 0.0)
                .map(|(&l, &a)| l / (l - a))
                .fold(1.0, f64::min);
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l += theta * (a - *l);
            }
            let mut kept = (Vec::new(), Vec::new());
            for (&i, &l) in support.iter().zip(&lambda) {
                if l > 1e-15 {
                    kept.0.push(i);
                    kept.1.push(l);
                }
            }
            if kept.0.is_empty() || iters >= opts.max_iter {
                return None;
            }
            let total: f64 = kept.1.iter().sum();
            support = kept.0;
            lambda = kept.1.iter().map(|l| l / total).collect();
        }
    }
}

/// Frank-Wolfe with exact line search.
fn frank_wolfe(k: &Matrix, opts: SolverOptions) -> (Vec<f64>, usize, f64) {
    let t = k.rows();
    let tol = gap_tolerance(k, opts.tol);
    let mut w = vec![1.0 / t as f64; t];
    let mut kw = k.mul_vec(&w);
    let mut gap = f64::INFINITY;
    for it in 0..opts.max_iter {
        let vv = dot(&w, &kw);
        let (best, &kw_best) = kw
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one task");
        // <v, v> - min_i <v, g_i> bounds the suboptimality of |v|^2
        gap = vv - kw_best;
        if gap <= tol {
            return (w, it, gap.max(0.0));
        }
        let gamma = min_norm_gamma_gram(vv, kw_best, k.get(best, best));
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= gamma;
            if i == best {
                *wi += 1.0 - gamma;
            }
        }
        for (i, kwi) in kw.iter_mut().enumerate() {
            *kwi = gamma * *kwi + (1.0 - gamma) * k.get(i, best);
        }
    }
    (w, opts.max_iter, gap.max(0.0))
}

/// Shared fixed-point solver for NashMTL (`exponent = 1`) and FairGrad
/// (`exponent = alpha`): finds `w > 0` with `w_i * (K w)_i^a = 1`.
pub fn bargain_weights(gs: &GradientSet, exponent: f64, damping: f64, opts: SolverOptions) -> Result<CombineResult> {
    if !(exponent > 0.0) || !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::config("bargaining needs exponent > 0 and damping in (0, 1]"));
    }
    let k = gs.grads().gram();
    let t = k.rows();
    for i in 0..t {
        if !(k.get(i, i) > 0.0) {
            return Err(Error::DegenerateGradient {
                task: i,
                norm: k.get(i, i).max(0.0).sqrt(),
                eps: 0.0,
            });
        }
    }
    const LO: f64 = 1e-8;
    const HI: f64 = 1e8;
    // exact answer when the gradients are mutually orthogonal
    let mut w: Vec<f64> = (0..t).map(|i| k.get(i, i).powf(-1.0 / (1.0 + exponent))).collect();
    let residual_of = |w: &[f64], kw: &[f64]| -> f64 {
        w.iter()
            .zip(kw)
            .map(|(wi, ki)| (wi * ki.powf(exponent) - 1.0).abs())
            .fold(0.0, f64::max)
    };
    let positive_kw = |w: &[f64]| -> Result<Vec<f64>> {
        let kw = k.mul_vec(w);
        match kw.iter().position(|&v| !(v > 0.0)) {
            Some(i) => Err(Error::ConflictDegeneracy { task: i, value: kw[i] }),
            None => Ok(kw),
        }
    };
    let mut kw = positive_kw(&w)?;
    let mut residual = residual_of(&w, &kw);
    let mut best = (residual, w.clone());
    let mut rho = damping;
    let mut iters = 0;
    while iters < opts.max_iter && residual > opts.tol {
        iters += 1;
        let next: Vec<f64> = w
            .iter()
            .zip(&kw)
            .map(|(wi, ki)| ((1.0 - rho) * wi + rho * ki.powf(-exponent)).clamp(LO, HI))
            .collect();
        let next_kw = positive_kw(&next)?;
        let next_residual = residual_of(&next, &next_kw);
        if next_residual > residual {
            // oscillating: shrink the step, keep the last iterate
            rho = (rho * 0.5).max(1e-6);
            if next_residual > 2.0 * residual {
                continue;
            }
        }
        w = next;
        kw = next_kw;
        residual = next_residual;
        if residual < best.0 {
            best = (residual, w.clone());
        }
    }
    let (mut residual, mut w) = best;
    // Newton polish on F_i(w) = w_i (Kw)_i^a - 1 when the fixed point stalls
    let mut newton = 0;
    while newton < opts.max_iter && residual > opts.tol {
        newton += 1;
        let Some(step) = bargain_newton_step(&k, &w, exponent) else { break };
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-8 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - alpha * si).collect();
            if trial.iter().all(|&v| v > 0.0) {
                let tkw = k.mul_vec(&trial);
                if tkw.iter().all(|&v| v > 0.0) {
                    let r = residual_of(&trial, &tkw);
                    if r < residual {
                        w = trial;
                        residual = r;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    iters += newton;
    let mut out = CombineResult::from_weights(gs, w)?
        .with_aux("residual", residual)
        .with_aux("iterations", iters as f64)
        .with_aux("damping", rho);
    if residual > opts.tol {
        out.warning = Some(format!("bargaining solver stopped after {iters} iterations (residual {residual:e})"));
    }
    Ok(out)
}

/// Newton direction for `w_i (Kw)_i^a = 1`; `None` if the Jacobian is singular.
fn bargain_newton_step(k: &Matrix, w: &[f64], a: f64) -> Option<Vec<f64>> {
    let t = w.len();
    let kw = k.mul_vec(w);
    let jac = nalgebra::DMatrix::from_fn(t, t, |i, j| {
        let diag = if i == j { kw[i].powf(a) } else { 0.0 };
        diag + a * w[i] * kw[i].powf(a - 1.0) * k.get(i, j)
    });
    let f = nalgebra::DVector::from_fn(t, |i, _| w[i] * kw[i].powf(a) - 1.0);
    let step = jac.lu().solve(&f)?;
    step.iter().all(|v| v.is_finite()).then(|| step.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn simplex_projection_examples() {
        assert!(close(&simplex_project(&[0.2, 0.3, 0.5]), &[0.2, 0.3, 0.5], 1e-15));
        assert!(close(&simplex_project(&[2.0, 0.0]), &[1.0, 0.0], 1e-15));
        assert!(close(&simplex_project(&[0.6, 0.6]), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn min_norm_gamma_examples() {
        assert_eq!(min_norm_gamma(&[1.0, 0.0], &[0.0, 1.0]), 0.5);
        assert_eq!(min_norm_gamma(&[1.0, 2.0], &[2.0, 4.0]), 1.0);
        assert_eq!(min_norm_gamma(&[1.0, 2.0], &[1.0, 2.0]), 0.5);
    }

    #[test]
    fn mgda_examples() {
        let gs = GradientSet::from_rows(&[vec![3.0, -1.0]]).unwrap();
        let r = mgda_weights(&gs, SolverOptions::default()).unwrap();
        assert_eq!(r.weights.unwrap(), vec![1.0]);
        assert_eq!(r.direction.as_slice(), &[3.0, -1.0]);

        let gs = GradientSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = mgda_weights(&gs, SolverOptions::default()).unwrap();
        assert!(close(r.weights.as_ref().unwrap(), &[0.5, 0.5], 1e-12));
        assert!((r.direction.norm().powi(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn min_norm_reaches_origin_inside_hull() {
        let k = GradientSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![2.0, 3.0]])
            .unwrap()
            .grads()
            .gram();
        let (w, _, gap) = min_norm_simplex(&k, SolverOptions::default());
        assert!(gap <= 1e-12);
        assert!(dot(&w, &k.mul_vec(&w)) < 1e-20);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frank_wolfe_fallback_agrees_on_two_tasks() {
        let k = GradientSet::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap().grads().gram();
        let (a, _, _) = min_norm_simplex(&k, SolverOptions::default());
        let (b, _, _) = frank_wolfe(&k, SolverOptions::default());
        assert!(close(&a, &b, 1e-9));
    }

    #[test]
    fn bargain_orthonormal_gives_ones() {
        let gs = GradientSet::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        for a in [0.5, 1.0, 2.0, 3.0] {
            let r = bargain_weights(&gs, a, 0.5, SolverOptions::default()).unwrap();
            assert!(close(r.weights.as_ref().unwrap(), &[1.0, 1.0, 1.0], 1e-12));
        }
    }

    #[test]
    fn nash_single_task_solves_quadratic() {
        // 4w = 1/w  =>  w = 1/2
        let gs = GradientSet::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let r = bargain_weights(&gs, 1.0, 0.5, SolverOptions::default()).unwrap();
        let w = r.weights.unwrap()[0];
        assert!((w - 0.5).abs() < 1e-9);
        assert!((w * dot(&[2.0, 0.0], r.direction.as_slice()) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bargain_rejects_opposed_gradients() {
        let gs = GradientSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let err = bargain_weights(&gs, 1.0, 0.5, SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ConflictDegeneracy { .. }));
        let gs = GradientSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let err = bargain_weights(&gs, 1.0, 0.5, SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateGradient { task: 1, .. }));
    }
}
