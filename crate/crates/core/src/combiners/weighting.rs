//! Loss-weighting combiners: each returns task weights and `d = sum_i w_i g_i`.

use serde::{Deserialize, Serialize};

use super::gradient_set::{CombineResult, GradientSet, Scope};
use crate::error::{Error, Result};
use crate::numkit::{norm, softmax, Rng};

pub const DEFAULT_EPS_NORM: f64 = 1e-10;

/// Vanilla MTL: every weight is 1.
pub fn combine_uniform(gs: &GradientSet) -> Result<CombineResult> {
    CombineResult::from_weights(gs, vec![1.0; gs.n_tasks()])
}

/// Fixed, non-negative task weights (the grid-search scalarisation).
pub fn combine_fixed(gs: &GradientSet, weights: &[f64]) -> Result<CombineResult> {
    if weights.len() != gs.n_tasks() {
        return Err(Error::config(format!(
            "{} fixed weights for {} tasks",
            weights.len(),
            gs.n_tasks()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::config(format!("fixed weight {i} = {} must be finite and >= 0", weights[i])));
    }
    CombineResult::from_weights(gs, weights.to_vec())
}

/// AvgNorm: `w_i = S / |g_i|` with `S = |sum_i g_i|`, both measured on
/// `scope`. The returned direction combines the full gradients.
pub fn avgnorm_weights(gs: &GradientSet, scope: Scope, eps_norm: f64) -> Result<CombineResult> {
    let span = gs.span(scope);
    let mut total = vec![0.0; span.len()];
    let mut norms = Vec::with_capacity(gs.n_tasks());
    for t in 0..gs.n_tasks() {
        let g = gs.scoped_grad(t, scope);
        let n = norm(g);
        if !(n > eps_norm) {
            return Err(Error::DegenerateGradient {
                task: t,
                norm: n,
                eps: eps_norm,
            });
        }
        norms.push(n);
        for (acc, v) in total.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let strength = norm(&total);
    let weights = norms.iter().map(|n| strength / n).collect();
    Ok(CombineResult::from_weights(gs, weights)?.with_aux("strength", strength))
}

/// Homoscedastic uncertainty weighting: `s_i` are log-variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UwState {
    pub log_var: Vec<f64>,
    pub lr: f64,
}

impl UwState {
    pub fn new(n_tasks: usize, lr: f64) -> Self {
        Self {
            log_var: vec![0.0; n_tasks],
            lr,
        }
    }
}

/// Weights `0.5 * exp(-s_i)`, then one descent step on
/// `sum_i 0.5 * exp(-s_i) * L_i + 0.5 * s_i` with respect to `s`.
pub fn uw_step(gs: &GradientSet, state: &mut UwState) -> Result<CombineResult> {
    check_len(state.log_var.len(), gs)?;
    if let Some(t) = gs.losses().iter().position(|l| *l < 0.0) {
        return Err(Error::NonFinite {
            task: Some(t),
            what: "uncertainty weighting needs non-negative losses".into(),
        });
    }
    let weights: Vec<f64> = state.log_var.iter().map(|s| 0.5 * (-s).exp()).collect();
    for (s, (&w, &l)) in state.log_var.iter_mut().zip(weights.iter().zip(gs.losses())) {
        let grad = -w * l + 0.5;
        *s -= state.lr * grad;
    }
    CombineResult::from_weights(gs, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormState {
    pub weights: Vec<f64>,
    pub initial_losses: Option<Vec<f64>>,
    pub alpha: f64,
    pub lr: f64,
    pub scope: Scope,
}

impl GradNormState {
    pub fn new(n_tasks: usize, alpha: f64, lr: f64, scope: Scope) -> Self {
        Self {
            weights: vec![1.0; n_tasks],
            initial_losses: None,
            alpha,
            lr,
            scope,
        }
    }
}

/// GradNorm: pulls each weighted gradient norm toward
/// `mean(G) * r_i^alpha` with one sign step, then renormalises to sum `T`.
pub fn gradnorm_step(gs: &GradientSet, state: &mut GradNormState) -> Result<CombineResult> {
    let t = gs.n_tasks();
    check_len(state.weights.len(), gs)?;
    let initial = match &state.initial_losses {
        Some(l) => l.clone(),
        None => {
            if let Some(i) = gs.losses().iter().position(|l| !(*l > 0.0)) {
                return Err(Error::config(format!(
                    "GradNorm needs positive initial losses; task {i} has {}",
                    gs.losses()[i]
                )));
            }
            state.initial_losses = Some(gs.losses().to_vec());
            gs.losses().to_vec()
        }
    };
    let raw_norms: Vec<f64> = (0..t).map(|i| norm(gs.scoped_grad(i, state.scope))).collect();
    let weighted: Vec<f64> = raw_norms.iter().zip(&state.weights).map(|(n, w)| n * w).collect();
    let mean_norm = weighted.iter().sum::<f64>() / t as f64;
    let ratios: Vec<f64> = gs.losses().iter().zip(&initial).map(|(l, l0)| l / l0).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / t as f64;
    for i in 0..t {
        let relative = if mean_ratio > 0.0 { ratios[i] / mean_ratio } else { 1.0 };
        let target = mean_norm * relative.powf(state.alpha);
        // d|G_i - target| / dw_i = sign(G_i - target) * |g_i|; sign step only
        let direction = (weighted[i] - target).signum() * raw_norms[i].signum();
        if weighted[i] != target {
            state.weights[i] = (state.weights[i] - state.lr * direction).max(1e-8);
        }
    }
    let total: f64 = state.weights.iter().sum();
    for w in &mut state.weights {
        *w *= t as f64 / total;
    }
    CombineResult::from_weights(gs, state.weights.clone())
}

/// Dynamic weight average over the last two recorded loss vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwaState {
    pub temperature: f64,
    /// `[L(t-2), L(t-1)]`, oldest first.
    pub history: Vec<Vec<f64>>,
}

impl DwaState {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            history: Vec::new(),
        }
    }
}

const DWA_LOSS_FLOOR: f64 = 1e-12;

/// Weights from the previous two loss vectors, then records the current one.
pub fn dwa_weights(gs: &GradientSet, state: &mut DwaState) -> Result<CombineResult> {
    let t = gs.n_tasks();
    let weights = if state.history.len() < 2 {
        vec![1.0; t]
    } else {
        let (older, newer) = (&state.history[0], &state.history[1]);
        let ratios: Vec<f64> = newer.iter().zip(older).map(|(a, b)| a / b.max(DWA_LOSS_FLOOR)).collect();
        dwa_from_ratios(&ratios, state.temperature)
    };
    state.history.push(gs.losses().to_vec());
    if state.history.len() > 2 {
        state.history.remove(0);
    }
    CombineResult::from_weights(gs, weights)
}

/// `T * softmax(r / temperature)`.
pub fn dwa_from_ratios(ratios: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = ratios.iter().map(|r| r / temperature).collect();
    let t = ratios.len() as f64;
    softmax(&scaled).into_iter().map(|p| t * p).collect()
}

/// Random loss weighting: `softmax(z)` with `z ~ N(0, I)` every call.
pub fn rlw_weights(gs: &GradientSet, rng: &mut Rng) -> Result<CombineResult> {
    let z: Vec<f64> = (0..gs.n_tasks()).map(|_| rng.normal()).collect();
    CombineResult::from_weights(gs, softmax(&z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamoState {
    pub logits: Vec<f64>,
    pub lr: f64,
    pub decay: f64,
}

impl FamoState {
    pub fn new(n_tasks: usize, lr: f64, decay: f64) -> Self {
        Self {
            logits: vec![0.0; n_tasks],
            lr,
            decay,
        }
    }
}

/// FAMO weights: `z = softmax(xi)`, `w_i = c * z_i / L_i`, `c = 1 / sum_j z_j / L_j`.
pub fn famo_weights(gs: &GradientSet, state: &FamoState) -> Result<CombineResult> {
    check_len(state.logits.len(), gs)?;
    check_positive_losses(gs.losses())?;
    let z = softmax(&state.logits);
    let inv: Vec<f64> = z.iter().zip(gs.losses()).map(|(zi, l)| zi / l).collect();
    let c = 1.0 / inv.iter().sum::<f64>();
    let weights = inv.iter().map(|v| c * v).collect();
    Ok(CombineResult::from_weights(gs, weights)?.with_aux("c", c))
}

/// Logit update after the parameter step, from the losses before and after it.
pub fn famo_update(state: &mut FamoState, before: &[f64], after: &[f64]) -> Result<()> {
    if before.len() != state.logits.len() || after.len() != state.logits.len() {
        return Err(Error::config("FAMO loss vectors do not match task count"));
    }
    check_positive_losses(before)?;
    check_positive_losses(after)?;
    let z = softmax(&state.logits);
    let drop: Vec<f64> = before.iter().zip(after).map(|(b, a)| b.ln() - a.ln()).collect();
    let mean_drop: f64 = z.iter().zip(&drop).map(|(zi, di)| zi * di).sum();
    for i in 0..z.len() {
        // softmax Jacobian is diag(z) - z z^T
        let grad = z[i] * (drop[i] - mean_drop);
        state.logits[i] -= state.lr * (grad + state.decay * state.logits[i]);
    }
    Ok(())
}

fn check_positive_losses(losses: &[f64]) -> Result<()> {
    match losses.iter().position(|l| !(*l > 0.0)) {
        Some(t) => Err(Error::NonFinite {
            task: Some(t),
            what: format!("log-loss weighting needs positive loss, got {}", losses[t]),
        }),
        None => Ok(()),
    }
}

fn check_len(state_len: usize, gs: &GradientSet) -> Result<()> {
    if state_len != gs.n_tasks() {
        return Err(Error::config(format!(
            "combiner state sized for {state_len} tasks, gradient set has {}",
            gs.n_tasks()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>]) -> GradientSet {
        GradientSet::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_examples() {
        let r = combine_uniform(&set(&[vec![3.0, 4.0]])).unwrap();
        assert_eq!(r.weights.unwrap(), vec![1.0]);
        assert_eq!(r.direction.as_slice(), &[3.0, 4.0]);
        let r = combine_uniform(&set(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(r.direction.as_slice(), &[1.0, 1.0]);
        let r = combine_uniform(&set(&[vec![1.5, -2.0], vec![-1.5, 2.0]])).unwrap();
        assert_eq!(r.direction.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn fixed_examples() {
        let gs = set(&[vec![1.0, 1.0], vec![7.0, -3.0]]);
        let r = combine_fixed(&gs, &[2.0, 0.0]).unwrap();
        assert_eq!(r.direction.as_slice(), &[2.0, 2.0]);
        assert_eq!(combine_fixed(&gs, &[1.0, 1.0]).unwrap(), combine_uniform(&gs).unwrap());
        assert!(matches!(combine_fixed(&gs, &[1.0, -0.1]), Err(Error::Config(_))));
        assert!(matches!(combine_fixed(&gs, &[1.0]), Err(Error::Config(_))));
        let four = set(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        let r = combine_fixed(&four, &[1.0, 1.0, 2.0, 50.0]).unwrap();
        assert_eq!(r.direction.as_slice(), &[54.0]);
    }

    #[test]
    fn avgnorm_examples() {
        let r = avgnorm_weights(&set(&[vec![0.3, -4.0]]), Scope::Full, DEFAULT_EPS_NORM).unwrap();
        assert!((r.weights.unwrap()[0] - 1.0).abs() < 1e-15);

        let r = avgnorm_weights(&set(&[vec![2.0, 0.0], vec![0.0, 1.0]]), Scope::Full, DEFAULT_EPS_NORM).unwrap();
        let w = r.weights.unwrap();
        let s5 = 5f64.sqrt();
        assert!((w[0] - s5 / 2.0).abs() < 1e-15 && (w[1] - s5).abs() < 1e-15);
        assert!((w[0] * 2.0 - s5).abs() < 1e-15 && (w[1] * 1.0 - s5).abs() < 1e-15);

        let r = avgnorm_weights(&set(&[vec![1.0, 0.0], vec![0.0, 1.0]]), Scope::Full, DEFAULT_EPS_NORM).unwrap();
        for w in r.weights.unwrap() {
            assert!((w - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn avgnorm_degenerate_names_task() {
        let err = avgnorm_weights(&set(&[vec![1.0, 0.0], vec![0.0, 0.0]]), Scope::Full, DEFAULT_EPS_NORM).unwrap_err();
        assert!(matches!(err, Error::DegenerateGradient { task: 1, .. }));
    }

    #[test]
    fn avgnorm_scope_uses_span_for_norms_but_full_direction() {
        let gs = set(&[vec![5.0, 2.0, 0.0], vec![-1.0, 0.0, 1.0]]).with_last_shared(1..3);
        let r = avgnorm_weights(&gs, Scope::LastShared, DEFAULT_EPS_NORM).unwrap();
        let w = r.weights.clone().unwrap();
        // scoped: (2,0) and (0,1); S = sqrt(5)
        assert!((w[0] - 5f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(r.direction.as_slice()[0], w[0] * 5.0 + w[1] * -1.0);
    }

    #[test]
    fn uw_starts_at_half() {
        let gs = set(&[vec![1.0], vec![2.0]]).with_losses(vec![0.5, 3.0]).unwrap();
        let mut st = UwState::new(2, 0.1);
        assert_eq!(combine_uw_weights(&gs, &mut st), vec![0.5, 0.5]);
    }

    fn combine_uw_weights(gs: &GradientSet, st: &mut UwState) -> Vec<f64> {
        uw_step(gs, st).unwrap().weights.unwrap()
    }

    #[test]
    fn uw_converges_to_log_loss() {
        let gs = set(&[vec![1.0], vec![2.0]]).with_losses(vec![0.2, 5.0]).unwrap();
        let mut st = UwState::new(2, 0.2);
        for _ in 0..2000 {
            uw_step(&gs, &mut st).unwrap();
        }
        assert!((st.log_var[0] - 0.2f64.ln()).abs() < 1e-9);
        assert!((st.log_var[1] - 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gradnorm_symmetric_tasks_keep_unit_weights() {
        let gs = set(&[vec![1.0, 2.0], vec![1.0, 2.0]]).with_losses(vec![0.7, 0.7]).unwrap();
        let mut st = GradNormState::new(2, 1.5, 0.025, Scope::Full);
        for _ in 0..10 {
            assert_eq!(gradnorm_step(&gs, &mut st).unwrap().weights.unwrap(), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn gradnorm_zero_alpha_shrinks_largest_gradient() {
        // G = (10, 1), targets 5.5: task 0 steps down, task 1 up
        let gs = set(&[vec![10.0, 0.0], vec![1.0, 0.0]]).with_losses(vec![1.0, 1.0]).unwrap();
        let mut st = GradNormState::new(2, 0.0, 0.025, Scope::Full);
        let w = gradnorm_step(&gs, &mut st).unwrap().weights.unwrap();
        assert!((w[0] - 0.975).abs() < 1e-12 && (w[1] - 1.025).abs() < 1e-12);
    }

    #[test]
    fn gradnorm_rejects_non_positive_initial_loss() {
        let gs = set(&[vec![1.0], vec![1.0]]).with_losses(vec![0.0, 1.0]).unwrap();
        let mut st = GradNormState::new(2, 1.5, 0.025, Scope::Full);
        assert!(matches!(gradnorm_step(&gs, &mut st), Err(Error::Config(_))));
    }

    #[test]
    fn dwa_examples() {
        for w in dwa_from_ratios(&[0.8, 0.8, 0.8], 2.0) {
            assert!((w - 1.0).abs() < 1e-15);
        }
        // 2 * softmax(0.5, 0.25) = 2 / (1 + e^-0.25) = 1.124353...
        let w = dwa_from_ratios(&[1.0, 0.5], 2.0);
        assert!((w[0] - 1.124_353_001_771_596).abs() < 1e-12, "{w:?}");
        assert!((w[1] - 0.875_646_998_228_404).abs() < 1e-12);
    }

    #[test]
    fn dwa_first_two_steps_are_uniform() {
        let mut st = DwaState::new(2.0);
        let gs = set(&[vec![1.0], vec![1.0]]);
        for losses in [vec![2.0, 1.0], vec![1.0, 1.0]] {
            let g = gs.clone().with_losses(losses).unwrap();
            assert_eq!(dwa_weights(&g, &mut st).unwrap().weights.unwrap(), vec![1.0, 1.0]);
        }
        let g = gs.with_losses(vec![1.0, 1.0]).unwrap();
        let w = dwa_weights(&g, &mut st).unwrap().weights.unwrap();
        // ratios (0.5, 1.0): the task whose loss fell faster gets less weight
        assert!(w[0] < w[1]);
    }

    #[test]
    fn famo_equal_losses_give_equal_weights() {
        let gs = set(&[vec![1.0], vec![3.0], vec![-2.0]]).with_losses(vec![0.4, 0.4, 0.4]).unwrap();
        let st = FamoState::new(3, 0.025, 0.001);
        let w = famo_weights(&gs, &st).unwrap().weights.unwrap();
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn famo_rejects_zero_loss() {
        let gs = set(&[vec![1.0]]).with_losses(vec![0.0]).unwrap();
        assert!(famo_weights(&gs, &FamoState::new(1, 0.025, 0.001)).is_err());
    }
}
