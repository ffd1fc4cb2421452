//! Gradient-dynamics instruments: per-task agreement with the aggregate
//! direction, pairwise conflict, per-task norms, and a feature-space probe
//! comparing multi-task and single-task encoders.

mod probe;
mod trace;

pub use probe::{feature_alignment_probe, ProbeEntry, ProbeReport, RIDGE};
pub use trace::{read_pairwise_csv, read_trace_csv, PairwiseRow, Trace, TraceRecord, TraceRow, PAIRWISE_HEADER, TRACE_HEADER};

use crate::combiners::{GradientSet, Scope};
use crate::numkit::{dot, norm, Matrix};

/// Cosines plus a flag per task whose gradient (or the aggregate) was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Cosines {
    pub values: Vec<f64>,
    pub zero: Vec<bool>,
}

/// `c_i = g_i . d / (|g_i| |d|)`; zero vectors give 0 and raise the flag.
pub fn cos_to_aggregate(gs: &GradientSet, d: &[f64]) -> Cosines {
    let dn = norm(d);
    let mut values = Vec::with_capacity(gs.n_tasks());
    let mut zero = Vec::with_capacity(gs.n_tasks());
    for t in 0..gs.n_tasks() {
        let g = gs.grad(t);
        let gn = norm(g);
        if gn == 0.0 || dn == 0.0 {
            values.push(0.0);
            zero.push(true);
        } else {
            values.push((dot(g, d) / (gn * dn)).clamp(-1.0, 1.0));
            zero.push(false);
        }
    }
    Cosines { values, zero }
}

pub fn pairwise_dot(gs: &GradientSet) -> Matrix {
    gs.grads().gram()
}

/// Pairwise cosine matrix. Rows of zero gradients are all zero (diagonal
/// included) and listed in the second return value.
pub fn pairwise_cosine(gs: &GradientSet) -> (Matrix, Vec<usize>) {
    let k = gs.grads().gram();
    let t = k.rows();
    let norms: Vec<f64> = (0..t).map(|i| k.get(i, i).sqrt()).collect();
    let mut c = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let v = if i == j { 1.0 } else { (k.get(i, j) / (norms[i] * norms[j])).clamp(-1.0, 1.0) };
                c.set(i, j, v);
            }
        }
    }
    let zero = (0..t).filter(|&i| norms[i] == 0.0).collect();
    (c, zero)
}

pub fn grad_norms(gs: &GradientSet, scope: Scope) -> Vec<f64> {
    (0..gs.n_tasks()).map(|t| norm(gs.scoped_grad(t, scope))).collect()
}

/// Largest minus smallest entry.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        max - min
    }
}
