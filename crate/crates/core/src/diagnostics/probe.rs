//! Feature-distance probe between a multi-task encoder and per-task
//! single-task encoders, through a least-squares linear adaptor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, MtlModel};

/// Ridge added to the normal equations when they are not positive definite.
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub task: usize,
    /// Mean squared distance per feature after the fitted adaptor.
    pub distance: f64,
    pub ridge_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub tasks: Vec<ProbeEntry>,
}

/// For each task, fits `A, b` minimising `|A f_mtl(x) + b - f_stl(x)|^2`
/// over `inputs` and reports the residual.
pub fn feature_alignment_probe(mtl: &MtlModel, stl: &[MtlModel], inputs: &Matrix) -> Result<ProbeReport> {
    if inputs.rows() == 0 {
        return Err(Error::config("probe needs at least one input"));
    }
    let source = mtl.encode(inputs)?;
    let tasks = stl
        .iter()
        .enumerate()
        .map(|(t, model)| {
            if model.d_in() != mtl.d_in() {
                return Err(Error::config(format!("single-task model {t} has a different input width")));
            }
            let target = model.encode(inputs)?;
            let (distance, ridge_fallback) = fit_adaptor(&source, &target);
            Ok(ProbeEntry {
                task: t,
                distance,
                ridge_fallback,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport { tasks })
}

/// Mean squared residual of the affine least-squares map `source -> target`.
pub(crate) fn fit_adaptor(source: &Matrix, target: &Matrix) -> (f64, bool) {
    let n = source.rows();
    let p = source.cols() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j + 1 == p { 1.0 } else { source.get(i, j) });
    let y = DMatrix::from_fn(n, target.cols(), |i, j| target.get(i, j));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let (coef, ridge) = match xtx.clone().cholesky() {
        Some(ch) if well_conditioned(&ch.l()) => (ch.solve(&xty), false),
        _ => {
            let reg = xtx + DMatrix::identity(p, p) * (RIDGE * n as f64);
            let coef = match reg.clone().cholesky() {
                Some(ch) => ch.solve(&xty),
                None => reg.pseudo_inverse(1e-12).expect("pseudo inverse of symmetric matrix") * &xty,
            };
            (coef, true)
        }
    };
    let residual = &x * coef - &y;
    let mse = residual.iter().map(|v| v * v).sum::<f64>() / (n * target.cols().max(1)) as f64;
    (mse, ridge)
}

fn well_conditioned(l: &DMatrix<f64>) -> bool {
    let diag = DVector::from_iterator(l.nrows(), (0..l.nrows()).map(|i| l[(i, i)]));
    let max = diag.max();
    let min = diag.min();
    min > 0.0 && min / max > 1e-7
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{ModelConfig, Rng};

    fn inputs(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect())
    }

    #[test]
    fn identical_encoder_has_zero_distance() {
        let mut rng = Rng::new(1);
        let model = MtlModel::new(6, &ModelConfig::default(), &[1, 2], &mut rng).unwrap();
        let stl = model.with_heads(&[0]);
        let report = feature_alignment_probe(&model, &[stl], &inputs(200, 6, 2)).unwrap();
        assert!(report.tasks[0].distance < 1e-20, "{report:?}");
    }

    #[test]
    fn linear_image_is_recovered() {
        let src = inputs(300, 4, 3);
        let map = inputs(3, 4, 4);
        let mut tgt = src.matmul_t(&map);
        for i in 0..tgt.rows() {
            tgt.row_mut(i)[0] += 0.7;
        }
        let (d, ridge) = fit_adaptor(&src, &tgt);
        assert!(d < 1e-8 && !ridge);
    }

    #[test]
    fn unrelated_features_are_farther_than_linear_ones() {
        let src = inputs(300, 4, 5);
        let map = inputs(3, 4, 6);
        let related = src.matmul_t(&map);
        let unrelated = inputs(300, 3, 7);
        assert!(fit_adaptor(&src, &unrelated).0 >= fit_adaptor(&src, &related).0);
    }

    #[test]
    fn rank_deficient_source_uses_ridge() {
        let mut src = inputs(50, 3, 8);
        for i in 0..50 {
            let v = src.get(i, 0);
            src.set(i, 1, 2.0 * v);
        }
        let tgt = inputs(50, 2, 9);
        let (d, ridge) = fit_adaptor(&src, &tgt);
        assert!(ridge && d.is_finite());
    }
}
