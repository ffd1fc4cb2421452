//! WebAssembly bindings for the browser demo in `www/`.

use gradbalance::combiners::{Combiner, CombinerConfig, CombinerId, GradientSet};
use gradbalance::numkit::Matrix;
use gradbalance::problems::{gen_scaled_suite, train_mtl, DescentPath, Selector, ToyLandscape, TrainConfig};
use gradbalance::Result;
use wasm_bindgen::prelude::*;

fn js_err(e: gradbalance::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn combiner(method: &str, n_tasks: usize, seed: u64) -> Result<Combiner> {
    let id: CombinerId = method.parse()?;
    let cfg = match id {
        CombinerId::Fixed => CombinerConfig::fixed(vec![1.0; n_tasks]),
        _ => CombinerConfig::new(id),
    };
    Combiner::new(cfg, n_tasks, seed)
}

/// `[dx, dy, w1, w2]`; the weights are NaN for direction-only methods.
pub fn combine_pair(method: &str, g1: [f64; 2], g2: [f64; 2], seed: u64) -> Result<[f64; 4]> {
    let gs = GradientSet::new(Matrix::from_rows(&[g1.to_vec(), g2.to_vec()]), vec![1.0, 1.0], 0)?
        .with_last_shared(0..2);
    let res = combiner(method, 2, seed)?.combine(&gs)?;
    let (w1, w2) = res.weights.map_or((f64::NAN, f64::NAN), |w| (w[0], w[1]));
    Ok([res.direction[0], res.direction[1], w1, w2])
}

pub fn landscape_path(method: &str, beta: f64, start: [f64; 2], lr: f64, steps: usize) -> Result<DescentPath> {
    let mut comb = combiner(method, 2, 0)?;
    ToyLandscape::with_beta(beta).descend(start, &mut comb, lr, steps, 1e-6)
}

/// Per-task traces of a short training run on a two-regression-task suite
/// whose second loss is multiplied by `scale`.
#[wasm_bindgen]
pub struct Curves {
    steps: Vec<f64>,
    norms: Vec<Vec<f64>>,
    cosines: Vec<Vec<f64>>,
    losses: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl Curves {
    pub fn steps(&self) -> Vec<f64> {
        self.steps.clone()
    }

    pub fn n_tasks(&self) -> usize {
        self.norms.len()
    }

    /// Last-shared-layer norm of task `t`'s weighted gradient.
    pub fn grad_norms(&self, t: usize) -> Vec<f64> {
        self.norms.get(t).cloned().unwrap_or_default()
    }

    pub fn cos_to_agg(&self, t: usize) -> Vec<f64> {
        self.cosines.get(t).cloned().unwrap_or_default()
    }

    pub fn losses(&self, t: usize) -> Vec<f64> {
        self.losses.get(t).cloned().unwrap_or_default()
    }
}

pub fn training_curves(method: &str, scale: f64, steps: usize, seed: u64) -> Result<Curves> {
    let mut ds = gen_scaled_suite(seed, 2, 8, &[1.0, scale])?;
    ds.train = ds.train.select(&(0..512).collect::<Vec<_>>());
    let cfg = TrainConfig {
        steps,
        batch_size: 32,
        select_best: false,
        trace_stride: (steps / 100).max(1),
        model: gradbalance::numkit::ModelConfig {
            hidden: vec![16, 16],
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let id: CombinerId = method.parse()?;
    let comb = match id {
        CombinerId::Fixed => CombinerConfig::fixed(vec![1.0, 1.0]),
        _ => CombinerConfig::new(id),
    };
    let out = train_mtl(&cfg, &ds, &comb, seed, Selector::ValidationLoss)?;
    let trace = out.trace.expect("trace enabled");
    let per_task = |f: &dyn Fn(&gradbalance::diagnostics::TraceRecord, usize) -> f64| {
        (0..2).map(|t| trace.records.iter().map(|r| f(r, t)).collect()).collect()
    };
    Ok(Curves {
        steps: trace.records.iter().map(|r| r.step as f64).collect(),
        norms: per_task(&|r, t| r.grad_norms[t]),
        cosines: per_task(&|r, t| r.cos_to_agg[t]),
        losses: per_task(&|r, t| r.losses[t]),
    })
}

#[wasm_bindgen]
pub fn combiner_ids() -> Vec<JsValue> {
    CombinerId::ALL.iter().map(|id| JsValue::from_str(id.as_str())).collect()
}

#[wasm_bindgen]
pub fn combine(method: &str, g1x: f64, g1y: f64, g2x: f64, g2y: f64, seed: u32) -> std::result::Result<Vec<f64>, JsValue> {
    combine_pair(method, [g1x, g1y], [g2x, g2y], seed as u64)
        .map(|r| r.to_vec())
        .map_err(js_err)
}

/// Flattened `[x0, y0, x1, y1, ...]` descent path.
#[wasm_bindgen]
pub fn descend(method: &str, beta: f64, x: f64, y: f64, lr: f64, steps: usize) -> std::result::Result<Vec<f64>, JsValue> {
    landscape_path(method, beta, [x, y], lr, steps)
        .map(|p| p.points.iter().flatten().copied().collect())
        .map_err(js_err)
}

#[wasm_bindgen]
pub fn train(method: &str, scale: f64, steps: usize, seed: u32) -> std::result::Result<Curves, JsValue> {
    training_curves(method, scale, steps, seed as u64).map_err(js_err)
}
