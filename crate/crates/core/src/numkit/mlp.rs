//! Shared-encoder multi-head MLP with hand-written backpropagation.
//!
//! The encoder parameters live in one flat buffer (layer by layer, each
//! layer's weight matrix row-major followed by its bias), so the flattened
//! shared vector and the stored parameters are the same memory.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossKind, TaskTargets};
use super::matrix::Matrix;
use super::rng::Rng;
use super::vector::{all_finite, axpy, dot};
use crate::combiners::GradientSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `h`.
    #[inline]
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SharedLayer {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    offset: usize,
}

impl SharedLayer {
    fn weight_range(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias_range(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn span(&self) -> Range<usize> {
        self.offset..self.offset + (self.fan_in + 1) * self.fan_out
    }
}

/// Linear task head; parameters are `W (out x in)` row-major then `b (out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    fan_in: usize,
    fan_out: usize,
    params: Vec<f64>,
}

impl Head {
    pub fn weights(&self) -> &[f64] {
        &self.params[..self.fan_in * self.fan_out]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.fan_in * self.fan_out..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn out_width(&self) -> usize {
        self.fan_out
    }
}

/// Inputs, per-task targets and scene-like group ids for a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Vec<TaskTargets>,
    pub group_ids: Vec<u32>,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Vec<TaskTargets>, group_ids: Vec<u32>) -> Result<Self> {
        let n = inputs.rows();
        if let Some(t) = targets.iter().position(|t| t.len() != n) {
            return Err(Error::config(format!(
                "task {t} has {} targets for {n} samples",
                targets[t].len()
            )));
        }
        if group_ids.len() != n {
            return Err(Error::config("group id count does not match sample count"));
        }
        Ok(Self {
            inputs,
            targets,
            group_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.iter().map(|t| t.select(idx)).collect(),
            group_ids: idx.iter().map(|&i| self.group_ids[i]).collect(),
        }
    }

    /// Same samples, keeping only the listed tasks' targets.
    pub fn restrict_tasks(&self, tasks: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            targets: tasks.iter().map(|&t| self.targets[t].clone()).collect(),
            group_ids: self.group_ids.clone(),
        }
    }
}

/// How a task's loss is computed: base loss times a positive multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub kind: LossKind,
    pub scale: f64,
}

/// Predictions plus everything backward needs.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `activations[0]` is the input; `activations[l + 1]` is shared layer `l`'s output.
    activations: Vec<Matrix>,
    pub predictions: Vec<Matrix>,
}

impl Forward {
    /// Output of the last shared layer.
    pub fn features(&self) -> &Matrix {
        self.activations.last().expect("input is always cached")
    }
}

/// Un-aggregated per-task gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub shared: GradientSet,
    /// Gradient of task `t`'s own loss with respect to head `t` only.
    pub heads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlModel {
    d_in: usize,
    layers: Vec<SharedLayer>,
    shared: Vec<f64>,
    heads: Vec<Head>,
}

impl MtlModel {
    /// Random initialisation: weights `N(0, 1/fan_in)`, zero biases.
    pub fn new(d_in: usize, cfg: &ModelConfig, head_widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(d_in, &cfg.hidden, cfg.activation, head_widths)?;
        for layer in model.layers.clone() {
            let std = (1.0 / layer.fan_in as f64).sqrt();
            for w in &mut model.shared[layer.weight_range()] {
                *w = std * rng.normal();
            }
        }
        for head in &mut model.heads {
            let std = (1.0 / head.fan_in as f64).sqrt();
            let nw = head.fan_in * head.fan_out;
            for w in &mut head.params[..nw] {
                *w = std * rng.normal();
            }
        }
        Ok(model)
    }

    /// All-zero parameters.
    pub fn zeros(d_in: usize, hidden: &[usize], activation: Activation, head_widths: &[usize]) -> Result<Self> {
        if d_in == 0 || hidden.contains(&0) || head_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if head_widths.is_empty() {
            return Err(Error::config("model needs at least one task head"));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = d_in;
        let mut offset = 0;
        for &fan_out in hidden {
            layers.push(SharedLayer {
                fan_in,
                fan_out,
                activation,
                offset,
            });
            offset += (fan_in + 1) * fan_out;
            fan_in = fan_out;
        }
        let heads = head_widths
            .iter()
            .map(|&w| Head {
                fan_in,
                fan_out: w,
                params: vec![0.0; (fan_in + 1) * w],
            })
            .collect();
        Ok(Self {
            d_in,
            layers,
            shared: vec![0.0; offset],
            heads,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(self.d_in, |l| l.fan_out)
    }

    pub fn shared_len(&self) -> usize {
        self.shared.len()
    }

    /// Flattened encoder parameters.
    pub fn shared_params(&self) -> &[f64] {
        &self.shared
    }

    pub fn shared_params_mut(&mut self) -> &mut [f64] {
        &mut self.shared
    }

    /// Replaces the encoder parameters from a flat vector.
    pub fn set_shared_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.shared.len() {
            return Err(Error::config(format!(
                "flat parameter length {} != {}",
                flat.len(),
                self.shared.len()
            )));
        }
        self.shared.copy_from_slice(flat);
        Ok(())
    }

    pub fn head(&self, t: usize) -> &Head {
        &self.heads[t]
    }

    pub fn head_mut(&mut self, t: usize) -> &mut Head {
        &mut self.heads[t]
    }

    /// `(weights, bias, activation)` of shared layer `l`.
    pub fn shared_layer(&self, l: usize) -> (&[f64], &[f64], Activation) {
        let layer = &self.layers[l];
        (
            &self.shared[layer.weight_range()],
            &self.shared[layer.bias_range()],
            layer.activation,
        )
    }

    pub fn n_shared_layers(&self) -> usize {
        self.layers.len()
    }

    /// Range of the final shared layer inside the flat encoder vector.
    pub fn last_shared_span(&self) -> Range<usize> {
        self.layers.last().map_or(0..0, SharedLayer::span)
    }

    /// Copy keeping only the listed heads (encoder untouched).
    pub fn with_heads(&self, tasks: &[usize]) -> MtlModel {
        MtlModel {
            d_in: self.d_in,
            layers: self.layers.clone(),
            shared: self.shared.clone(),
            heads: tasks.iter().map(|&t| self.heads[t].clone()).collect(),
        }
    }

    /// Encoder output for `inputs`.
    pub fn encode(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut h = inputs.clone();
        for layer in &self.layers {
            h = self.layer_forward(layer, &h);
        }
        Ok(h)
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Forward> {
        self.check_inputs(inputs)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.clone());
        for layer in &self.layers {
            let next = self.layer_forward(layer, activations.last().unwrap());
            activations.push(next);
        }
        let feats = activations.last().unwrap();
        let predictions = self.heads.iter().map(|h| head_forward(h, feats)).collect::<Vec<_>>();
        for (t, p) in predictions.iter().enumerate() {
            if !all_finite(p.as_slice()) {
                return Err(Error::NonFinite {
                    task: Some(t),
                    what: "prediction".into(),
                });
            }
        }
        Ok(Forward {
            activations,
            predictions,
        })
    }

    /// Per-task losses and per-task gradients, with no aggregation across tasks.
    pub fn backward_per_task(
        &self,
        fwd: &Forward,
        batch: &Batch,
        losses: &[TaskLoss],
        step: usize,
    ) -> Result<Backward> {
        let t_count = self.heads.len();
        if losses.len() != t_count || batch.targets.len() != t_count {
            return Err(Error::config(format!(
                "model has {t_count} heads, got {} loss specs and {} target sets",
                losses.len(),
                batch.targets.len()
            )));
        }
        let p = self.shared.len();
        let mut grads = Matrix::zeros(t_count, p);
        let mut loss_values = Vec::with_capacity(t_count);
        let mut head_grads = Vec::with_capacity(t_count);
        let feats = fwd.features();
        for t in 0..t_count {
            let (raw, mut delta) = loss_and_grad(losses[t].kind, &fwd.predictions[t], &batch.targets[t])?;
            let loss = raw * losses[t].scale;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    task: Some(t),
                    what: format!("loss = {loss}"),
                });
            }
            loss_values.push(loss);
            for v in delta.as_mut_slice() {
                *v *= losses[t].scale;
            }
            let head = &self.heads[t];
            head_grads.push(linear_param_grad(&delta, feats));
            let mut upstream = input_grad(&delta, head.weights(), head.fan_in);
            let row = grads.row_mut(t);
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let out = &fwd.activations[l + 1];
                for (u, h) in upstream.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *u *= layer.activation.derivative_from_output(*h);
                }
                let below = &fwd.activations[l];
                row[layer.span()].copy_from_slice(&linear_param_grad(&upstream, below));
                if l > 0 {
                    upstream = input_grad(&upstream, &self.shared[layer.weight_range()], layer.fan_in);
                }
            }
            if !all_finite(row) {
                return Err(Error::NonFinite {
                    task: Some(t),
                    what: "shared gradient".into(),
                });
            }
        }
        let shared = GradientSet::new(grads, loss_values, step)?.with_last_shared(self.last_shared_span());
        Ok(Backward {
            shared,
            heads: head_grads,
        })
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.d_in {
            return Err(Error::config(format!(
                "input width {} does not match model input width {}",
                inputs.cols(),
                self.d_in
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, layer: &SharedLayer, input: &Matrix) -> Matrix {
        let w = &self.shared[layer.weight_range()];
        let b = &self.shared[layer.bias_range()];
        affine(input, w, b, layer.fan_in, |z| layer.activation.apply(z))
    }
}

/// Restricts a full shared-gradient vector to the last shared layer.
pub fn restrict_to_last_shared<'a>(g: &'a [f64], model: &MtlModel) -> &'a [f64] {
    &g[model.last_shared_span()]
}

fn head_forward(head: &Head, feats: &Matrix) -> Matrix {
    affine(feats, head.weights(), head.bias(), head.fan_in, |z| z)
}

fn affine(input: &Matrix, w: &[f64], b: &[f64], fan_in: usize, act: impl Fn(f64) -> f64) -> Matrix {
    let fan_out = b.len();
    let mut out = Matrix::zeros(input.rows(), fan_out);
    for i in 0..input.rows() {
        let x = input.row(i);
        let dst = out.row_mut(i);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = act(dot(x, &w[j * fan_in..(j + 1) * fan_in]) + b[j]);
        }
    }
    out
}

/// `[delta^T * input (row-major), colsum(delta)]`
fn linear_param_grad(delta: &Matrix, input: &Matrix) -> Vec<f64> {
    let fan_out = delta.cols();
    let fan_in = input.cols();
    let mut g = vec![0.0; (fan_in + 1) * fan_out];
    let (gw, gb) = g.split_at_mut(fan_in * fan_out);
    for i in 0..delta.rows() {
        let x = input.row(i);
        for (j, &d) in delta.row(i).iter().enumerate() {
            if d != 0.0 {
                axpy(d, x, &mut gw[j * fan_in..(j + 1) * fan_in]);
            }
            gb[j] += d;
        }
    }
    g
}

/// `delta * W`: gradient with respect to the layer input.
fn input_grad(delta: &Matrix, w: &[f64], fan_in: usize) -> Matrix {
    let mut out = Matrix::zeros(delta.rows(), fan_in);
    for i in 0..delta.rows() {
        let dst = out.row_mut(i);
        for (j, &d) in delta.row(i).iter().enumerate() {
            if d != 0.0 {
                axpy(d, &w[j * fan_in..(j + 1) * fan_in], dst);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq() -> TaskLoss {
        TaskLoss {
            kind: LossKind::SquaredError,
            scale: 1.0,
        }
    }

    #[test]
    fn zero_model_predicts_zero() {
        let model = MtlModel::zeros(3, &[4], Activation::Tanh, &[2, 1]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.1, 0.2, 0.3]]);
        let fwd = model.forward(&x).unwrap();
        for p in &fwd.predictions {
            assert!(p.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_linear_layer_is_affine_map() {
        let mut model = MtlModel::zeros(2, &[2], Activation::Identity, &[1]).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        model.shared_params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -1.0]);
        // head sums the two features
        model.head_mut(0).params_mut().copy_from_slice(&[1.0, 1.0, 0.0]);
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let fwd = model.forward(&x).unwrap();
        assert_eq!(fwd.features().as_slice(), &[3.5, 6.0]);
        assert_eq!(fwd.predictions[0].as_slice(), &[9.5]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let model = MtlModel::zeros(3, &[4], Activation::Tanh, &[1]).unwrap();
        let err = model.forward(&Matrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn perfect_fit_gives_zero_gradient() {
        let mut rng = Rng::new(1);
        let model = MtlModel::new(3, &ModelConfig::default(), &[1], &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.1, 0.9], vec![1.0, 0.0, -1.0]]);
        let fwd = model.forward(&x).unwrap();
        let batch = Batch::new(x, vec![TaskTargets::Real(fwd.predictions[0].clone())], vec![0, 0]).unwrap();
        let bw = model.backward_per_task(&fwd, &batch, &[sq()], 0).unwrap();
        assert!(bw.shared.grads().as_slice().iter().all(|&v| v == 0.0));
        assert!(bw.heads[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_heads_and_targets_give_identical_shared_gradients() {
        let mut rng = Rng::new(5);
        let mut model = MtlModel::new(3, &ModelConfig::default(), &[1, 1], &mut rng).unwrap();
        let h0 = model.head(0).params().to_vec();
        model.head_mut(1).params_mut().copy_from_slice(&h0);
        let x = Matrix::from_rows(&[vec![0.3, -0.1, 0.9], vec![1.0, 0.0, -1.0]]);
        let y = TaskTargets::Real(Matrix::from_rows(&[vec![1.0], vec![-1.0]]));
        let batch = Batch::new(x.clone(), vec![y.clone(), y], vec![0, 1]).unwrap();
        let fwd = model.forward(&x).unwrap();
        let bw = model.backward_per_task(&fwd, &batch, &[sq(), sq()], 0).unwrap();
        assert_eq!(bw.shared.grad(0), bw.shared.grad(1));
    }

    #[test]
    fn restriction_slices_last_layer() {
        let model = MtlModel::zeros(2, &[3, 2], Activation::Tanh, &[1]).unwrap();
        // layer 0: 3*(2+1) = 9 params, layer 1: 2*(3+1) = 8
        assert_eq!(model.last_shared_span(), 9..17);
        let g: Vec<f64> = (0..17).map(f64::from).collect();
        assert_eq!(restrict_to_last_shared(&g, &model), &g[9..17]);
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let mut rng = Rng::new(9);
        let mut model = MtlModel::new(4, &ModelConfig::default(), &[2], &mut rng).unwrap();
        let before = model.clone();
        let flat = model.shared_params().to_vec();
        model.set_shared_params(&flat).unwrap();
        assert_eq!(model, before);
        assert!(model.set_shared_params(&flat[1..]).is_err());
    }
}
