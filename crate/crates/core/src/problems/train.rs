//! Single-task and multi-task training loops.

use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::tasks::TaskSpec;
use crate::combiners::{Combiner, CombinerConfig, Scope};
use crate::diagnostics::Trace;
use crate::error::{Error, Result};
use crate::metrics::{delta_m, metric_value, BaselineTable, MetricValue};
use crate::numkit::{loss_and_grad, streams, Batch, ModelConfig, MtlModel, Optimizer, OptimizerKind, Rng, TaskLoss};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Minibatch size; 0 trains on the full training split every step.
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Validation is scored every `eval_every` steps and after the last one.
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    /// Keep the best-validation checkpoint instead of the last one.
    #[serde(default = "defaults::select_best")]
    pub select_best: bool,
    /// Record a diagnostic trace every `trace_stride` steps; 0 disables it.
    #[serde(default = "defaults::trace_stride")]
    pub trace_stride: usize,
    /// Sub-vector the trace measures norms and cosines on.
    #[serde(default)]
    pub trace_scope: Scope,
}

mod defaults {
    pub fn steps() -> usize {
        2000
    }
    pub fn lr() -> f64 {
        0.002
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn eval_every() -> usize {
        100
    }
    pub fn select_best() -> bool {
        true
    }
    pub fn trace_stride() -> usize {
        10
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            steps: defaults::steps(),
            lr: defaults::lr(),
            optimizer: OptimizerKind::default(),
            batch_size: defaults::batch_size(),
            eval_every: defaults::eval_every(),
            select_best: defaults::select_best(),
            trace_stride: defaults::trace_stride(),
            trace_scope: Scope::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// How the returned checkpoint is picked when `select_best` is on.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a> {
    /// Lowest sum of unscaled validation losses.
    ValidationLoss,
    /// Lowest validation delta-m against single-task references.
    ValidationDeltaM(&'a BaselineTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SyntheticDataset {
    pub fn split(&self, split: Split) -> &Batch {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MtlModel,
    pub combiner: Combiner,
    pub trace: Option<Trace>,
    /// Step after which the returned checkpoint was taken.
    pub best_step: usize,
    pub best_score: f64,
    /// Weights of the final update, when the combiner produces weights.
    pub last_weights: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Per-task test (or val/train) metrics, in task order.
pub fn evaluate(model: &MtlModel, batch: &Batch, tasks: &[TaskSpec]) -> Result<Vec<MetricValue>> {
    if tasks.len() != model.n_tasks() || batch.targets.len() != tasks.len() {
        return Err(Error::config("task count mismatch between model, data and specs"));
    }
    let fwd = model.forward(&batch.inputs)?;
    tasks
        .iter()
        .enumerate()
        .map(|(t, spec)| {
            Ok(MetricValue {
                task: spec.name.clone(),
                metric: spec.metric(),
                value: metric_value(spec.metric(), &fwd.predictions[t], &batch.targets[t])?,
            })
        })
        .collect()
}

fn task_losses(model: &MtlModel, batch: &Batch, losses: &[TaskLoss]) -> Result<Vec<f64>> {
    let fwd = model.forward(&batch.inputs)?;
    losses
        .iter()
        .enumerate()
        .map(|(t, l)| Ok(loss_and_grad(l.kind, &fwd.predictions[t], &batch.targets[t])?.0 * l.scale))
        .collect()
}

fn score(model: &MtlModel, ds: &SyntheticDataset, selector: Selector) -> Result<f64> {
    match selector {
        Selector::ValidationLoss => {
            let unscaled: Vec<TaskLoss> = ds.tasks.iter().map(|t| TaskLoss { scale: 1.0, ..t.loss() }).collect();
            Ok(task_losses(model, &ds.val, &unscaled)?.iter().sum())
        }
        Selector::ValidationDeltaM(baseline) => {
            let values: Vec<f64> = evaluate(model, &ds.val, &ds.tasks)?.iter().map(|m| m.value).collect();
            // higher delta-m is better
            Ok(-delta_m(&values, baseline)?.mean)
        }
    }
}

fn diverged(step: usize, err: Error, losses: Vec<f64>) -> Error {
    match err {
        Error::NonFinite { task, what } => Error::Diverged {
            step,
            reason: match task {
                Some(t) => format!("task {t}: {what}"),
                None => what,
            },
            losses,
        },
        other => other,
    }
}

/// Epoch-shuffled minibatch index stream.
struct Batcher {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Batcher {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            order: (0..n).collect(),
            pos: n,
            rng: Rng::stream(seed, streams::MINIBATCH),
        }
    }

    fn full(&self) -> bool {
        self.size == 0 || self.size >= self.n
    }

    fn next(&mut self) -> &[usize] {
        if self.pos + self.size > self.n {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos += self.size;
        &self.order[start..self.pos]
    }
}

/// Multi-task training: each step computes per-task gradients of the shared
/// encoder, lets the combiner turn them into one update direction, and
/// updates every head with its own (weighted, when weights exist) gradient.
pub fn train_mtl(
    cfg: &TrainConfig,
    ds: &SyntheticDataset,
    combiner_cfg: &CombinerConfig,
    seed: u64,
    selector: Selector,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_tasks = ds.n_tasks();
    let widths: Vec<usize> = ds.tasks.iter().map(|t| t.output_dim).collect();
    let losses: Vec<TaskLoss> = ds.tasks.iter().map(TaskSpec::loss).collect();
    let mut model = MtlModel::new(ds.train.inputs.cols(), &cfg.model, &widths, &mut Rng::stream(seed, streams::INIT))?;
    let mut combiner = Combiner::new(combiner_cfg.clone(), n_tasks, seed)?;
    let mut shared_opt = Optimizer::new(cfg.optimizer, model.shared_len());
    let mut head_opts: Vec<Optimizer> = (0..n_tasks)
        .map(|t| Optimizer::new(cfg.optimizer, model.head(t).params().len()))
        .collect();
    let mut trace = (cfg.trace_stride > 0).then(|| Trace::new(combiner_cfg.id.as_str(), seed, cfg.trace_stride, cfg.trace_scope));
    let mut batcher = Batcher::new(ds.train.len(), cfg.batch_size, seed);
    let mut best = (model.clone(), 0, f64::INFINITY);
    let mut last_weights = None;
    let mut warnings = Vec::new();

    for step in 0..cfg.steps {
        let batch_owned;
        let batch = if batcher.full() {
            &ds.train
        } else {
            batch_owned = ds.train.select(batcher.next());
            &batch_owned
        };
        let fwd = model.forward(&batch.inputs)?;
        let back = model
            .backward_per_task(&fwd, batch, &losses, step)
            .map_err(|e| diverged(step, e, Vec::new()))?;
        let before = back.shared.losses().to_vec();
        if let Some(l) = before.iter().find(|l| !(**l <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged {
                step,
                reason: format!("loss {l:e} exceeds {DIVERGENCE_LIMIT:e}"),
                losses: before,
            });
        }
        let res = combiner.combine(&back.shared).map_err(|e| diverged(step, e, before.clone()))?;
        if let Some(w) = &res.warning {
            if warnings.len() < 16 {
                warnings.push(format!("step {step}: {w}"));
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.record_step(step, &back.shared, &res);
        }
        shared_opt
            .step(model.shared_params_mut(), &res.direction, cfg.lr)
            .map_err(|e| diverged(step, e, before.clone()))?;
        for (t, (opt, grad)) in head_opts.iter_mut().zip(&back.heads).enumerate() {
            let scaled;
            let g = match &res.weights {
                Some(w) if w[t] != 1.0 => {
                    scaled = grad.iter().map(|v| w[t] * v).collect::<Vec<_>>();
                    &scaled
                }
                _ => grad,
            };
            opt.step(model.head_mut(t).params_mut(), g, cfg.lr)
                .map_err(|e| diverged(step, e, before.clone()))?;
        }
        if combiner.needs_post_step_losses() {
            let after = task_losses(&model, batch, &losses).map_err(|e| diverged(step, e, before.clone()))?;
            combiner.after_step(&before, &after)?;
        }
        last_weights = res.weights;

        let done = step + 1;
        if cfg.select_best && (done % cfg.eval_every == 0 || done == cfg.steps) {
            let s = score(&model, ds, selector)?;
            if s < best.2 {
                best = (model.clone(), done, s);
            }
        }
    }

    let (model, best_step, best_score) = if cfg.select_best && cfg.steps > 0 {
        best
    } else {
        let s = score(&model, ds, selector)?;
        (model, cfg.steps, s)
    };
    Ok(TrainOutcome {
        model,
        combiner,
        trace,
        best_step,
        best_score,
        last_weights,
        warnings,
    })
}

/// Single-task training: exactly `train_mtl` with the uniform combiner on
/// the dataset restricted to `task`.
pub fn train_stl(cfg: &TrainConfig, ds: &SyntheticDataset, task: usize, seed: u64) -> Result<TrainOutcome> {
    if task >= ds.n_tasks() {
        return Err(Error::config(format!("task {task} out of range for {} tasks", ds.n_tasks())));
    }
    let single = ds.restrict_tasks(&[task]);
    train_mtl(
        cfg,
        &single,
        &CombinerConfig::new(crate::combiners::CombinerId::Uniform),
        seed,
        Selector::ValidationLoss,
    )
}
