//! Step-wise diagnostic traces and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{cos_to_aggregate, pairwise_cosine, pairwise_dot};
use crate::combiners::{CombineResult, GradientSet, Scope};
use crate::error::{Error, Result};
use crate::numkit::{norm, Matrix};

pub const TRACE_HEADER: &str = "step,task,loss,weight,grad_norm,cos_to_agg";
pub const PAIRWISE_HEADER: &str = "step,task_i,task_j,cosine,dot";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub losses: Vec<f64>,
    /// Absent for direction-only combiners.
    pub weights: Option<Vec<f64>>,
    /// Scoped norm of each task's weighted contribution `|w_i g_i|`.
    pub grad_norms: Vec<f64>,
    pub cos_to_agg: Vec<f64>,
    pub cosine: Matrix,
    pub dot: Matrix,
}

/// One row of the per-task trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub task: usize,
    pub loss: f64,
    pub weight: Option<f64>,
    pub grad_norm: f64,
    pub cos_to_agg: f64,
}

/// One upper-triangle entry (diagonal included) of the pairwise CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub step: usize,
    pub task_i: usize,
    pub task_j: usize,
    pub cosine: f64,
    pub dot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub method: String,
    pub seed: u64,
    pub stride: usize,
    pub scope: Scope,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(method: impl Into<String>, seed: u64, stride: usize, scope: Scope) -> Self {
        Self {
            method: method.into(),
            seed,
            stride: stride.max(1),
            scope,
            records: Vec::new(),
        }
    }

    /// Appends a record when `step` falls on the stride. Returns whether it did.
    pub fn record_step(&mut self, step: usize, gs: &GradientSet, result: &CombineResult) -> bool {
        if step % self.stride != 0 {
            return false;
        }
        self.records.push(Self::measure(step, gs, result, self.scope));
        true
    }

    pub fn measure(step: usize, gs: &GradientSet, result: &CombineResult, scope: Scope) -> TraceRecord {
        let span = gs.span(scope);
        let scoped = gs.scoped(scope);
        let d = &result.direction.as_slice()[span];
        let grad_norms = (0..gs.n_tasks())
            .map(|t| {
                let w = result.weights.as_ref().map_or(1.0, |w| w[t]);
                w.abs() * norm(scoped.grad(t))
            })
            .collect();
        TraceRecord {
            step,
            losses: gs.losses().to_vec(),
            weights: result.weights.clone(),
            grad_norms,
            cos_to_agg: cos_to_aggregate(&scoped, d).values,
            cosine: pairwise_cosine(&scoped).0,
            dot: pairwise_dot(&scoped),
        }
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.records
            .iter()
            .flat_map(|r| {
                (0..r.losses.len()).map(move |t| TraceRow {
                    step: r.step,
                    task: t,
                    loss: r.losses[t],
                    weight: r.weights.as_ref().map(|w| w[t]),
                    grad_norm: r.grad_norms[t],
                    cos_to_agg: r.cos_to_agg[t],
                })
            })
            .collect()
    }

    pub fn pairwise_rows(&self) -> Vec<PairwiseRow> {
        let mut out = Vec::new();
        for r in &self.records {
            let t = r.losses.len();
            for i in 0..t {
                for j in i..t {
                    out.push(PairwiseRow {
                        step: r.step,
                        task_i: i,
                        task_j: j,
                        cosine: r.cosine.get(i, j),
                        dot: r.dot.get(i, j),
                    });
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows())
    }

    pub fn write_pairwise_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.pairwise_rows())
    }

    /// Rebuilds records from the two CSVs.
    pub fn from_rows(
        method: impl Into<String>,
        seed: u64,
        stride: usize,
        scope: Scope,
        rows: &[TraceRow],
        pairs: &[PairwiseRow],
    ) -> Result<Self> {
        let mut trace = Trace::new(method, seed, stride, scope);
        let mut i = 0;
        while i < rows.len() {
            let step = rows[i].step;
            let group: Vec<&TraceRow> = rows[i..].iter().take_while(|r| r.step == step).collect();
            i += group.len();
            let t = group.len();
            if group.iter().enumerate().any(|(k, r)| r.task != k) {
                return Err(malformed(format!("tasks out of order at step {step}")));
            }
            let weights = if group.iter().all(|r| r.weight.is_some()) {
                Some(group.iter().map(|r| r.weight.unwrap()).collect())
            } else {
                None
            };
            let mut cosine = Matrix::zeros(t, t);
            let mut dot = Matrix::zeros(t, t);
            for p in pairs.iter().filter(|p| p.step == step) {
                if p.task_i >= t || p.task_j >= t {
                    return Err(malformed(format!("pair ({}, {}) out of range", p.task_i, p.task_j)));
                }
                for (a, b) in [(p.task_i, p.task_j), (p.task_j, p.task_i)] {
                    cosine.set(a, b, p.cosine);
                    dot.set(a, b, p.dot);
                }
            }
            trace.records.push(TraceRecord {
                step,
                losses: group.iter().map(|r| r.loss).collect(),
                weights,
                grad_norms: group.iter().map(|r| r.grad_norm).collect(),
                cos_to_agg: group.iter().map(|r| r.cos_to_agg).collect(),
                cosine,
                dot,
            });
        }
        Ok(trace)
    }
}

fn malformed(reason: String) -> Error {
    Error::Malformed {
        path: "<trace>".into(),
        reason,
    }
}

fn write_rows<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| malformed(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R, header: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let found = r.headers().map_err(|e| malformed(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(malformed(format!("header '{found}' != '{header}'")));
    }
    r.deserialize().map(|row| row.map_err(|e| malformed(e.to_string()))).collect()
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    read_rows(input, TRACE_HEADER)
}

pub fn read_pairwise_csv<R: Read>(input: R) -> Result<Vec<PairwiseRow>> {
    read_rows(input, PAIRWISE_HEADER)
}
