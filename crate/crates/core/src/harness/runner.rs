//! Orchestration of single runs, grid searches, sweeps and diagnostic runs.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Reference};
use crate::combiners::{CombinerConfig, CombinerId};
use crate::diagnostics::{feature_alignment_probe, ProbeReport, Trace};
use crate::error::{Error, Result};
use crate::metrics::{delta_m, BaselineTable, DeltaM, MetricValue};
use crate::numkit::MtlModel;
use crate::problems::{
    corrupt_labels, evaluate, subsample, train_mtl, train_stl, Selector, SyntheticDataset, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStat {
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: Vec<f64>,
    pub delta_m: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(default)]
    pub config_hash: String,
    pub combiner: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub per_task: Vec<TaskStat>,
    pub delta_m: DeltaStat,
    #[serde(default)]
    pub chosen_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub wall_time_s: f64,
    /// Test metrics of every seed, in task order.
    #[serde(default)]
    pub per_seed: Vec<SeedMetrics>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::malformed(path, e))
    }
}

/// Everything a seed needs that does not depend on the combiner: the data
/// and the single-task references.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub data: SyntheticDataset,
    pub stl_models: Vec<MtlModel>,
    pub stl_val: BaselineTable,
    pub stl_test: BaselineTable,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub test: Vec<MetricValue>,
    pub val_delta_m: f64,
    pub test_delta_m: DeltaM,
    pub trace: Option<Trace>,
    pub last_weights: Option<Vec<f64>>,
    pub model: MtlModel,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub cells: Vec<CellResult>,
}

/// Clean dataset for one seed, generated from `dataset.seed + seed`.
pub fn clean_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticDataset> {
    SyntheticDataset::generate(&crate::problems::DatasetSpec {
        seed: cfg.dataset.seed.wrapping_add(seed),
        ..cfg.dataset.clone()
    })
}

/// Training data for one seed: the clean dataset, subsampled and then
/// corrupted as configured.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticDataset> {
    let data_seed = cfg.dataset.seed.wrapping_add(seed);
    let mut ds = clean_dataset(cfg, seed)?;
    if let Some(s) = &cfg.subsample {
        ds = subsample(&ds, s.mode, s.amount()?, data_seed)?;
    }
    if let Some(c) = &cfg.corruption {
        ds = corrupt_labels(&ds, c.flip_p, c.sigma, data_seed)?;
    }
    Ok(ds)
}

/// Trains the single-task references on `data`.
pub fn stl_references(train: &TrainConfig, data: SyntheticDataset, seed: u64) -> Result<SeedContext> {
    let mut stl_cfg = train.clone();
    stl_cfg.trace_stride = 0;
    let mut models = Vec::with_capacity(data.n_tasks());
    let mut val = Vec::new();
    let mut test = Vec::new();
    for t in 0..data.n_tasks() {
        let out = train_stl(&stl_cfg, &data, t, seed)?;
        let one = data.restrict_tasks(&[t]);
        val.extend(evaluate(&out.model, &one.val, &one.tasks)?);
        test.extend(evaluate(&out.model, &one.test, &one.tasks)?);
        models.push(out.model);
    }
    Ok(SeedContext {
        seed,
        data,
        stl_models: models,
        stl_val: BaselineTable::from_metrics(&val),
        stl_test: BaselineTable::from_metrics(&test),
    })
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let data = build_dataset(cfg, seed)?;
    let modified = cfg.corruption.is_some() || cfg.subsample.is_some();
    if cfg.reference == Reference::CleanFull && modified {
        let reference = stl_references(&cfg.train, clean_dataset(cfg, seed)?, seed)?;
        Ok(SeedContext { data, ..reference })
    } else {
        stl_references(&cfg.train, data, seed)
    }
}

/// One multi-task run on a prepared seed. The checkpoint is selected by
/// validation delta-m against the seed's single-task references.
pub fn run_cell(train: &TrainConfig, ctx: &SeedContext, combiner: &CombinerConfig) -> Result<CellResult> {
    let out = train_mtl(train, &ctx.data, combiner, ctx.seed, Selector::ValidationDeltaM(&ctx.stl_val))?;
    let val: Vec<f64> = evaluate(&out.model, &ctx.data.val, &ctx.data.tasks)?
        .iter()
        .map(|m| m.value)
        .collect();
    let test = evaluate(&out.model, &ctx.data.test, &ctx.data.tasks)?;
    let values: Vec<f64> = test.iter().map(|m| m.value).collect();
    Ok(CellResult {
        seed: ctx.seed,
        val_delta_m: delta_m(&val, &ctx.stl_val)?.mean,
        test_delta_m: delta_m(&values, &ctx.stl_test)?,
        test,
        trace: out.trace,
        last_weights: out.last_weights,
        model: out.model,
        warnings: out.warnings,
    })
}

/// Sample mean and (n-1) standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(
    config_hash: &str,
    combiner: &str,
    cells: &[CellResult],
    chosen_weights: Option<Vec<f64>>,
    wall_time_s: f64,
) -> RunSummary {
    let n_tasks = cells.first().map_or(0, |c| c.test.len());
    let per_task = (0..n_tasks)
        .map(|t| {
            let vals: Vec<f64> = cells.iter().map(|c| c.test[t].value).collect();
            let (mean, std) = mean_std(&vals);
            TaskStat {
                task: cells[0].test[t].task.clone(),
                metric: cells[0].test[t].metric.as_str().to_string(),
                mean,
                std,
            }
        })
        .collect();
    let dms: Vec<f64> = cells.iter().map(|c| c.test_delta_m.mean).collect();
    let (mean, std) = mean_std(&dms);
    RunSummary {
        config_hash: config_hash.to_string(),
        combiner: combiner.to_string(),
        seeds: cells.iter().map(|c| c.seed).collect(),
        per_task,
        delta_m: DeltaStat { mean, std },
        chosen_weights,
        wall_time_s,
        per_seed: cells
            .iter()
            .map(|c| SeedMetrics {
                seed: c.seed,
                metrics: c.test.iter().map(|m| m.value).collect(),
                delta_m: c.test_delta_m.mean,
            })
            .collect(),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn prepare_all(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Vec<SeedContext>> {
    pool.install(|| cfg.seeds.par_iter().map(|&s| prepare_seed(cfg, s)).collect())
}

fn run_on(cfg: &ExperimentConfig, contexts: &[SeedContext], combiner: &CombinerConfig, pool: &rayon::ThreadPool) -> Result<Vec<CellResult>> {
    pool.install(|| contexts.par_iter().map(|ctx| run_cell(&cfg.train, ctx, combiner)).collect())
}

/// `run`: the configured combiner over every seed.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = pool(jobs)?;
    let contexts = prepare_all(cfg, &pool)?;
    let cells = run_on(cfg, &contexts, &cfg.combiner, &pool)?;
    let chosen = cfg.combiner.weights.clone();
    let summary = summarize(&cfg.hash(), cfg.combiner.id.as_str(), &cells, chosen, start.elapsed().as_secs_f64());
    Ok(RunOutput { summary, cells })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `summary.json` and, for traced runs, `trace_seed{s}.csv` and
/// `pairwise_seed{s}.csv`.
pub fn write_run(dir: &Path, output: &RunOutput) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("summary.json"), output.summary.to_json().as_bytes())?;
    for cell in &output.cells {
        if let Some(trace) = &cell.trace {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            write_file(&dir.join(format!("trace_seed{}.csv", cell.seed)), &buf)?;
            let mut buf = Vec::new();
            trace.write_pairwise_csv(&mut buf)?;
            write_file(&dir.join(format!("pairwise_seed{}.csv", cell.seed)), &buf)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weights: Vec<f64>,
    pub val_delta_m: f64,
    pub test_delta_m: f64,
    pub test_delta_m_std: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    /// Sorted by validation delta-m, best first.
    pub leaderboard: Vec<GridRow>,
    pub winner: RunOutput,
}

/// Cartesian product of per-task candidate lists; one list is reused for
/// every task.
pub fn expand_grid(candidates: &[Vec<f64>], n_tasks: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    let lists: Vec<&Vec<f64>> = match candidates.len() {
        0 => return Err(Error::config("grid needs candidate weights")),
        1 => vec![&candidates[0]; n_tasks],
        n if n == n_tasks => candidates.iter().collect(),
        n => {
            return Err(Error::config(format!(
                "{n} candidate lists for {n_tasks} tasks; give one list or one per task"
            )))
        }
    };
    if lists.iter().any(|l| l.is_empty()) {
        return Err(Error::config("empty candidate list"));
    }
    let size = lists.iter().try_fold(1usize, |acc, l| acc.checked_mul(l.len()));
    match size {
        Some(s) if s <= cap => {}
        _ => {
            return Err(Error::config(format!(
                "grid has {} points, above the cap of {cap}; use fewer candidates per task",
                size.map_or_else(|| "too many".to_string(), |s| s.to_string())
            )))
        }
    }
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for list in lists {
        points = points
            .into_iter()
            .flat_map(|p| {
                list.iter().map(move |&w| {
                    let mut q = p.clone();
                    q.push(w);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// `grid`: trains every weight vector of the product, ranks them by mean
/// validation delta-m and reports the winner's test results.
pub fn grid(cfg: &ExperimentConfig, candidates: &[Vec<f64>], jobs: usize) -> Result<GridOutput> {
    cfg.validate()?;
    let points = expand_grid(candidates, cfg.n_tasks(), cfg.grid.cap)?;
    if points.iter().any(|p| p.iter().any(|w| !(*w >= 0.0) || !w.is_finite())) {
        return Err(Error::config("grid weights must be finite and >= 0"));
    }
    let start = Instant::now();
    let pool = pool(jobs)?;
    let contexts = prepare_all(cfg, &pool)?;
    let mut train = cfg.train.clone();
    train.trace_stride = 0;
    let jobs_list: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..contexts.len()).map(move |s| (p, s)))
        .collect();
    let results: Vec<CellResult> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(p, s)| run_cell(&train, &contexts[s], &CombinerConfig::fixed(points[p].clone())))
            .collect::<Result<_>>()
    })?;
    let per_point: Vec<&[CellResult]> = results.chunks(contexts.len()).collect();
    let mut leaderboard: Vec<(usize, GridRow)> = per_point
        .iter()
        .enumerate()
        .map(|(p, cells)| {
            let val: Vec<f64> = cells.iter().map(|c| c.val_delta_m).collect();
            let test: Vec<f64> = cells.iter().map(|c| c.test_delta_m.mean).collect();
            let (test_mean, test_std) = mean_std(&test);
            (
                p,
                GridRow {
                    weights: points[p].clone(),
                    val_delta_m: mean_std(&val).0,
                    test_delta_m: test_mean,
                    test_delta_m_std: test_std,
                },
            )
        })
        .collect();
    // stable sort keeps enumeration order among ties
    leaderboard.sort_by(|a, b| b.1.val_delta_m.total_cmp(&a.1.val_delta_m));
    let best = leaderboard[0].0;
    let cells = per_point[best].to_vec();
    let summary = summarize(
        &cfg.hash(),
        "grid",
        &cells,
        Some(points[best].clone()),
        start.elapsed().as_secs_f64(),
    );
    Ok(GridOutput {
        leaderboard: leaderboard.into_iter().map(|(_, r)| r).collect(),
        winner: RunOutput { summary, cells },
    })
}

/// Writes `leaderboard.csv` (rank, one column per task weight, scores) and
/// the winner's `summary.json`.
pub fn write_grid(dir: &Path, output: &GridOutput) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("leaderboard.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let n = output.leaderboard.first().map_or(0, |r| r.weights.len());
    let mut header = vec!["rank".to_string()];
    header.extend((0..n).map(|t| format!("w_{t}")));
    header.extend(["val_delta_m", "test_delta_m", "test_delta_m_std"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for (rank, row) in output.leaderboard.iter().enumerate() {
        let mut rec = vec![(rank + 1).to_string()];
        rec.extend(row.weights.iter().map(|v| v.to_string()));
        rec.extend([row.val_delta_m, row.test_delta_m, row.test_delta_m_std].map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_file(&dir.join("summary.json"), output.winner.summary.to_json().as_bytes())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::malformed(path, e)
}

/// `sweep`: every combiner on every seed, sharing the single-task references.
pub fn sweep(cfg: &ExperimentConfig, combiners: &[CombinerId], jobs: usize) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    if combiners.is_empty() {
        return Err(Error::config("sweep needs at least one combiner"));
    }
    let pool = pool(jobs)?;
    let prep_start = Instant::now();
    let contexts = prepare_all(cfg, &pool)?;
    let prep_time = prep_start.elapsed().as_secs_f64();
    let mut outputs = Vec::with_capacity(combiners.len());
    for &id in combiners {
        let start = Instant::now();
        let mut comb = if id == cfg.combiner.id {
            cfg.combiner.clone()
        } else {
            CombinerConfig {
                id,
                ..cfg.combiner.clone()
            }
        };
        if id == CombinerId::Fixed && comb.weights.is_none() {
            comb.weights = Some(vec![1.0; cfg.n_tasks()]);
        }
        comb.validate(cfg.n_tasks())?;
        let cells = run_on(cfg, &contexts, &comb, &pool)?;
        let run_cfg = ExperimentConfig {
            combiner: comb.clone(),
            ..cfg.clone()
        };
        let summary = summarize(
            &run_cfg.hash(),
            id.as_str(),
            &cells,
            comb.weights.clone(),
            prep_time + start.elapsed().as_secs_f64(),
        );
        outputs.push(RunOutput { summary, cells });
    }
    Ok(outputs)
}

/// Writes each combiner's run under `<dir>/<combiner>/` and the aggregated
/// `sweep.csv`.
pub fn write_sweep(dir: &Path, outputs: &[RunOutput]) -> Result<()> {
    create_dir(dir)?;
    for out in outputs {
        write_run(&dir.join(&out.summary.combiner), out)?;
    }
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let tasks: Vec<String> = outputs
        .first()
        .map(|o| o.summary.per_task.iter().map(|t| format!("{}_{}", t.task, t.metric)).collect())
        .unwrap_or_default();
    let mut header = vec!["combiner".to_string(), "delta_m".into(), "delta_m_std".into()];
    header.extend(tasks);
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for out in outputs {
        let s = &out.summary;
        let mut rec = vec![s.combiner.clone(), s.delta_m.mean.to_string(), s.delta_m.std.to_string()];
        rec.extend(s.per_task.iter().map(|t| t.mean.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct DiagnoseOutput {
    pub run: RunOutput,
    /// One probe per seed, against that seed's single-task encoders.
    pub probes: Vec<(u64, ProbeReport)>,
}

/// `diagnose`: a run traced at every step plus the feature-distance probe
/// on the test inputs.
pub fn diagnose(cfg: &ExperimentConfig, jobs: usize) -> Result<DiagnoseOutput> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.train.trace_stride = 1;
    let start = Instant::now();
    let pool = pool(jobs)?;
    let contexts = prepare_all(&cfg, &pool)?;
    let cells = run_on(&cfg, &contexts, &cfg.combiner, &pool)?;
    let probes = contexts
        .iter()
        .zip(&cells)
        .map(|(ctx, cell)| Ok((ctx.seed, feature_alignment_probe(&cell.model, &ctx.stl_models, &ctx.data.test.inputs)?)))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(
        &cfg.hash(),
        cfg.combiner.id.as_str(),
        &cells,
        cfg.combiner.weights.clone(),
        start.elapsed().as_secs_f64(),
    );
    Ok(DiagnoseOutput {
        run: RunOutput { summary, cells },
        probes,
    })
}

pub const PROBE_HEADER: &str = "task,feature_l2,ridge_fallback";

/// Writes the run files plus `probe_seed{s}.csv`.
pub fn write_diagnose(dir: &Path, output: &DiagnoseOutput) -> Result<()> {
    write_run(dir, &output.run)?;
    for (seed, report) in &output.probes {
        let mut text = format!("{PROBE_HEADER}\n");
        for e in &report.tasks {
            text.push_str(&format!("{},{},{}\n", e.task, e.distance, e.ridge_fallback));
        }
        write_file(&dir.join(format!("probe_seed{seed}.csv")), text.as_bytes())?;
    }
    Ok(())
}
