//! End-to-end acceptance checks. Each test prints one PASS/FAIL line per
//! criterion (run with `--nocapture` to see them) and fails on FAIL.

use gradbalance::combiners::{
    avgnorm_weights, bargain_weights, cagrad_combine, mgda_weights, pcgrad_project, simplex_project, CombinerId,
    GradientSet, Scope, SolverOptions,
};
use gradbalance::harness::{self, CellResult, CorruptionConfig, ExperimentConfig, SubsampleConfig};
use gradbalance::metrics::{delta_m, BaselineEntry, BaselineTable};
use gradbalance::numkit::{
    dot, norm, Activation, Batch, LossKind, Matrix, ModelConfig, MtlModel, Rng, TaskLoss, TaskTargets,
};
use gradbalance::problems::{gen_toy_landscape, SubsampleMode};

fn verdict(id: &str, ok: bool, detail: String) {
    println!("criterion {id}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn random_set(rng: &mut Rng, t: usize, d: usize) -> GradientSet {
    let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    GradientSet::from_rows(&rows).unwrap()
}

fn random_simplex(rng: &mut Rng, t: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..t).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn criterion_1_delta_m_fixtures() {
    let row = |task: &str, value, lower| BaselineEntry {
        task: task.into(),
        metric: if lower { "err".into() } else { "score".into() },
        value,
        lower_is_better: lower,
    };
    let stl = BaselineTable {
        tasks: vec![
            row("seg", 39.38, false),
            row("depth", 0.6111, true),
            row("normal", 21.94, true),
            row("edge", 72.40, false),
        ],
    };
    let uniform = delta_m(&[39.70, 0.6030, 23.37, 67.10], &stl).unwrap().mean;
    let fairgrad = delta_m(&[39.91, 0.5953, 22.37, 72.70], &stl).unwrap().mean;
    let ok = (uniform - -2.93).abs() <= 0.01 && (fairgrad - 0.59).abs() <= 0.01;
    verdict("1", ok, format!("uniform {uniform:.4} (want -2.93), fairgrad {fairgrad:.4} (want +0.59), tol 0.01"));
}

fn fd_max_rel_err(kind: LossKind, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (width, targets) = {
        let n = 6;
        match kind {
            LossKind::SquaredError => {
                let y = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect());
                (2, TaskTargets::Real(y))
            }
            LossKind::SoftmaxCrossEntropy => (3, TaskTargets::Labels((0..n).map(|_| rng.below(3)).collect())),
            LossKind::WeightedBinaryCrossEntropy { .. } => {
                (1, TaskTargets::Labels((0..n).map(|_| rng.below(2)).collect()))
            }
        }
    };
    let inputs = Matrix::from_vec(6, 4, (0..24).map(|_| rng.normal()).collect());
    let cfg = ModelConfig {
        hidden: vec![5, 4],
        activation: Activation::Tanh,
    };
    let mut model = MtlModel::new(4, &cfg, &[width], &mut rng).unwrap();
    // non-zero biases so every parameter matters
    for p in model.shared_params_mut() {
        *p += 0.1 * rng.normal();
    }
    for p in model.head_mut(0).params_mut() {
        *p += 0.1 * rng.normal();
    }
    let batch = Batch::new(inputs, vec![targets], vec![0; 6]).unwrap();
    let loss = [TaskLoss { kind, scale: 1.7 }];
    let eval = |m: &MtlModel| -> f64 {
        let f = m.forward(&batch.inputs).unwrap();
        m.backward_per_task(&f, &batch, &loss, 0).unwrap().shared.losses()[0]
    };
    let fwd = model.forward(&batch.inputs).unwrap();
    let back = model.backward_per_task(&fwd, &batch, &loss, 0).unwrap();
    let h = 1e-6;
    let mut analytic = back.shared.grad(0).to_vec();
    analytic.extend_from_slice(&back.heads[0]);
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..model.shared_len() {
        let mut m = model.clone();
        m.shared_params_mut()[i] += h;
        let up = eval(&m);
        m.shared_params_mut()[i] -= 2.0 * h;
        numeric.push((up - eval(&m)) / (2.0 * h));
    }
    for i in 0..model.head(0).params().len() {
        let mut m = model.clone();
        m.head_mut(0).params_mut()[i] += h;
        let up = eval(&m);
        m.head_mut(0).params_mut()[i] -= 2.0 * h;
        numeric.push((up - eval(&m)) / (2.0 * h));
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let kinds = [
        ("squared_error", LossKind::SquaredError),
        ("softmax_ce", LossKind::SoftmaxCrossEntropy),
        ("weighted_bce", LossKind::weighted_bce()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, kind) in kinds {
        let worst = (0..25).map(|s| fd_max_rel_err(kind, 100 + s)).fold(0.0, f64::max);
        ok &= worst < 1e-4;
        parts.push(format!("{name} worst {worst:.2e}"));
    }
    verdict("2", ok, format!("25 seeds per loss kind; {}", parts.join(", ")));
}

/// Linearly independent (condition number < 100) with no pairwise cosine
/// below -0.2, so the bargaining system has a positive solution.
fn well_conditioned(rng: &mut Rng, t: usize) -> GradientSet {
    loop {
        let d = 2 * t + 4;
        let gs = random_set(rng, t, d);
        let k = gs.grads().gram();
        let km = nalgebra::DMatrix::from_fn(t, t, |i, j| k.get(i, j));
        let eig = km.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let mild = (0..t).all(|i| (0..t).all(|j| k.get(i, j) >= -0.2 * (k.get(i, i) * k.get(j, j)).sqrt()));
        if lo > 0.0 && hi / lo < 100.0 && mild {
            return gs;
        }
    }
}

#[test]
fn criterion_3_solver_oracles() {
    let mut rng = Rng::new(3);
    let opts = SolverOptions::default();

    let mut mgda_worst = f64::MIN;
    for t in 2..=5 {
        for _ in 0..100 {
            let d = 2 + rng.below(8);
            let gs = random_set(&mut rng, t, d);
            let res = mgda_weights(&gs, opts).unwrap();
            let best = norm(&res.direction);
            for _ in 0..1000 {
                let w = random_simplex(&mut rng, t);
                let other = norm(&gs.grads().weighted_row_sum(&w));
                mgda_worst = mgda_worst.max(best - other);
            }
        }
    }
    let mgda_ok = mgda_worst <= 1e-6;

    let mut cagrad_worst = f64::MIN;
    for _ in 0..100 {
        let t = 2 + rng.below(4);
        let gs = random_set(&mut rng, t, 6);
        let c = 0.8 * rng.uniform();
        let res = cagrad_combine(&gs, c, opts).unwrap();
        let g0 = gs.grads().weighted_row_sum(&vec![1.0 / t as f64; t]);
        let gap: Vec<f64> = res.direction.iter().zip(&g0).map(|(a, b)| a - b).collect();
        cagrad_worst = cagrad_worst.max(norm(&gap) - (c * norm(&g0) + 1e-8));
    }
    let cagrad_ok = cagrad_worst <= 0.0;

    let mut nash_worst = 0.0f64;
    for _ in 0..100 {
        let t = 2 + rng.below(4);
        let gs = well_conditioned(&mut rng, t);
        let res = bargain_weights(&gs, 1.0, 0.5, opts).unwrap();
        let w = res.weights.unwrap();
        for i in 0..t {
            nash_worst = nash_worst.max((w[i] * dot(gs.grad(i), &res.direction) - 1.0).abs());
        }
    }
    let nash_ok = nash_worst <= 1e-6;

    let mut pc_worst = f64::MAX;
    for _ in 0..1000 {
        let gs = random_set(&mut rng, 2, 5);
        let (p, _) = pcgrad_project(&gs, &mut rng);
        pc_worst = pc_worst.min(dot(p.row(0), gs.grad(1))).min(dot(p.row(1), gs.grad(0)));
    }
    let pc_ok = pc_worst >= -1e-12;

    let mut kkt_worst = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + rng.below(10);
        let v: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let x = simplex_project(&v);
        // KKT: x = max(v - tau, 0) for one tau, sum x = 1, x >= 0
        let support: Vec<usize> = (0..n).filter(|&i| x[i] > 0.0).collect();
        let tau = support.iter().map(|&i| v[i] - x[i]).sum::<f64>() / support.len() as f64;
        let mut err = (x.iter().sum::<f64>() - 1.0).abs();
        for i in 0..n {
            err = err.max((x[i] - (v[i] - tau).max(0.0)).abs());
            err = err.max((-x[i]).max(0.0));
        }
        kkt_worst = kkt_worst.max(err);
    }
    let kkt_ok = kkt_worst <= 1e-12;

    verdict(
        "3",
        mgda_ok && cagrad_ok && nash_ok && pc_ok && kkt_ok,
        format!(
            "mgda excess over random points {mgda_worst:.2e} (<=1e-6); cagrad ball excess {cagrad_worst:.2e} (<=0); \
             nash residual {nash_worst:.2e} (<=1e-6); pcgrad min dot {pc_worst:.2e} (>=-1e-12); simplex kkt {kkt_worst:.2e}"
        ),
    );
}

#[test]
fn criterion_4_avgnorm_equalizes_scoped_norms() {
    let mut rng = Rng::new(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = 2 + rng.below(5);
        let d = 4 + rng.below(12);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let s = 10f64.powf(4.0 * rng.uniform() - 2.0);
                (0..d).map(|_| s * rng.normal()).collect()
            })
            .collect();
        let split = 1 + rng.below(d - 1);
        let gs = GradientSet::from_rows(&rows).unwrap().with_last_shared(split..d);
        let res = avgnorm_weights(&gs, Scope::LastShared, 1e-10).unwrap();
        let w = res.weights.unwrap();
        let s = res.aux["strength"];
        for i in 0..t {
            let n = w[i] * norm(gs.scoped_grad(i, Scope::LastShared));
            worst = worst.max((n - s).abs() / s);
        }
    }
    verdict("4", worst <= 1e-9, format!("worst relative deviation from S over 1000 sets: {worst:.2e}"));
}

fn acceptance_config() -> ExperimentConfig {
    ExperimentConfig {
        seeds: (0..5).collect(),
        ..ExperimentConfig::default()
    }
}

/// Per-seed spread (max - min over tasks) of the mean cos_to_agg over the
/// final 20% of steps, averaged over seeds.
fn cos_spread(cells: &[CellResult], steps: usize) -> f64 {
    let per_seed: Vec<f64> = cells
        .iter()
        .map(|c| {
            let trace = c.trace.as_ref().expect("traced run");
            let tail: Vec<_> = trace.records.iter().filter(|r| r.step as f64 >= 0.8 * steps as f64).collect();
            let t = tail[0].cos_to_agg.len();
            let means: Vec<f64> = (0..t)
                .map(|i| tail.iter().map(|r| r.cos_to_agg[i]).sum::<f64>() / tail.len() as f64)
                .collect();
            means.iter().copied().fold(f64::MIN, f64::max) - means.iter().copied().fold(f64::MAX, f64::min)
        })
        .collect();
    per_seed.iter().sum::<f64>() / per_seed.len() as f64
}

#[test]
fn criterion_5_imbalance_phenomenology() {
    let start = std::time::Instant::now();
    let cfg = acceptance_config();
    let runs = harness::sweep(&cfg, &[CombinerId::Uniform, CombinerId::AvgNorm], 1).unwrap();
    let (uniform, avgnorm) = (&runs[0], &runs[1]);
    let candidates = vec![vec![0.01, 0.1, 1.0, 10.0, 100.0]];
    let grid = harness::grid(&cfg, &candidates, 1).unwrap();

    let u = uniform.summary.delta_m.mean;
    let a = avgnorm.summary.delta_m.mean;
    let g = grid.winner.summary.delta_m.mean;
    verdict("5a", a - u > 2.0, format!("uniform {u:.2}, avgnorm {a:.2}, gap {:.2} pp (> 2)", a - u));
    verdict(
        "5b",
        (a - g).abs() <= 0.5,
        format!(
            "avgnorm {a:.2} vs grid winner {:?} {g:.2} (|diff| {:.2} <= 0.5) over {} points",
            grid.winner.summary.chosen_weights.as_ref().unwrap(),
            (a - g).abs(),
            grid.leaderboard.len()
        ),
    );
    let su = cos_spread(&uniform.cells, cfg.train.steps);
    let sa = cos_spread(&avgnorm.cells, cfg.train.steps);
    verdict("5c", sa < 0.15 && su >= 0.25, format!("cos_to_agg spread: avgnorm {sa:.3} (< 0.15), uniform {su:.3} (>= 0.25)"));

    // small-scale task RMSE against its single-task reference
    let rel = |cells: &[CellResult]| -> f64 {
        let v: Vec<f64> = cells.iter().map(|c| -c.test_delta_m.per_task[0]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (ru, ra) = (rel(&uniform.cells), rel(&avgnorm.cells));
    verdict(
        "5 (small-scale task)",
        ru > 10.0 && ra <= 3.0,
        format!("test RMSE above STL: uniform {ru:+.1}% (> 10), avgnorm {ra:+.1}% (<= 3)"),
    );
    println!("criterion 5 runtime: {:.0} s", start.elapsed().as_secs_f64());
}

#[test]
fn criterion_6_data_protocols() {
    let base = ExperimentConfig {
        seeds: (0..3).collect(),
        ..ExperimentConfig::default()
    };
    // corruption
    let mut corrupt_ok = true;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let clean = harness::prepare_seed(&base, seed).unwrap();
        let noisy_cfg = ExperimentConfig {
            corruption: Some(CorruptionConfig { flip_p: 0.5, sigma: 1.0 }),
            ..base.clone()
        };
        let noisy_data = harness::build_dataset(&noisy_cfg, seed).unwrap();
        let noisy_stl = harness::stl_references(&base.train, noisy_data, seed).unwrap();
        let stl_values: Vec<f64> = noisy_stl.stl_test.tasks.iter().map(|e| e.value).collect();
        let stl_dm = delta_m(&stl_values, &clean.stl_test).unwrap().mean;
        let mtl_clean = harness::run_cell(&base.train, &clean, &base.combiner).unwrap();
        let noisy = harness::prepare_seed(&noisy_cfg, seed).unwrap();
        let mtl_noisy = harness::run_cell(&base.train, &noisy, &base.combiner).unwrap();
        let (mc, mn) = (mtl_clean.test_delta_m.mean, mtl_noisy.test_delta_m.mean);
        corrupt_ok &= stl_dm < 0.0 && mn < mc;
        lines.push(format!("seed {seed}: stl 0 -> {stl_dm:.2}, mtl {mc:.2} -> {mn:.2}"));
    }
    verdict("6 (corruption)", corrupt_ok, lines.join("; "));

    // subsampling
    let mut sub_ok = true;
    let mut lines = Vec::new();
    for mode in [SubsampleMode::Groups, SubsampleMode::WithinGroups] {
        let stats: Vec<(f64, f64)> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&f| {
                let cfg = ExperimentConfig {
                    subsample: Some(SubsampleConfig {
                        mode,
                        fraction: Some(f),
                        count: None,
                    }),
                    ..base.clone()
                };
                let s = harness::run(&cfg, 1).unwrap().summary;
                (s.delta_m.mean, s.delta_m.std / (s.seeds.len() as f64).sqrt())
            })
            .collect();
        for w in stats.windows(2) {
            sub_ok &= w[1].0 <= w[0].0 + w[0].1.max(w[1].1);
        }
        lines.push(format!(
            "{mode:?}: {}",
            stats.iter().map(|(m, se)| format!("{m:.2}±{se:.2}")).collect::<Vec<_>>().join(" -> ")
        ));
    }
    verdict("6 (subsampling)", sub_ok, format!("fractions 1, 1/2, 1/4: {}", lines.join("; ")));
}

#[test]
fn criterion_7_mgda_reaches_pareto_stationarity() {
    use gradbalance::combiners::{Combiner, CombinerConfig};
    let land = gen_toy_landscape();
    let mut rng = Rng::new(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let start = [6.0 * rng.uniform() - 3.0, 6.0 * rng.uniform() - 3.0];
        let mut comb = Combiner::new(CombinerConfig::new(CombinerId::Mgda), 2, 0).unwrap();
        let path = land.descend(start, &mut comb, 0.1, 20_000, 1e-5).unwrap();
        worst = worst.max(path.final_min_norm);
    }
    verdict("7", worst < 1e-4, format!("largest final min-norm over 100 starts: {worst:.2e} (< 1e-4)"));
}

#[test]
fn criterion_8_runs_are_deterministic() {
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        combiner: gradbalance::combiners::CombinerConfig::new(CombinerId::AvgNorm),
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::write_run(&a, &harness::run(&cfg, 1).unwrap()).unwrap();
    harness::write_run(&b, &harness::run(&cfg, 1).unwrap()).unwrap();
    let strip = |p: &std::path::Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    let mut ok = strip(&a.join("summary.json")) == strip(&b.join("summary.json"));
    let mut files = 0;
    for seed in [0, 1] {
        for name in [format!("trace_seed{seed}.csv"), format!("pairwise_seed{seed}.csv")] {
            let x = std::fs::read(a.join(&name)).unwrap();
            ok &= !x.is_empty() && x == std::fs::read(b.join(&name)).unwrap();
            files += 1;
        }
    }
    verdict("8", ok, format!("summary.json (minus wall time) and {files} trace CSVs identical across two runs"));
}
