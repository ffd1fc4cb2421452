use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradbalance::combiners::CombinerId;
use gradbalance::harness::{self, report, ExperimentConfig};
use gradbalance::metrics::BaselineTable;
use gradbalance::{Error, Result};

#[derive(Parser)]
#[command(name = "gradbalance", version, about = "Multi-task gradient balancing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured combiner on every seed.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Search fixed task weights, selecting by validation delta-m.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Comma-separated candidates; repeat once per task, or give one list for all tasks.
        #[arg(long = "weights", value_name = "LIST")]
        weights: Vec<String>,
        /// Largest allowed number of grid points.
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Run several combiners over the same seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated combiner ids, or `all`.
        #[arg(long, value_name = "IDS", default_value = "all")]
        combiners: String,
    },
    /// Run with a trace at every step and the feature probe.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate every summary.json below a directory.
    Report {
        dir: PathBuf,
        /// Baseline table (TOML) used to recompute delta-m from per-task means.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Combiner id, overriding the config.
    #[arg(long)]
    combiner: Option<CombinerId>,
    /// Seed count `k` (seeds 0..k) or an explicit list `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    trace_stride: Option<usize>,
    /// Output directory (takes precedence over GRADBALANCE_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(id) = self.combiner {
            cfg.combiner.id = id;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = harness::parse_seeds(s)?;
        }
        if let Some(n) = self.steps {
            cfg.train.steps = n;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
        if let Some(s) = self.trace_stride {
            cfg.train.trace_stride = s;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(s: &harness::RunSummary, dir: &Path) {
    println!(
        "{}: delta_m {:+.2} +/- {:.2} over {} seed(s) -> {}",
        s.combiner,
        s.delta_m.mean,
        s.delta_m.std,
        s.seeds.len(),
        dir.join("summary.json").display()
    );
    for t in &s.per_task {
        println!("  {:<12} {:<8} {:.4} +/- {:.4}", t.task, t.metric, t.mean, t.std);
    }
}

fn parse_combiners(text: &str) -> Result<Vec<CombinerId>> {
    if text.trim() == "all" {
        return Ok(CombinerId::ALL.to_vec());
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<CombinerId>().map_err(|e| Error::config(e.to_string())))
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let out = harness::run(&cfg, common.jobs)?;
            harness::write_run(&cfg.out_dir, &out)?;
            for cell in &out.cells {
                for w in &cell.warnings {
                    eprintln!("warning: seed {}: {w}", cell.seed);
                }
            }
            print_summary(&out.summary, &cfg.out_dir);
        }
        Command::Grid { common, weights, cap } => {
            let mut cfg = common.load()?;
            if let Some(c) = cap {
                cfg.grid.cap = c;
            }
            if !weights.is_empty() {
                cfg.grid.weights = weights.iter().map(|w| harness::parse_weights(w)).collect::<Result<_>>()?;
            }
            let out = harness::grid(&cfg, &cfg.grid.weights, common.jobs)?;
            harness::write_grid(&cfg.out_dir, &out)?;
            let best = &out.leaderboard[0];
            println!(
                "grid: {} points, winner {:?} (validation delta_m {:+.2})",
                out.leaderboard.len(),
                best.weights,
                best.val_delta_m
            );
            print_summary(&out.winner.summary, &cfg.out_dir);
        }
        Command::Sweep { common, combiners } => {
            let cfg = common.load()?;
            let ids = parse_combiners(&combiners)?;
            let outs = harness::sweep(&cfg, &ids, common.jobs)?;
            harness::write_sweep(&cfg.out_dir, &outs)?;
            for o in &outs {
                println!("{:<10} delta_m {:+.2} +/- {:.2}", o.summary.combiner, o.summary.delta_m.mean, o.summary.delta_m.std);
            }
            println!("-> {}", cfg.out_dir.join("sweep.csv").display());
        }
        Command::Diagnose { common } => {
            let cfg = common.load()?;
            let out = harness::diagnose(&cfg, common.jobs)?;
            harness::write_diagnose(&cfg.out_dir, &out)?;
            print_summary(&out.run.summary, &cfg.out_dir);
        }
        Command::Report { dir, baseline } => {
            let table = match baseline {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    Some(BaselineTable::from_toml(&text)?)
                }
                None => None,
            };
            let rows = report::collect(&dir, table.as_ref())?;
            print!("{}", report::render(&rows));
            report::write_csv(&dir.join("report.csv"), &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
