use std::fs;

use gradbalance::harness::report::{collect, render};
use gradbalance::harness::{DeltaStat, RunSummary, TaskStat};
use gradbalance::metrics::BaselineTable;

const BASELINE: &str = r#"
[[tasks]]
task = "seg"
metric = "miou"
value = 39.38
lower_is_better = false

[[tasks]]
task = "depth"
metric = "rmse"
value = 0.6111
lower_is_better = true

[[tasks]]
task = "normal"
metric = "angle"
value = 21.94
lower_is_better = true

[[tasks]]
task = "edge"
metric = "odsf"
value = 72.40
lower_is_better = false
"#;

fn summary(combiner: &str, means: [f64; 4]) -> RunSummary {
    let names = ["seg", "depth", "normal", "edge"];
    RunSummary {
        config_hash: "0".repeat(16),
        combiner: combiner.into(),
        seeds: vec![0],
        per_task: names
            .iter()
            .zip(means)
            .map(|(n, m)| TaskStat {
                task: n.to_string(),
                metric: "m".into(),
                mean: m,
                std: 0.0,
            })
            .collect(),
        delta_m: DeltaStat { mean: 0.0, std: 0.0 },
        chosen_weights: None,
        wall_time_s: 1.0,
        per_seed: Vec::new(),
    }
}

#[test]
fn report_recomputes_delta_m_against_baseline() {
    let dir = tempfile::tempdir().unwrap();
    for (name, s) in [
        ("uniform", summary("uniform", [39.70, 0.6030, 23.37, 67.10])),
        ("fairgrad", summary("fairgrad", [39.91, 0.5953, 22.37, 72.70])),
    ] {
        fs::create_dir_all(dir.path().join(name)).unwrap();
        fs::write(dir.path().join(name).join("summary.json"), s.to_json()).unwrap();
    }
    let baseline = BaselineTable::from_toml(BASELINE).unwrap();
    let rows = collect(dir.path(), Some(&baseline)).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].combiner, "fairgrad");
    assert!((rows[0].delta_m - 0.59).abs() <= 0.01);
    assert!((rows[1].delta_m - -2.93).abs() <= 0.01);
    let table = render(&rows);
    assert!(table.contains("fairgrad") && table.contains("uniform"));
}

#[test]
fn summary_json_round_trips() {
    let s = summary("avgnorm", [1.0, 2.0, 3.0, 4.0]);
    let back = RunSummary::from_json(&s.to_json(), std::path::Path::new("x")).unwrap();
    assert_eq!(s, back);
    let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    for key in ["config_hash", "combiner", "seeds", "per_task", "delta_m", "chosen_weights", "wall_time_s"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn malformed_summary_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("summary.json"), "{ not json").unwrap();
    let err = collect(dir.path(), None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
