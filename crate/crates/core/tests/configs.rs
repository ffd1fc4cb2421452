use std::path::PathBuf;

use gradbalance::combiners::CombinerId;
use gradbalance::harness::ExperimentConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            let cfg = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn imbalance_config_spells_out_the_defaults() {
    let text = std::fs::read_to_string(configs_dir().join("imbalance.toml")).unwrap();
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let def = ExperimentConfig::default();
    assert_eq!(cfg.dataset, def.dataset);
    assert_eq!(cfg.train, def.train);
    assert_eq!(cfg.combiner.id, CombinerId::AvgNorm);
    assert_eq!(cfg.seeds, (0..5).collect::<Vec<_>>());
}
