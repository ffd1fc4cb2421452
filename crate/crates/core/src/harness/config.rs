//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combiners::CombinerConfig;
use crate::error::{Error, Result};
use crate::problems::{DatasetSpec, SubsampleAmount, SubsampleMode, TrainConfig};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "GRADBALANCE_OUT";
/// Default upper bound on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    #[serde(default)]
    pub flip_p: f64,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    pub mode: SubsampleMode,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
}

impl SubsampleConfig {
    pub fn amount(&self) -> Result<SubsampleAmount> {
        match (self.fraction, self.count) {
            (Some(f), None) => Ok(SubsampleAmount::Fraction(f)),
            (None, Some(c)) => Ok(SubsampleAmount::Count(c)),
            _ => Err(Error::config("subsample needs exactly one of `fraction` or `count`")),
        }
    }
}

/// Data the single-task references are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The uncorrupted, full training split, so that corrupted or
    /// subsampled runs are scored against the same baseline as clean ones.
    #[default]
    CleanFull,
    /// The same (possibly corrupted or subsampled) data as the MTL run.
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Candidate weights per task; a single list is reused for every task.
    #[serde(default)]
    pub weights: Vec<Vec<f64>>,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_GRID_CAP
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            weights: Vec::new(),
            cap: DEFAULT_GRID_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub combiner: CombinerConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionConfig>,
    #[serde(default)]
    pub subsample: Option<SubsampleConfig>,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub grid: GridConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            seeds: default_seeds(),
            out_dir: default_out(),
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            combiner: CombinerConfig::default(),
            corruption: None,
            subsample: None,
            reference: Reference::default(),
            grid: GridConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; `GRADBALANCE_OUT` replaces `out_dir`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(out) = std::env::var_os(OUT_ENV) {
            cfg.out_dir = PathBuf::from(out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.combiner.validate(self.dataset.tasks.len())?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if let Some(c) = &self.corruption {
            if !(0.0..1.0).contains(&c.flip_p) || !(c.sigma >= 0.0) || !c.sigma.is_finite() {
                return Err(Error::config("corruption needs 0 <= flip_p < 1 and sigma >= 0"));
            }
        }
        if let Some(s) = &self.subsample {
            if let SubsampleAmount::Fraction(f) = s.amount()? {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::config(format!("subsample fraction {f} must be in (0, 1]")));
                }
            }
        }
        if self.grid.cap == 0 {
            return Err(Error::config("grid cap must be positive"));
        }
        Ok(())
    }

    /// Short hex digest identifying the experiment. Computed from the parsed
    /// config (so key order and formatting in the file do not matter), with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn n_tasks(&self) -> usize {
        self.dataset.tasks.len()
    }
}

/// Parses `"0,1,2"` as a seed list and `"3"` as seeds `0..3`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let parse = |s: &str| s.parse::<u64>().map_err(|_| Error::config(format!("bad seed '{s}'")));
    match parts.as_slice() {
        [] => Err(Error::config("empty seed list")),
        [single] if !text.contains(',') => {
            let k = parse(single)?;
            if k == 0 {
                return Err(Error::config("seed count must be positive"));
            }
            Ok((0..k).collect())
        }
        many => many.iter().map(|s| parse(s)).collect(),
    }
}

/// Parses a comma-separated weight list such as `"0.01,0.1,1"`.
pub fn parse_weights(text: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::config(format!("bad weight '{s}'"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::config("empty weight list"));
    }
    if out.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::config("grid weights must be finite and >= 0"));
    }
    Ok(out)
}
