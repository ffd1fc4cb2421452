//! Gradient combiners `G(.)`: map the per-task shared gradients (and
//! losses) of one step to task weights and/or a single update direction.

mod gradient_set;
mod solvers;
mod surgery;
mod weighting;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gradient_set::{CombineResult, GradientSet, Scope};
pub use solvers::{bargain_weights, mgda_weights, min_norm_gamma, min_norm_gamma_gram, min_norm_simplex, simplex_project, SolverOptions};
pub use surgery::{cagrad_combine, graddrop_combine, pcgrad_combine, pcgrad_project};
pub use weighting::{
    avgnorm_weights, combine_fixed, combine_uniform, dwa_from_ratios, dwa_weights, famo_update, famo_weights,
    gradnorm_step, rlw_weights, uw_step, DwaState, FamoState, GradNormState, UwState, DEFAULT_EPS_NORM,
};

use crate::error::{Error, Result};
use crate::numkit::{streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerId {
    Uniform,
    Fixed,
    AvgNorm,
    Uw,
    GradNorm,
    Dwa,
    Rlw,
    Famo,
    Mgda,
    PcGrad,
    CaGrad,
    GradDrop,
    Nash,
    FairGrad,
}

impl CombinerId {
    pub const ALL: [CombinerId; 14] = [
        CombinerId::Uniform,
        CombinerId::Fixed,
        CombinerId::AvgNorm,
        CombinerId::Uw,
        CombinerId::GradNorm,
        CombinerId::Dwa,
        CombinerId::Rlw,
        CombinerId::Famo,
        CombinerId::Mgda,
        CombinerId::PcGrad,
        CombinerId::CaGrad,
        CombinerId::GradDrop,
        CombinerId::Nash,
        CombinerId::FairGrad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerId::Uniform => "uniform",
            CombinerId::Fixed => "fixed",
            CombinerId::AvgNorm => "avgnorm",
            CombinerId::Uw => "uw",
            CombinerId::GradNorm => "gradnorm",
            CombinerId::Dwa => "dwa",
            CombinerId::Rlw => "rlw",
            CombinerId::Famo => "famo",
            CombinerId::Mgda => "mgda",
            CombinerId::PcGrad => "pcgrad",
            CombinerId::CaGrad => "cagrad",
            CombinerId::GradDrop => "graddrop",
            CombinerId::Nash => "nash",
            CombinerId::FairGrad => "fairgrad",
        }
    }

    /// Direction-only methods produce no task weights; their decoder
    /// gradients are applied unweighted.
    pub fn is_direction_only(self) -> bool {
        matches!(self, CombinerId::PcGrad | CombinerId::CaGrad | CombinerId::GradDrop)
    }
}

impl fmt::Display for CombinerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombinerId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = CombinerId::ALL.iter().map(|id| id.as_str()).collect();
                Error::config(format!("unknown combiner '{s}' (expected one of {})", known.join("|")))
            })
    }
}

/// Hyperparameters for every combiner; only the fields of the selected
/// method are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinerConfig {
    pub id: CombinerId,
    /// Task weights for `fixed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Norm scope for `avgnorm` and `gradnorm`.
    #[serde(default)]
    pub scope: Scope,
    #[serde(default = "defaults::cagrad_c")]
    pub cagrad_c: f64,
    #[serde(default = "defaults::gradnorm_alpha")]
    pub gradnorm_alpha: f64,
    #[serde(default = "defaults::gradnorm_lr")]
    pub gradnorm_lr: f64,
    #[serde(default = "defaults::dwa_temperature")]
    pub dwa_temperature: f64,
    #[serde(default = "defaults::famo_lr")]
    pub famo_lr: f64,
    #[serde(default = "defaults::famo_decay")]
    pub famo_decay: f64,
    #[serde(default = "defaults::uw_lr")]
    pub uw_lr: f64,
    #[serde(default = "defaults::fairgrad_alpha")]
    pub fairgrad_alpha: f64,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    #[serde(default = "defaults::eps_norm")]
    pub eps_norm: f64,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
}

mod defaults {
    pub fn cagrad_c() -> f64 {
        0.4
    }
    pub fn gradnorm_alpha() -> f64 {
        1.5
    }
    pub fn gradnorm_lr() -> f64 {
        0.025
    }
    pub fn dwa_temperature() -> f64 {
        2.0
    }
    pub fn famo_lr() -> f64 {
        0.025
    }
    pub fn famo_decay() -> f64 {
        0.001
    }
    pub fn uw_lr() -> f64 {
        0.025
    }
    pub fn fairgrad_alpha() -> f64 {
        2.0
    }
    pub fn damping() -> f64 {
        0.5
    }
    pub fn eps_norm() -> f64 {
        super::DEFAULT_EPS_NORM
    }
    pub fn tol() -> f64 {
        1e-8
    }
    pub fn max_iter() -> usize {
        200
    }
}

/// GradNorm exponents searched in the reference protocol.
impl Default for CombinerConfig {
    fn default() -> Self {
        Self::new(CombinerId::Uniform)
    }
}

pub const GRADNORM_ALPHA_GRID: [f64; 6] = [0.1, 0.2, 0.5, 1.0, 1.5, 2.0];
/// DWA temperatures searched in the reference protocol.
pub const DWA_TEMPERATURE_GRID: [f64; 7] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];

impl CombinerConfig {
    pub fn new(id: CombinerId) -> Self {
        Self {
            id,
            weights: None,
            scope: Scope::default(),
            cagrad_c: defaults::cagrad_c(),
            gradnorm_alpha: defaults::gradnorm_alpha(),
            gradnorm_lr: defaults::gradnorm_lr(),
            dwa_temperature: defaults::dwa_temperature(),
            famo_lr: defaults::famo_lr(),
            famo_decay: defaults::famo_decay(),
            uw_lr: defaults::uw_lr(),
            fairgrad_alpha: defaults::fairgrad_alpha(),
            damping: defaults::damping(),
            eps_norm: defaults::eps_norm(),
            tol: defaults::tol(),
            max_iter: defaults::max_iter(),
        }
    }

    pub fn fixed(weights: Vec<f64>) -> Self {
        Self {
            weights: Some(weights),
            ..Self::new(CombinerId::Fixed)
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.id == CombinerId::Fixed {
            match &self.weights {
                None => return Err(Error::config("combiner 'fixed' needs `weights`")),
                Some(w) if w.len() != n_tasks => {
                    return Err(Error::config(format!("{} fixed weights for {n_tasks} tasks", w.len())))
                }
                Some(w) if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) => {
                    return Err(Error::config("fixed weights must be finite and >= 0"))
                }
                _ => {}
            }
        }
        let positive = [
            ("gradnorm_lr", self.gradnorm_lr),
            ("dwa_temperature", self.dwa_temperature),
            ("fairgrad_alpha", self.fairgrad_alpha),
            ("damping", self.damping),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("cagrad_c", self.cagrad_c),
            ("gradnorm_alpha", self.gradnorm_alpha),
            ("famo_lr", self.famo_lr),
            ("famo_decay", self.famo_decay),
            ("uw_lr", self.uw_lr),
            ("eps_norm", self.eps_norm),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.damping > 1.0 {
            return Err(Error::config("damping must be in (0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be positive"));
        }
        Ok(())
    }
}

/// Mutable per-method state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerState {
    Stateless,
    Uw(UwState),
    GradNorm(GradNormState),
    Dwa(DwaState),
    Famo(FamoState),
    /// RLW, PCGrad and GradDrop draw from their own stream.
    Random(Rng),
}

/// A configured combiner plus its state.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    config: CombinerConfig,
    state: CombinerState,
}

impl Combiner {
    pub fn new(config: CombinerConfig, n_tasks: usize, seed: u64) -> Result<Self> {
        config.validate(n_tasks)?;
        let state = match config.id {
            CombinerId::Uw => CombinerState::Uw(UwState::new(n_tasks, config.uw_lr)),
            CombinerId::GradNorm => CombinerState::GradNorm(GradNormState::new(
                n_tasks,
                config.gradnorm_alpha,
                config.gradnorm_lr,
                config.scope,
            )),
            CombinerId::Dwa => CombinerState::Dwa(DwaState::new(config.dwa_temperature)),
            CombinerId::Famo => CombinerState::Famo(FamoState::new(n_tasks, config.famo_lr, config.famo_decay)),
            CombinerId::Rlw | CombinerId::PcGrad | CombinerId::GradDrop => {
                CombinerState::Random(Rng::stream(seed, streams::COMBINER))
            }
            _ => CombinerState::Stateless,
        };
        Ok(Self { config, state })
    }

    pub fn id(&self) -> CombinerId {
        self.config.id
    }

    pub fn config(&self) -> &CombinerConfig {
        &self.config
    }

    pub fn state(&self) -> &CombinerState {
        &self.state
    }

    /// Whether [`Combiner::after_step`] needs the losses re-measured after the update.
    pub fn needs_post_step_losses(&self) -> bool {
        self.config.id == CombinerId::Famo
    }

    pub fn combine(&mut self, gs: &GradientSet) -> Result<CombineResult> {
        let cfg = &self.config;
        match (cfg.id, &mut self.state) {
            (CombinerId::Uniform, _) => combine_uniform(gs),
            (CombinerId::Fixed, _) => combine_fixed(gs, cfg.weights.as_deref().unwrap_or(&[])),
            (CombinerId::AvgNorm, _) => avgnorm_weights(gs, cfg.scope, cfg.eps_norm),
            (CombinerId::Uw, CombinerState::Uw(st)) => uw_step(gs, st),
            (CombinerId::GradNorm, CombinerState::GradNorm(st)) => gradnorm_step(gs, st),
            (CombinerId::Dwa, CombinerState::Dwa(st)) => dwa_weights(gs, st),
            (CombinerId::Rlw, CombinerState::Random(rng)) => rlw_weights(gs, rng),
            (CombinerId::Famo, CombinerState::Famo(st)) => famo_weights(gs, st),
            (CombinerId::Mgda, _) => mgda_weights(gs, cfg.solver_options()),
            (CombinerId::PcGrad, CombinerState::Random(rng)) => pcgrad_combine(gs, rng),
            (CombinerId::CaGrad, _) => cagrad_combine(gs, cfg.cagrad_c, cfg.solver_options()),
            (CombinerId::GradDrop, CombinerState::Random(rng)) => graddrop_combine(gs, rng),
            (CombinerId::Nash, _) => bargain_weights(gs, 1.0, cfg.damping, cfg.solver_options()),
            (CombinerId::FairGrad, _) => bargain_weights(gs, cfg.fairgrad_alpha, cfg.damping, cfg.solver_options()),
            (id, state) => Err(Error::config(format!("state {state:?} does not belong to combiner {id}"))),
        }
    }

    /// Hook run after the parameter update with the losses measured before
    /// and after it (FAMO's logit update).
    pub fn after_step(&mut self, before: &[f64], after: &[f64]) -> Result<()> {
        if let CombinerState::Famo(st) = &mut self.state {
            famo_update(st, before, after)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_through_strings() {
        for id in CombinerId::ALL {
            assert_eq!(id.as_str().parse::<CombinerId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
        assert!("nashmtl".parse::<CombinerId>().is_err());
    }

    #[test]
    fn fixed_requires_weights() {
        assert!(Combiner::new(CombinerConfig::new(CombinerId::Fixed), 2, 0).is_err());
        assert!(Combiner::new(CombinerConfig::fixed(vec![1.0]), 2, 0).is_err());
        assert!(Combiner::new(CombinerConfig::fixed(vec![1.0, 2.0]), 2, 0).is_ok());
    }

    #[test]
    fn every_combiner_runs_on_a_benign_set() {
        let gs = GradientSet::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.1, 1.0, 0.3]])
            .unwrap()
            .with_losses(vec![0.5, 2.0])
            .unwrap();
        for id in CombinerId::ALL {
            let cfg = if id == CombinerId::Fixed {
                CombinerConfig::fixed(vec![1.0, 1.0])
            } else {
                CombinerConfig::new(id)
            };
            let mut c = Combiner::new(cfg, 2, 1).unwrap();
            let r = c.combine(&gs).unwrap();
            assert_eq!(r.direction.len(), 3, "{id}");
            assert_eq!(r.weights.is_none(), id.is_direction_only(), "{id}");
            c.after_step(&[0.5, 2.0], &[0.4, 1.9]).unwrap();
        }
    }

    #[test]
    fn state_serializes() {
        let c = Combiner::new(CombinerConfig::new(CombinerId::Rlw), 3, 9).unwrap();
        let json = serde_json::to_string(c.state()).unwrap();
        let back: CombinerState = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, c.state());
    }
}
