//! Strict JSON experiment configuration.

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::reversal::ReversalMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub simulation: SimulationSpec,
    pub grid: GridSpec,
    pub experiment: ExperimentKind,
    /// Integrand / test-function key, e.g. "x", "sgn", "elementary",
    /// "linear", "quadratic", "abs", "call(0.2)", "t_sin", "one".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversal_mode: Option<ReversalMode>,
    /// Evaluation time for pathwise experiments.
    #[serde(default = "default_t")]
    pub t: f64,
}

fn default_t() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Bm,
    Ou { theta: f64, sigma: f64 },
}

impl ModelSpec {
    pub fn build(&self) -> Result<DiffusionModel> {
        match *self {
            ModelSpec::Bm => Ok(DiffusionModel::brownian()),
            ModelSpec::Ou { theta, sigma } => {
                if !theta.is_finite() || !sigma.is_finite() || sigma <= 0.0 || theta <= 0.0 {
                    return Err(Error::Config(
                        "ou parameters must be finite and positive".into(),
                    ));
                }
                Ok(DiffusionModel::ornstein_uhlenbeck(theta, sigma))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Dyadic partition level: 2^n steps.
    pub n: u32,
    pub n_paths: u64,
    /// Mandatory: there is no wall-clock default.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    /// Occupation bandwidth.
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Theorem32,
    Ito,
    Tanaka,
    Reversal,
    Norms,
    Envelopes,
    Covariation,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Theorem32 => "theorem32",
            ExperimentKind::Ito => "ito",
            ExperimentKind::Tanaka => "tanaka",
            ExperimentKind::Reversal => "reversal",
            ExperimentKind::Norms => "norms",
            ExperimentKind::Envelopes => "envelopes",
            ExperimentKind::Covariation => "covariation",
        }
    }
}

/// Sweep over exactly one scalar field; one report row per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        for (name, v) in [
            ("x_min", g.x_min),
            ("x_max", g.x_max),
            ("dx", g.dx),
            ("epsilon", g.epsilon),
            ("t", self.t),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if g.x_min >= g.x_max {
            return Err(Error::Config("x_min must be below x_max".into()));
        }
        if g.dx <= 0.0 {
            return Err(Error::Config("dx must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::Config("t must lie in [0, 1]".into()));
        }
        if let Some(sweep) = &self.sweep {
            let set = [
                sweep.n.is_some(),
                sweep.n_paths.is_some(),
                sweep.epsilon.is_some(),
                sweep.t.is_some(),
            ];
            if set.iter().filter(|&&b| b).count() > 1 {
                return Err(Error::Config("sweep over at most one field".into()));
            }
        }
        Ok(())
    }

    /// Expand the sweep into per-row effective (n, n_paths, epsilon, t).
    pub fn sweep_points(&self) -> Vec<(u32, u64, f64, f64)> {
        let base = (
            self.simulation.n,
            self.simulation.n_paths,
            self.grid.epsilon,
            self.t,
        );
        match &self.sweep {
            None => vec![base],
            Some(sweep) => {
                if let Some(ns) = &sweep.n {
                    ns.iter().map(|&n| (n, base.1, base.2, base.3)).collect()
                } else if let Some(ps) = &sweep.n_paths {
                    ps.iter().map(|&p| (base.0, p, base.2, base.3)).collect()
                } else if let Some(es) = &sweep.epsilon {
                    es.iter().map(|&e| (base.0, base.1, e, base.3)).collect()
                } else if let Some(ts) = &sweep.t {
                    ts.iter().map(|&t| (base.0, base.1, base.2, t)).collect()
                } else {
                    vec![base]
                }
            }
        }
    }
}
