//! Time reversal: reversed-process coefficients, path reversal, and the
//! backward integral computed through the reversed semimartingale
//! decomposition.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionModel, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::KahanSum;
use crate::simulate::{make_partition, path_rng, SamplePath};

/// Coefficients of the reversed process X-bar_t = X_{1-t}:
/// sigma-bar(1-t, x) = sigma(t, x) and
/// b-bar(1-t, x) = -b(t, x) + (1/p_t(x)) d/dx(sigma^2(t, x) p_t(x)),
/// with (p)^{-1} = 0 where the density vanishes.
#[derive(Clone)]
pub struct ReversedModel {
    base: Arc<DiffusionModel>,
}

impl ReversedModel {
    pub fn base(&self) -> &DiffusionModel {
        &self.base
    }

    pub fn sigma_bar(&self, s: f64, x: f64) -> f64 {
        self.base.sigma(1.0 - s, x)
    }

    /// Undefined at s = 1 (the forward density at t = 0 is a point mass);
    /// reversed simulations stop one step short of it.
    pub fn b_bar(&self, s: f64, x: f64) -> Result<f64> {
        if s >= 1.0 {
            return Err(Error::GridMismatch(
                "reversed drift requested at s = 1; the grid must stop one step short".into(),
            ));
        }
        let t = 1.0 - s;
        let p = self.base.pdf(t, x)?;
        let correction = if p < DENSITY_FLOOR {
            0.0
        } else {
            self.base.weighted_density_derivative(t, x)? / p
        };
        Ok(-self.base.drift(t, x) + correction)
    }
}

pub fn reversed_coefficients(model: &Arc<DiffusionModel>) -> ReversedModel {
    ReversedModel {
        base: model.clone(),
    }
}

/// Value sequence of X-bar on the same grid: X-bar_{t_i} = X_{1 - t_i}.
pub fn reverse_path(path: &SamplePath) -> Vec<f64> {
    let mut v = path.values.clone();
    v.reverse();
    v
}

/// How the reversed driving increments are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReversalMode {
    /// Simulate X-bar as its own SDE with fresh increments (agreement with
    /// the forward picture is distributional only).
    Resimulate,
    /// Decompose an existing reversed path, inferring each driving increment
    /// as the residual (dX-bar - b-bar ds) / sigma-bar.
    Residual,
}

/// The three-term decomposition of the backward integral
/// int_0^t f(X_s, s) d*X_s through the reversed semimartingale.
#[derive(Debug, Clone, Copy)]
pub struct BackwardDecomposition {
    /// int f(X-bar, 1-s) b(1-s, X-bar) ds
    pub drift_term: f64,
    /// -int f(X-bar, 1-s) (1/p) d/dx(sigma^2 p) ds
    pub correction_term: f64,
    /// -int f(X-bar, 1-s) sigma(1-s, X-bar) dW-bar
    pub martingale_term: f64,
    /// The backward integral: sum of the three terms.
    pub value: f64,
}

/// Backward integral of f over [0, t] computed on the reversed grid.
///
/// In residual mode the reversed path is the given forward path read
/// backwards and the driving increments are inferred step by step. In
/// resimulate mode a fresh reversed trajectory is generated from the
/// reversed SDE (seeded from the forward path's identity), so the result
/// matches the forward picture in distribution, not pathwise.
pub fn backward_integral_decomposed(
    f: impl Fn(f64, f64) -> f64,
    rev: &ReversedModel,
    path: &SamplePath,
    t: f64,
    mode: ReversalMode,
) -> Result<BackwardDecomposition> {
    let (values, increments) = match mode {
        ReversalMode::Residual => (reverse_path(path), None),
        ReversalMode::Resimulate => {
            let (v, dw) = simulate_reversed_path(
                rev,
                path.partition.level(),
                path.seed ^ REVERSAL_SEED_SALT,
                path.path_index,
            )?;
            (v, Some(dw))
        }
    };
    let times = path.times();
    let steps = path.partition.num_steps();
    let lo = steps - path.partition.snap_down(t)?;
    let ds = path.partition.mesh();

    let mut drift = KahanSum::new();
    let mut correction = KahanSum::new();
    let mut martingale = KahanSum::new();
    for i in lo..steps {
        let s = times[i];
        let x = values[i];
        let fv = f(x, 1.0 - s);
        let b = rev.base.drift(1.0 - s, x);
        let p = rev.base.pdf(1.0 - s, x)?;
        let corr = if p < DENSITY_FLOOR {
            0.0
        } else {
            rev.base.weighted_density_derivative(1.0 - s, x)? / p
        };
        let sig = rev.sigma_bar(s, x);
        let b_bar = -b + corr;
        let dxbar = values[i + 1] - values[i];
        let dw = match &increments {
            Some(dw) => dw[i],
            None => {
                if sig.abs() < 1e-14 {
                    0.0
                } else {
                    (dxbar - b_bar * ds) / sig
                }
            }
        };
        drift.add(fv * b * ds);
        correction.add(-fv * corr * ds);
        martingale.add(-fv * sig * dw);
    }
    let d = drift.value();
    let c = correction.value();
    let m = martingale.value();
    Ok(BackwardDecomposition {
        drift_term: d,
        correction_term: c,
        martingale_term: m,
        value: d + c + m,
    })
}

fn simulate_reversed_path(
    rev: &ReversedModel,
    n: u32,
    seed: u64,
    path_index: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let partition = make_partition(n)?;
    let times = partition.times();
    let steps = partition.num_steps();
    let ds = partition.mesh();
    let sqrt_ds = ds.sqrt();
    let mut rng = path_rng(seed, path_index);
    // X-bar_0 = X_1 has density p_1; the shipped models are Gaussian there.
    let x0 = sample_terminal(rev.base(), &mut rng)?;
    let mut values = Vec::with_capacity(times.len());
    let mut increments = Vec::with_capacity(steps);
    values.push(x0);
    let mut x = x0;
    // stop one step short of s = 1 where b-bar is singular, then pin X-bar_1
    for i in 0..steps - 1 {
        let s = times[i];
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = z * sqrt_ds;
        x += rev.b_bar(s, x)? * ds + rev.sigma_bar(s, x) * dw;
        if !x.is_finite() {
            return Err(Error::Blowup {
                step: i,
                t: times[i + 1],
                limit: f64::INFINITY,
            });
        }
        values.push(x);
        increments.push(dw);
    }
    // the reversed bridge collapses to the deterministic start point
    values.push(rev.base.x0);
    increments.push(0.0);
    Ok((values, increments))
}

fn sample_terminal(model: &DiffusionModel, rng: &mut impl Rng) -> Result<f64> {
    match &model.density {
        crate::diffusion::DensityModel::AnalyticGaussian { mean, variance } => {
            let z: f64 = StandardNormal.sample(rng);
            Ok(mean(1.0) + variance(1.0).sqrt() * z)
        }
        crate::diffusion::DensityModel::Kernel(_) => Err(Error::Config(
            "resimulation of the reversed process needs an analytic terminal density".into(),
        )),
    }
}

/// Fresh reversed trajectories (values on the grid), for distributional
/// comparison against the forward ensemble.
pub fn simulate_reversed_ensemble(
    rev: &ReversedModel,
    n: u32,
    n_paths: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_reversed_path(rev, n, seed, i).map(|(v, _)| v))
        .collect()
}

/// Keeps resimulated reversed streams disjoint from the forward streams
/// that share the same master seed.
const REVERSAL_SEED_SALT: u64 = 0x7265_7665_7273_6564;
