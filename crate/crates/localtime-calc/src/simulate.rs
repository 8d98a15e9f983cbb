//! Dyadic partitions of [0, 1] and Euler-Maruyama simulation with
//! deterministic, per-path seeded Gaussian increments.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 24;

/// State magnitude beyond which a trajectory is declared blown up. Lipschitz
/// coefficients cannot reach it on [0, 1] except through a bug.
pub const BLOWUP_LIMIT: f64 = 1e8;

/// Default ceiling on n_paths * 2^n total Euler steps per ensemble.
pub const DEFAULT_STEP_CAP: u128 = 1 << 33;

/// Step cap, overridable through the LOCALTIME_CALC_CAP environment variable.
pub fn step_cap() -> u128 {
    std::env::var("LOCALTIME_CALC_CAP")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_STEP_CAP)
}

/// Uniform dyadic partition {i 2^-n : i = 0..2^n} of [0, 1].
#[derive(Debug, Clone)]
pub struct Partition {
    level: u32,
    times: Vec<f64>,
}

impl Partition {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn mesh(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the last grid time <= t (request times snap down).
    pub fn snap_down(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        let i = (t / self.mesh()).floor() as usize;
        Ok(i.min(self.num_steps()))
    }
}

pub fn make_partition(n: u32) -> Result<Arc<Partition>> {
    if n > MAX_LEVEL {
        return Err(Error::Config(format!(
            "partition level {n} out of range 0..={MAX_LEVEL}"
        )));
    }
    let steps = 1usize << n;
    let mesh = 0.5f64.powi(n as i32);
    let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * mesh).collect();
    times[steps] = 1.0;
    Ok(Arc::new(Partition { level: n, times }))
}

/// One simulated trajectory with its Brownian increments retained.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub partition: Arc<Partition>,
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl SamplePath {
    pub fn times(&self) -> &[f64] {
        self.partition.times()
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Counter-based stream for one path: the master seed keys the generator and
/// the path index selects the stream, so paths can be generated in any order
/// (or in parallel) with identical results.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

fn gaussian_increments(partition: &Partition, seed: u64, path_index: u64) -> Vec<f64> {
    let mut rng = path_rng(seed, path_index);
    let sqrt_dt = partition.mesh().sqrt();
    (0..partition.num_steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sqrt_dt
        })
        .collect()
}

/// Euler step loop shared by fresh simulation and replay from given increments.
pub fn euler_from_increments(
    model: &DiffusionModel,
    partition: Arc<Partition>,
    increments: Vec<f64>,
    seed: u64,
    path_index: u64,
) -> Result<SamplePath> {
    assert_eq!(increments.len(), partition.num_steps());
    let times = partition.times();
    let mut values = Vec::with_capacity(times.len());
    let mut x = model.x0;
    values.push(x);
    let dt = partition.mesh();
    for (i, &dw) in increments.iter().enumerate() {
        let t = times[i];
        x += model.drift(t, x) * dt + model.sigma(t, x) * dw;
        if !x.is_finite() || x.abs() > BLOWUP_LIMIT {
            return Err(Error::Blowup {
                step: i,
                t: times[i + 1],
                limit: BLOWUP_LIMIT,
            });
        }
        values.push(x);
    }
    Ok(SamplePath {
        partition,
        values,
        increments,
        seed,
        path_index,
    })
}

/// X_{i+1} = X_i + b(t_i, X_i) dt + sigma(t_i, X_i) dW_i with seeded
/// N(0, dt) increments.
pub fn euler_maruyama(
    model: &DiffusionModel,
    partition: Arc<Partition>,
    seed: u64,
    path_index: u64,
) -> Result<SamplePath> {
    let increments = gaussian_increments(&partition, seed, path_index);
    euler_from_increments(model, partition, increments, seed, path_index)
}

/// Ensemble of paths with path_index 0..n_paths-1, generated in parallel.
/// The per-path seeding makes the result independent of execution order.
pub fn simulate_ensemble(
    model: &DiffusionModel,
    n: u32,
    n_paths: u64,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    if n_paths < 1 {
        return Err(Error::Config("n_paths must be at least 1".into()));
    }
    let partition = make_partition(n)?;
    let requested = n_paths as u128 * partition.num_steps() as u128;
    let cap = step_cap();
    if requested > cap {
        return Err(Error::ResourceCap { requested, cap });
    }
    (0..n_paths)
        .into_par_iter()
        .map(|i| euler_maruyama(model, partition.clone(), seed, i))
        .collect()
}

/// Map each path to a value, in parallel, preserving path order.
pub fn map_ensemble<T: Send>(
    paths: &[SamplePath],
    f: impl Fn(&SamplePath) -> T + Send + Sync,
) -> Vec<T> {
    paths.par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mean_stderr;

    #[test]
    fn partition_level_zero() {
        let p = make_partition(0).unwrap();
        assert_eq!(p.times(), &[0.0, 1.0]);
    }

    #[test]
    fn partition_level_two() {
        let p = make_partition(2).unwrap();
        assert_eq!(p.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn partition_mesh_halves() {
        assert_eq!(make_partition(10).unwrap().mesh(), 2.0f64.powi(-10));
        assert_eq!(
            make_partition(11).unwrap().mesh(),
            0.5 * make_partition(10).unwrap().mesh()
        );
    }

    #[test]
    fn partition_rejects_out_of_range() {
        assert!(matches!(make_partition(25), Err(Error::Config(_))));
    }

    #[test]
    fn frozen_dynamics_stay_at_x0() {
        use crate::diffusion::{CoefficientPair, DensityModel, DiffusionModel, EnvelopePair};
        use std::sync::Arc as SArc;
        let model = DiffusionModel {
            name: "frozen".into(),
            coefficients: CoefficientPair::new(|_, _| 0.0, |_, _| 0.0),
            x0: 1.5,
            density: DensityModel::AnalyticGaussian {
                mean: SArc::new(|_| 1.5),
                variance: SArc::new(|t| t),
            },
            envelopes: EnvelopePair::new(|_| 1.0, |_| 0.0),
        };
        let p = make_partition(6).unwrap();
        let path = euler_maruyama(&model, p, 1, 0).unwrap();
        assert!(path.values.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn bm_terminal_variance_near_one() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let paths = simulate_ensemble(&bm, 12, 10_000, 42).unwrap();
        let terminals: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
        let (mean, _) = mean_stderr(&terminals);
        let var = terminals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (terminals.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.03, "var = {var}");
    }

    #[test]
    fn ou_terminal_moments() {
        let ou = crate::diffusion::DiffusionModel::ornstein_uhlenbeck(1.0, 1.0);
        let paths = simulate_ensemble(&ou, 12, 10_000, 43).unwrap();
        let terminals: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
        let (mean, se) = mean_stderr(&terminals);
        assert!(mean.abs() < 3.0 * se, "mean = {mean}, se = {se}");
        let var = terminals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (terminals.len() - 1) as f64;
        let v1 = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((var - v1).abs() < 0.05 * v1, "var = {var}, v1 = {v1}");
    }

    #[test]
    fn determinism_bitwise() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let a = simulate_ensemble(&bm, 8, 16, 7).unwrap();
        let b = simulate_ensemble(&bm, 8, 16, 7).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.values, q.values);
            assert_eq!(p.increments, q.increments);
        }
    }

    #[test]
    fn singleton_ensemble_matches_euler() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let ens = simulate_ensemble(&bm, 8, 1, 5).unwrap();
        let single = euler_maruyama(&bm, make_partition(8).unwrap(), 5, 0).unwrap();
        assert_eq!(ens[0].values, single.values);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        // increments at matching steps across disjoint path indices
        let p = make_partition(6).unwrap();
        let n = 1000u64;
        let a: Vec<Vec<f64>> = (0..n).map(|i| gaussian_increments(&p, 99, i)).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|i| gaussian_increments(&p, 99, i + n)).collect();
        for step in [0usize, 31, 63] {
            let xs: Vec<f64> = a.iter().map(|v| v[step]).collect();
            let ys: Vec<f64> = b.iter().map(|v| v[step]).collect();
            let mx = xs.iter().sum::<f64>() / n as f64;
            let my = ys.iter().sum::<f64>() / n as f64;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
            let corr = cov / (vx * vy).sqrt();
            assert!(corr.abs() < 0.05, "step {step}: corr = {corr}");
        }
    }

    #[test]
    fn brownian_scaling_in_t() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let paths = simulate_ensemble(&bm, 12, 10_000, 11).unwrap();
        for &t in &[0.25, 0.5, 1.0] {
            let idx = paths[0].partition.snap_down(t).unwrap();
            let xs: Vec<f64> = paths.iter().map(|p| p.values[idx]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let var =
                xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var - t).abs() < 0.05 * t, "t = {t}, var = {var}");
        }
    }

    #[test]
    fn refinement_consistency_under_aggregated_increments() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let fine = make_partition(9).unwrap();
        let coarse = make_partition(8).unwrap();
        let fine_inc = gaussian_increments(&fine, 3, 0);
        let coarse_inc: Vec<f64> = fine_inc.chunks(2).map(|c| c[0] + c[1]).collect();
        let fine_path =
            euler_from_increments(&bm, fine.clone(), fine_inc, 3, 0).unwrap();
        let coarse_path =
            euler_from_increments(&bm, coarse.clone(), coarse_inc, 3, 0).unwrap();
        for i in 0..=coarse.num_steps() {
            // equal up to float non-associativity of the aggregated sums
            let (a, b) = (coarse_path.values[i], fine_path.values[2 * i]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn resource_cap_refuses() {
        let bm = crate::diffusion::DiffusionModel::brownian();
        let err = simulate_ensemble(&bm, 24, u64::MAX / 2, 1).unwrap_err();
        assert!(matches!(err, Error::ResourceCap { .. }));
    }

    #[test]
    fn blowup_reports_step() {
        use crate::diffusion::{CoefficientPair, DensityModel, DiffusionModel, EnvelopePair};
        use std::sync::Arc as SArc;
        let model = DiffusionModel {
            name: "explosive".into(),
            coefficients: CoefficientPair::new(|_, x| x * x * x, |_, _| 0.0),
            x0: 100.0,
            density: DensityModel::AnalyticGaussian {
                mean: SArc::new(|_| 0.0),
                variance: SArc::new(|t| t),
            },
            envelopes: EnvelopePair::new(|_| 1.0, |_| 1.0),
        };
        let err = euler_maruyama(&model, make_partition(10).unwrap(), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Blowup { .. }));
    }
}
