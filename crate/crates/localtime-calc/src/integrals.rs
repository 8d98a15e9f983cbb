//! Partition sums along a single path: forward and backward Riemann sums,
//! their difference (the quadratic covariation), and the time-increment term.
//!
//! Request times snap down to the nearest grid point; all sums use
//! compensated accumulation.

use crate::error::Result;
use crate::numerics::KahanSum;
use crate::simulate::SamplePath;

/// Sum_{u <= t_i < t} f(X_i, t_i) (X_{i+1} - X_i) over the window [u, t).
pub fn forward_riemann_sum_window(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    u: f64,
    t: f64,
) -> Result<f64> {
    let lo = path.partition.snap_down(u)?;
    let hi = path.partition.snap_down(t)?;
    let times = path.times();
    let mut acc = KahanSum::new();
    for i in lo..hi {
        acc.add(f(path.values[i], times[i]) * (path.values[i + 1] - path.values[i]));
    }
    Ok(acc.value())
}

/// Left-endpoint Riemann sum approximating the forward integral
/// int_0^t f(X_s, s) dX_s.
pub fn forward_riemann_sum(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    t: f64,
) -> Result<f64> {
    forward_riemann_sum_window(f, path, 0.0, t)
}

pub fn backward_riemann_sum_window(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    u: f64,
    t: f64,
) -> Result<f64> {
    let lo = path.partition.snap_down(u)?;
    let hi = path.partition.snap_down(t)?;
    let times = path.times();
    let mut acc = KahanSum::new();
    for i in lo..hi {
        acc.add(f(path.values[i + 1], times[i + 1]) * (path.values[i + 1] - path.values[i]));
    }
    Ok(acc.value())
}

/// Right-endpoint Riemann sum approximating the backward integral
/// int_0^t f(X_s, s) d*X_s.
pub fn backward_riemann_sum(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    t: f64,
) -> Result<f64> {
    backward_riemann_sum_window(f, path, 0.0, t)
}

/// [f(X, .), X]_t realized as backward minus forward sum on the matched
/// partition, i.e. Sum (f(X_{i+1}, t_{i+1}) - f(X_i, t_i)) (X_{i+1} - X_i).
pub fn quadratic_covariation(
    f: impl Fn(f64, f64) -> f64 + Copy,
    path: &SamplePath,
    t: f64,
) -> Result<f64> {
    Ok(backward_riemann_sum(f, path, t)? - forward_riemann_sum(f, path, t)?)
}

/// The int_0^t F(X_s, ds) term with the frozen-space summand
/// Sum (F(X_i, t_{i+1}) - F(X_i, t_i)): time is incremented while space stays
/// at the left endpoint, so the sum estimates int ∂F/∂s ds rather than
/// telescoping.
pub fn time_increment_term(
    big_f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    t: f64,
) -> Result<f64> {
    let hi = path.partition.snap_down(t)?;
    let times = path.times();
    let mut acc = KahanSum::new();
    for i in 0..hi {
        acc.add(big_f(path.values[i], times[i + 1]) - big_f(path.values[i], times[i]));
    }
    Ok(acc.value())
}

/// Per-term series of the forward sum, for the diagnostics CSV dump
/// (columns i, t_i, x_i, term).
pub fn forward_sum_series(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    t: f64,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    let hi = path.partition.snap_down(t)?;
    let times = path.times();
    Ok((0..hi)
        .map(|i| {
            let term = f(path.values[i], times[i]) * (path.values[i + 1] - path.values[i]);
            (i, times[i], path.values[i], term)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DiffusionModel;
    use crate::numerics::mean_stderr;
    use crate::simulate::{make_partition, simulate_ensemble, euler_maruyama};

    fn bm_paths(n: u32, count: u64, seed: u64) -> Vec<crate::simulate::SamplePath> {
        simulate_ensemble(&DiffusionModel::brownian(), n, count, seed).unwrap()
    }

    #[test]
    fn forward_telescopes_for_unit_integrand() {
        for path in bm_paths(10, 20, 1) {
            for &t in &[0.25, 0.5, 1.0] {
                let idx = path.partition.snap_down(t).unwrap();
                let expect = path.values[idx] - path.values[0];
                let fwd = forward_riemann_sum(|_, _| 1.0, &path, t).unwrap();
                let bwd = backward_riemann_sum(|_, _| 1.0, &path, t).unwrap();
                assert!((fwd - expect).abs() < 1e-12);
                assert!((bwd - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let path = &bm_paths(8, 1, 2)[0];
        assert_eq!(forward_riemann_sum(|_, _| 0.0, path, 1.0).unwrap(), 0.0);
        assert_eq!(backward_riemann_sum(|_, _| 0.0, path, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_domain_time_rejected() {
        let path = &bm_paths(8, 1, 2)[0];
        assert!(forward_riemann_sum(|_, _| 1.0, path, 1.5).is_err());
        assert!(backward_riemann_sum(|_, _| 1.0, path, -0.1).is_err());
    }

    #[test]
    fn value_at_zero_is_zero() {
        let path = &bm_paths(8, 1, 3)[0];
        assert_eq!(forward_riemann_sum(|x, _| x, path, 0.0).unwrap(), 0.0);
        assert_eq!(time_increment_term(|_, s| s, path, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ito_correction_for_linear_integrand() {
        // E[X_1^2/2 - int X dX] = 1/2 for bm
        let paths = bm_paths(12, 2000, 4);
        let diffs: Vec<f64> = paths
            .iter()
            .map(|p| {
                let x1 = p.terminal();
                x1 * x1 / 2.0 - forward_riemann_sum(|x, _| x, p, 1.0).unwrap()
            })
            .collect();
        let (mean, _) = mean_stderr(&diffs);
        assert!((mean - 0.5).abs() < 0.015, "mean = {mean}");
    }

    #[test]
    fn backward_minus_forward_is_exact_rearrangement() {
        let path = &bm_paths(10, 1, 5)[0];
        let f = |x: f64, s: f64| (x + s).sin();
        let qc = quadratic_covariation(f, path, 1.0).unwrap();
        let times = path.times();
        let mut direct = crate::numerics::KahanSum::new();
        for i in 0..path.values.len() - 1 {
            let df = f(path.values[i + 1], times[i + 1]) - f(path.values[i], times[i]);
            direct.add(df * (path.values[i + 1] - path.values[i]));
        }
        assert!((qc - direct.value()).abs() < 1e-14);
    }

    #[test]
    fn quadratic_variation_of_bm() {
        let paths = bm_paths(12, 2000, 6);
        let qvs: Vec<f64> =
            paths.iter().map(|p| quadratic_covariation(|x, _| x, p, 1.0).unwrap()).collect();
        let (mean, _) = mean_stderr(&qvs);
        assert!((mean - 1.0).abs() < 0.03, "mean = {mean}");
    }

    #[test]
    fn constant_integrand_has_zero_covariation() {
        let path = &bm_paths(10, 1, 7)[0];
        assert_eq!(quadratic_covariation(|_, _| 2.5, path, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn covariation_matches_pathwise_oracle_for_smooth_f() {
        // [f(X,.), X]_t = int f_x(X_s, s) sigma^2 ds; for f = sin(x) on bm the
        // oracle is the pathwise quadrature of cos(X_s).
        let paths = bm_paths(12, 2000, 8);
        let gaps: Vec<f64> = paths
            .iter()
            .map(|p| {
                let qc = quadratic_covariation(|x, _| x.sin(), p, 1.0).unwrap();
                let dt = p.partition.mesh();
                let oracle: f64 = p.values[..p.values.len() - 1]
                    .iter()
                    .map(|&x| x.cos() * dt)
                    .sum();
                qc - oracle
            })
            .collect();
        let (mean, se) = mean_stderr(&gaps);
        assert!(mean.abs() < 3.0 * se.max(2e-3), "mean = {mean}, se = {se}");
    }

    #[test]
    fn covariation_error_shrinks_with_level() {
        // ensemble-mean error against the pathwise oracle at n = 8 vs n = 14
        let err_at = |n: u32| {
            let paths = bm_paths(n, 500, 9);
            let gaps: Vec<f64> = paths
                .iter()
                .map(|p| {
                    let qc = quadratic_covariation(|x, _| x.sin(), p, 1.0).unwrap();
                    let dt = p.partition.mesh();
                    let oracle: f64 = p.values[..p.values.len() - 1]
                        .iter()
                        .map(|&x| x.cos() * dt)
                        .sum();
                    (qc - oracle).abs()
                })
                .collect();
            gaps.iter().sum::<f64>() / gaps.len() as f64
        };
        assert!(err_at(14) < err_at(8));
    }

    #[test]
    fn time_increment_term_of_identity_in_time() {
        let path = &bm_paths(10, 1, 10)[0];
        let v = time_increment_term(|_, s| s, path, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v_half = time_increment_term(|_, s| s, path, 0.5).unwrap();
        assert!((v_half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn time_increment_term_of_time_independent_f_is_zero() {
        let path = &bm_paths(10, 1, 11)[0];
        assert_eq!(time_increment_term(|x, _| x * x, path, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn time_increment_term_matches_ds_oracle() {
        // F(x, s) = s x: the term estimates int_0^t X_s ds; oracle by
        // trapezoidal pathwise quadrature.
        let paths = bm_paths(12, 2000, 12);
        let gaps: Vec<f64> = paths
            .iter()
            .map(|p| {
                let v = time_increment_term(|x, s| s * x, p, 1.0).unwrap();
                let dt = p.partition.mesh();
                let mut oracle = 0.0;
                for i in 0..p.values.len() - 1 {
                    oracle += 0.5 * (p.values[i] + p.values[i + 1]) * dt;
                }
                v - oracle
            })
            .collect();
        let (mean, se) = mean_stderr(&gaps);
        assert!(mean.abs() < 2.0 * se.max(2e-3), "mean = {mean}, se = {se}");
    }

    #[test]
    fn window_additivity_is_exact() {
        let path = &bm_paths(10, 1, 13)[0];
        let f = |x: f64, s: f64| x * x + s;
        for &(u, t) in &[(0.25, 0.75), (0.5, 1.0)] {
            let whole = forward_riemann_sum(f, path, t).unwrap();
            let left = forward_riemann_sum(f, path, u).unwrap();
            let right = forward_riemann_sum_window(f, path, u, t).unwrap();
            assert!((whole - (left + right)).abs() < 1e-13);
            let wholeb = backward_riemann_sum(f, path, t).unwrap();
            let leftb = backward_riemann_sum(f, path, u).unwrap();
            let rightb = backward_riemann_sum_window(f, path, u, t).unwrap();
            assert!((wholeb - (leftb + rightb)).abs() < 1e-13);
        }
    }

    #[test]
    fn snapping_depends_only_on_grid_times() {
        let path = euler_maruyama(
            &DiffusionModel::brownian(),
            make_partition(4).unwrap(),
            14,
            0,
        )
        .unwrap();
        let a = forward_riemann_sum(|x, _| x, &path, 0.5).unwrap();
        let b = forward_riemann_sum(|x, _| x, &path, 0.53).unwrap();
        assert_eq!(a, b);
    }
}
