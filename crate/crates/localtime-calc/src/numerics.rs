//! Small numerical utilities shared across the crate: compensated summation,
//! quadrature with singular-endpoint handling, and sample statistics.

/// Neumaier-compensated accumulator. Partition sums can run to 2^24 terms
/// with heavy cancellation, so plain `f64` accumulation is not enough.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Adaptive Simpson quadrature on [a, b].
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40)
}

/// Midpoint rule with `points` uniform cells.
pub fn midpoint(f: &dyn Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    let h = (b - a) / points as f64;
    let mut acc = KahanSum::new();
    for i in 0..points {
        acc.add(f(a + (i as f64 + 0.5) * h));
    }
    acc.value() * h
}

/// Result of integrating a function with a possible power singularity at 0
/// over (0, 1]: quadrature on [delta, 1] plus a fitted power-law tail on
/// (0, delta).
#[derive(Debug, Clone, Copy)]
pub struct SingularIntegral {
    pub value: f64,
    /// Fitted local exponent alpha near 0, from g(t) ~ C t^alpha.
    pub exponent: f64,
    /// False when the fitted exponent signals a divergent tail (alpha <= -1).
    pub finite: bool,
}

/// Integrate g over (0, 1] where g may blow up like a power of t at 0.
/// The tail contribution on (0, delta) is extrapolated from the fitted
/// power law through g(delta) and g(2*delta).
pub fn integrate_power_singular(g: &dyn Fn(f64) -> f64, delta: f64, tol: f64) -> SingularIntegral {
    let g1 = g(delta);
    let g2 = g(2.0 * delta);
    let exponent = if g1 > 0.0 && g2 > 0.0 {
        (g1 / g2).ln() / (delta / (2.0 * delta)).ln()
    } else {
        0.0
    };
    if !exponent.is_finite() || exponent <= -1.0 {
        return SingularIntegral {
            value: f64::INFINITY,
            exponent,
            finite: false,
        };
    }
    let body = adaptive_simpson(g, delta, 1.0, tol);
    // tail: integral of C t^alpha on (0, delta) with C = g(delta) / delta^alpha
    let tail = if g1 > 0.0 {
        g1 * delta / (exponent + 1.0)
    } else {
        0.0
    };
    SingularIntegral {
        value: body + tail,
        exponent,
        finite: body.is_finite(),
    }
}

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F1(x) - F2(x)|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 1, "need at least two samples");
    let mean = kahan_sum(values.iter().copied()) / n as f64;
    let var =
        kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Sample standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let (_, se) = mean_stderr(values);
    se * (values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.total_cmp(y));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_handles_cancellation() {
        let mut acc = KahanSum::new();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn simpson_matches_polynomial() {
        let v = adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-10);
    }

    #[test]
    fn singular_integral_power_law() {
        // t^(-3/4) integrates to 4 on (0,1]
        let r = integrate_power_singular(&|t| t.powf(-0.75), 1e-4, 1e-10);
        assert!(r.finite);
        assert!((r.exponent + 0.75).abs() < 1e-6);
        assert!((r.value - 4.0).abs() < 1e-4);
    }

    #[test]
    fn singular_integral_detects_divergence() {
        let r = integrate_power_singular(&|t| 1.0 / t, 1e-4, 1e-10);
        assert!(!r.finite);
        assert!((r.exponent + 1.0).abs() < 1e-6);
    }

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
    }

    #[test]
    fn ks_disjoint_samples_is_one() {
        let a = [0.0, 1.0];
        let b = [10.0, 11.0];
        assert_eq!(ks_statistic(&a, &b), 1.0);
    }
}
