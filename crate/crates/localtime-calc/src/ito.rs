//! Change-of-variable machinery: test functions with weak derivatives,
//! mollification by a bump kernel, the extended Itô residual (including
//! Tanaka-type non-smooth cases), and the mollified convergence study.

use std::sync::Arc;

use crate::diffusion::{envelope_r, DiffusionModel};
use crate::error::{Error, Result};
use crate::integrals::forward_riemann_sum;
use crate::localtime::{
    seminorm_star, timespace_integral, timespace_integral_adapted, LocalTimeField,
    QuadratureSpec, TimeSpaceFunction,
};
use crate::numerics::{adaptive_simpson, midpoint, KahanSum};
use crate::simulate::SamplePath;

type Field2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// F(x, t) on a support box [x_min, x_max] x [0, 1], with first-order
/// Radon-Nikodym derivatives in x and t and an optional classical second
/// x-derivative for the smooth consistency check.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Field2,
    pub fx: Field2,
    pub ft: Field2,
    pub fxx: Option<Field2>,
    /// Support box in x; time support is always [0, 1].
    pub support: (f64, f64),
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        fx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        ft: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            fx: Arc::new(fx),
            ft: Arc::new(ft),
            fxx: None,
            support,
        }
    }

    pub fn with_fxx(mut self, fxx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.fxx = Some(Arc::new(fxx));
        self
    }

    pub fn linear() -> Self {
        Self::new("linear", |x, _| x, |_, _| 1.0, |_, _| 0.0, (-8.0, 8.0)).with_fxx(|_, _| 0.0)
    }

    pub fn quadratic() -> Self {
        Self::new(
            "quadratic",
            |x, _| 0.5 * x * x,
            |x, _| x,
            |_, _| 0.0,
            (-8.0, 8.0),
        )
        .with_fxx(|_, _| 1.0)
    }

    pub fn abs() -> Self {
        Self::new(
            "abs",
            |x: f64, _| x.abs(),
            |x: f64, _| x.signum(),
            |_, _| 0.0,
            (-8.0, 8.0),
        )
    }

    pub fn call(strike: f64) -> Self {
        Self::new(
            format!("call({strike})"),
            move |x, _| (x - strike).max(0.0),
            move |x, _| if x > strike { 1.0 } else { 0.0 },
            |_, _| 0.0,
            (-8.0, 8.0),
        )
    }

    pub fn t_sin() -> Self {
        Self::new(
            "t_sin",
            |x: f64, t| t * x.sin(),
            |x: f64, t| t * x.cos(),
            |x: f64, _| x.sin(),
            (-8.0, 8.0),
        )
        .with_fxx(|x: f64, t| -t * x.sin())
    }

    /// F extended by zero outside the support box, for convolution.
    fn eval_extended(&self, x: f64, t: f64) -> f64 {
        if x < self.support.0 || x > self.support.1 {
            0.0
        } else {
            (self.f)(x, t)
        }
    }
}

/// Absolute-continuity diagnostic: F(x, t) - F(y, t) vs the quadrature of
/// Fx over [y, x], on sampled segments. Returns the largest gap.
pub fn absolute_continuity_gap(f: &TestFunction, segments: &[(f64, f64, f64)]) -> f64 {
    let mut worst: f64 = 0.0;
    for &(y, x, t) in segments {
        let direct = (f.f)(x, t) - (f.f)(y, t);
        let integral = adaptive_simpson(&|u| (f.fx)(u, t), y, x, 1e-10);
        worst = worst.max((direct - integral).abs());
    }
    worst
}

/// Normalized smooth bump supported on [-1, 1], rescaled to g_n(s) = n g(ns).
#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    pub n: u32,
    norm: f64,
}

impl Mollifier {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("mollifier scale must be positive".into()));
        }
        // integral of exp(-1/(1-s^2)) over [-1, 1]
        let mass = adaptive_simpson(&|s| bump_raw(s), -1.0, 1.0, 1e-12);
        Ok(Self { n, norm: 1.0 / mass })
    }

    pub fn g(&self, s: f64) -> f64 {
        self.norm * bump_raw(s)
    }

    /// g'(s) = g(s) * w'(s) with w = -1/(1-s^2).
    pub fn g_prime(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s * s;
        self.g(s) * (-2.0 * s / (d * d))
    }

    pub fn g_second(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s * s;
        let w1 = -2.0 * s / (d * d);
        let w2 = -2.0 / (d * d) - 8.0 * s * s / (d * d * d);
        self.g(s) * (w2 + w1 * w1)
    }

    pub fn gn(&self, s: f64) -> f64 {
        let n = self.n as f64;
        n * self.g(n * s)
    }

    pub fn gn_prime(&self, s: f64) -> f64 {
        let n = self.n as f64;
        n * n * self.g_prime(n * s)
    }

    pub fn gn_second(&self, s: f64) -> f64 {
        let n = self.n as f64;
        n * n * n * self.g_second(n * s)
    }
}

fn bump_raw(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Quadrature points per kernel axis for the convolutions.
const MOLLIFY_POINTS: usize = 48;

/// F_n(x, t) = int int F(y, s) g_n(t - s) g_n(x - y) dy ds, with F extended
/// by zero outside its box and the s-window clamped into [0, 1] (boundary
/// bias is confined to a 1/n collar). Derivatives fall on the kernel.
pub fn mollify(f: &TestFunction, moll: &Mollifier) -> TestFunction {
    let width = 1.0 / moll.n as f64;
    let convolve = move |f: &TestFunction,
                         moll: &Mollifier,
                         x: f64,
                         t: f64,
                         kx: &dyn Fn(&Mollifier, f64) -> f64,
                         kt: &dyn Fn(&Mollifier, f64) -> f64|
          -> f64 {
        let (s_lo, s_hi) = ((t - width).max(0.0), (t + width).min(1.0));
        if s_hi <= s_lo {
            return 0.0;
        }
        midpoint(
            &|s| {
                let wt = kt(moll, t - s);
                if wt == 0.0 {
                    return 0.0;
                }
                wt * midpoint(
                    &|y| f.eval_extended(y, s) * kx(moll, x - y),
                    x - width,
                    x + width,
                    MOLLIFY_POINTS,
                )
            },
            s_lo,
            s_hi,
            MOLLIFY_POINTS,
        )
    };
    let (fa, fb, fc, fd) = (f.clone(), f.clone(), f.clone(), f.clone());
    let (ma, mb, mc, md) = (*moll, *moll, *moll, *moll);
    TestFunction {
        name: format!("{}_mollified_{}", f.name, moll.n),
        f: Arc::new(move |x, t| convolve(&fa, &ma, x, t, &Mollifier::gn, &Mollifier::gn)),
        fx: Arc::new(move |x, t| convolve(&fb, &mb, x, t, &Mollifier::gn_prime, &Mollifier::gn)),
        ft: Arc::new(move |x, t| convolve(&fc, &mc, x, t, &Mollifier::gn, &Mollifier::gn_prime)),
        fxx: Some(Arc::new(move |x, t| {
            convolve(&fd, &md, x, t, &Mollifier::gn_second, &Mollifier::gn)
        })),
        support: (f.support.0 - width, f.support.1 + width),
    }
}

/// Result of the integrability diagnostics required by the extended
/// change-of-variable formula.
#[derive(Debug, Clone, Copy)]
pub struct IntegrabilityDiagnostics {
    /// int_0^1 int |Ft| dx r(s) ds
    pub ft_integral: f64,
    /// int_0^1 int Fx^2 dx r(s) ds
    pub fx_sq_integral: f64,
    pub finite: bool,
}

/// Double integral of h(x, s) over the box times (0, 1] weighted by r(s),
/// with x-refinement divergence detection and a power-law end correction in s.
fn weighted_double_integral(
    h: &dyn Fn(f64, f64) -> f64,
    support: (f64, f64),
    r: &dyn Fn(f64) -> f64,
) -> f64 {
    let (lo, hi) = support;
    let inner = |s: f64, points: usize| midpoint(&|x| h(x, s), lo, hi, points);
    // refinement ladder at a bulk time to detect an x-singularity: a finite
    // integrand settles, a non-integrable power keeps growing geometrically
    let probe: Vec<f64> = [200usize, 400, 800].iter().map(|&m| inner(0.5, m)).collect();
    if probe[0].abs() > 1e-300 {
        let r1 = probe[1] / probe[0];
        let r2 = probe[2] / probe[1];
        if r1 > 1.2 && r2 > 1.2 {
            return f64::INFINITY;
        }
    }
    let g = |s: f64| inner(s, 400) * r(s);
    let delta = 1e-4;
    let g1 = g(delta);
    let g2 = g(2.0 * delta);
    let body = midpoint(&g, delta, 1.0, 400);
    if g1 <= 0.0 {
        return body;
    }
    let exponent = if g2 > 0.0 {
        (g1 / g2).ln() / 0.5f64.ln()
    } else {
        0.0
    };
    if !exponent.is_finite() || exponent <= -1.0 {
        return f64::INFINITY;
    }
    body + g1 * delta / (exponent + 1.0)
}

/// Check the residual's integrability hypotheses against the model's
/// envelope r(s).
pub fn integrability_diagnostics(
    f: &TestFunction,
    model: &DiffusionModel,
) -> Result<IntegrabilityDiagnostics> {
    let r = |s: f64| envelope_r(model, s).unwrap_or(f64::INFINITY);
    if !r(1.0).is_finite() || r(1.0) <= 0.0 {
        return Err(Error::HypothesisViolation(
            "density envelope r(1) must be finite and positive".into(),
        ));
    }
    let ft_integral =
        weighted_double_integral(&|x, s| (f.ft)(x, s).abs(), f.support, &r);
    let fx_sq_integral = weighted_double_integral(
        &|x, s| {
            let v = (f.fx)(x, s);
            v * v
        },
        f.support,
        &r,
    );
    Ok(IntegrabilityDiagnostics {
        ft_integral,
        fx_sq_integral,
        finite: ft_integral.is_finite() && fx_sq_integral.is_finite(),
    })
}

fn require_integrable(f: &TestFunction, model: &DiffusionModel) -> Result<()> {
    let diag = integrability_diagnostics(f, model)?;
    if !diag.ft_integral.is_finite() {
        return Err(Error::HypothesisViolation(format!(
            "time-derivative integral of {} diverges against r(s)",
            f.name
        )));
    }
    if !diag.fx_sq_integral.is_finite() {
        return Err(Error::HypothesisViolation(format!(
            "squared space-derivative integral of {} diverges against r(s)",
            f.name
        )));
    }
    Ok(())
}

/// Left-endpoint pathwise quadrature of int_0^t h(X_s, s) ds.
fn pathwise_ds(h: &dyn Fn(f64, f64) -> f64, path: &SamplePath, t: f64) -> Result<f64> {
    let hi = path.partition.snap_down(t)?;
    let dt = path.partition.mesh();
    let times = path.times();
    let mut acc = KahanSum::new();
    for i in 0..hi {
        acc.add(h(path.values[i], times[i]) * dt);
    }
    Ok(acc.value())
}

/// Extended change-of-variable residual
/// F(X_t, t) - F(X_0, 0) - int Fx dX - int Ft ds + 1/2 int int Fx dL,
/// zero in the continuum limit. The dX integral is the forward sum, the ds
/// integral is left-endpoint quadrature, and the dL term is integrated
/// against the supplied field, or by the path-adapted construction when no
/// field is given.
pub fn ito_residual(
    f: &TestFunction,
    model: &DiffusionModel,
    path: &SamplePath,
    field: Option<&LocalTimeField>,
    t: f64,
) -> Result<f64> {
    require_integrable(f, model)?;
    ito_residual_unchecked(f, path, field, t)
}

/// Residual without the integrability diagnostics, for tight loops where the
/// diagnostics have already been run once for the function.
pub fn ito_residual_unchecked(
    f: &TestFunction,
    path: &SamplePath,
    field: Option<&LocalTimeField>,
    t: f64,
) -> Result<f64> {
    let idx = path.partition.snap_down(t)?;
    let t_snap = path.times()[idx];
    let x_t = path.values[idx];
    let fx = f.fx.clone();
    let dl = match field {
        Some(field) => {
            let wrapped = TimeSpaceFunction::new(move |x, s| fx(x, s), f.support);
            timespace_integral(&wrapped, field, t)?
        }
        None => timespace_integral_adapted(|x, s| fx(x, s), path, t)?,
    };
    Ok((f.f)(x_t, t_snap) - (f.f)(path.values[0], 0.0)
        - forward_riemann_sum(|x, s| (f.fx)(x, s), path, t)?
        - pathwise_ds(&|x, s| (f.ft)(x, s), path, t)?
        + 0.5 * dl)
}

/// Residual of the formula restricted to the window [eps, t]:
/// F(X_t, t) - F(X_eps, eps) minus the windowed integrals.
pub fn ito_residual_window(
    f: &TestFunction,
    path: &SamplePath,
    eps: f64,
    t: f64,
) -> Result<f64> {
    let hi = path.partition.snap_down(t)?;
    let lo = path.partition.snap_down(eps)?;
    let times = path.times();
    let dt = path.partition.mesh();
    let mut fwd = KahanSum::new();
    let mut ds = KahanSum::new();
    let mut dl = KahanSum::new();
    for i in lo..hi {
        fwd.add((f.fx)(path.values[i], times[i]) * (path.values[i + 1] - path.values[i]));
        ds.add((f.ft)(path.values[i], times[i]) * dt);
        let dx = path.values[i + 1] - path.values[i];
        dl.add(-dx * ((f.fx)(path.values[i + 1], times[i + 1])
            - (f.fx)(path.values[i], times[i + 1])));
    }
    Ok((f.f)(path.values[hi], times[hi]) - (f.f)(path.values[lo], times[lo])
        - fwd.value()
        - ds.value()
        + 0.5 * dl.value())
}

/// Two estimators of the same quantity for C^2 functions: the dL term
/// int int Fx dL and the pathwise -int Fxx sigma^2 ds.
#[derive(Debug, Clone, Copy)]
pub struct SmoothConsistency {
    pub dl_term: f64,
    pub fxx_term: f64,
    pub gap: f64,
}

pub fn smooth_consistency_check(
    f: &TestFunction,
    model: &DiffusionModel,
    path: &SamplePath,
    field: Option<&LocalTimeField>,
    t: f64,
) -> Result<SmoothConsistency> {
    let fxx = f
        .fxx
        .clone()
        .ok_or_else(|| Error::Domain(format!("{} has no second derivative", f.name)))?;
    let fx = f.fx.clone();
    let dl_term = match field {
        Some(field) => {
            let wrapped = TimeSpaceFunction::new(move |x, s| fx(x, s), f.support);
            timespace_integral(&wrapped, field, t)?
        }
        None => timespace_integral_adapted(|x, s| (f.fx)(x, s), path, t)?,
    };
    let fxx_term = -pathwise_ds(
        &|x, s| {
            let sg = model.sigma(s, x);
            fxx(x, s) * sg * sg
        },
        path,
        t,
    )?;
    Ok(SmoothConsistency {
        dl_term,
        fxx_term,
        gap: dl_term - fxx_term,
    })
}

/// One row of the mollified convergence study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub scale: u32,
    /// ensemble-mean L^1 gap of the drift-weighted mollified derivative
    pub drift_gap: f64,
    /// ensemble L^2 gap of the sigma-weighted mollified derivative
    pub martingale_gap: f64,
    /// seminorm gap of (Fx_n - Fx) restricted to s in (eps, t)
    pub seminorm_gap: f64,
}

/// Run the three convergence claims along the mollifier ladder. Pathwise
/// comparisons exclude a time collar of width 1/min(ladder) at both ends,
/// where the clamped time convolution is biased; the same collar is used for
/// every ladder point so the rows are comparable.
pub fn mollified_convergence_study(
    f: &TestFunction,
    model: &DiffusionModel,
    paths: &[SamplePath],
    ladder: &[u32],
    eps: f64,
) -> Result<Vec<ConvergenceRow>> {
    if ladder.is_empty() {
        return Err(Error::Config("mollifier ladder must be non-empty".into()));
    }
    let collar = 1.0 / *ladder.iter().min().unwrap() as f64;
    let quad = QuadratureSpec {
        x_points: 200,
        s_points: 50,
        delta: 1e-3,
    };
    let mut rows = Vec::with_capacity(ladder.len());
    for &scale in ladder {
        let moll = Mollifier::new(scale)?;
        let smooth = mollify(f, &moll);
        let mut l1 = KahanSum::new();
        let mut l2 = KahanSum::new();
        for path in paths {
            let dt = path.partition.mesh();
            let times = path.times();
            for i in 0..path.partition.num_steps() {
                let s = times[i];
                if s < collar || s > 1.0 - collar {
                    continue;
                }
                let x = path.values[i];
                let gap = (smooth.fx)(x, s) - (f.fx)(x, s);
                let b = model.drift(s, x);
                let sg = model.sigma(s, x);
                l1.add((b * gap).abs() * dt);
                l2.add(sg * sg * gap * gap * dt);
            }
        }
        let inv = 1.0 / paths.len() as f64;
        let lo = eps.max(collar);
        let hi = 1.0 - collar;
        let sfx = smooth.fx.clone();
        let ffx = f.fx.clone();
        let diff = TimeSpaceFunction::new(
            move |x, s| {
                if s > lo && s < hi {
                    sfx(x, s) - ffx(x, s)
                } else {
                    0.0
                }
            },
            f.support,
        );
        rows.push(ConvergenceRow {
            scale,
            drift_gap: l1.value() * inv,
            martingale_gap: (l2.value() * inv).sqrt(),
            seminorm_gap: seminorm_star(&diff, model, &quad),
        });
    }
    Ok(rows)
}
