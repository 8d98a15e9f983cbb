//! Diffusion models: coefficients, marginal densities, envelope functions and
//! the hypothesis checks they must satisfy before any of the local-time
//! machinery is trusted.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{
    adaptive_simpson, integrate_power_singular, normal_pdf, SingularIntegral,
};

/// A time-space coefficient field g(t, x).
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Densities below this floor are treated as zero under the convention
/// (p_t(x))^{-1} = 0 when p_t(x) = 0.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Drift b and dispersion sigma of dX = b dt + sigma dW.
#[derive(Clone)]
pub struct CoefficientPair {
    pub drift: Coefficient,
    pub dispersion: Coefficient,
}

impl CoefficientPair {
    pub fn new(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dispersion: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Arc::new(drift),
            dispersion: Arc::new(dispersion),
        }
    }

    pub fn b(&self, t: f64, x: f64) -> f64 {
        (self.drift)(t, x)
    }

    pub fn sigma(&self, t: f64, x: f64) -> f64 {
        (self.dispersion)(t, x)
    }
}

/// Gaussian-kernel density estimate built from one ensemble of samples.
#[derive(Clone)]
pub struct KernelDensity {
    samples: Arc<Vec<f64>>,
    bandwidth: f64,
}

impl KernelDensity {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let n = self.samples.len() as f64;
        let mut s = 0.0;
        for &xi in self.samples.iter() {
            let z = (x - xi) / h;
            s += (-0.5 * z * z).exp();
        }
        s / (n * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Analytic derivative of the kernel sum.
    pub fn dpdf_dx(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let n = self.samples.len() as f64;
        let mut s = 0.0;
        for &xi in self.samples.iter() {
            let z = (x - xi) / h;
            s += -z / h * (-0.5 * z * z).exp();
        }
        s / (n * h * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Kernel density estimate from an ensemble of marginal samples.
/// Refuses fewer than 1000 samples; the derivative evaluator below would be
/// far too noisy.
pub fn kernel_density_estimate(samples: &[f64], bandwidth: f64) -> Result<KernelDensity> {
    if samples.len() < 1000 {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: 1000,
        });
    }
    if bandwidth <= 0.0 {
        return Err(Error::Domain(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(KernelDensity {
        samples: Arc::new(samples.to_vec()),
        bandwidth,
    })
}

/// Kernel densities at a set of times; lookups snap to the nearest time.
#[derive(Clone)]
pub struct KernelFamily {
    pub times: Vec<f64>,
    pub slices: Vec<KernelDensity>,
}

impl KernelFamily {
    fn slice_at(&self, t: f64) -> &KernelDensity {
        let mut best = 0;
        let mut gap = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            let g = (ti - t).abs();
            if g < gap {
                gap = g;
                best = i;
            }
        }
        &self.slices[best]
    }
}

/// Marginal density evaluator p_t(x) of the diffusion started at x0.
#[derive(Clone)]
pub enum DensityModel {
    AnalyticGaussian {
        mean: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        variance: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
    Kernel(KernelFamily),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    AnalyticGaussian,
    KernelEstimated,
}

impl DensityModel {
    pub fn kind(&self) -> DensityKind {
        match self {
            DensityModel::AnalyticGaussian { .. } => DensityKind::AnalyticGaussian,
            DensityModel::Kernel(_) => DensityKind::KernelEstimated,
        }
    }

    pub fn pdf(&self, t: f64, x: f64) -> Result<f64> {
        if t <= 0.0 {
            return Err(Error::Domain(format!("density requires t > 0, got {t}")));
        }
        Ok(match self {
            DensityModel::AnalyticGaussian { mean, variance } => {
                normal_pdf(x, mean(t), variance(t))
            }
            DensityModel::Kernel(f) => f.slice_at(t).pdf(x),
        })
    }

    pub fn dpdf_dx(&self, t: f64, x: f64) -> Result<f64> {
        if t <= 0.0 {
            return Err(Error::Domain(format!("density requires t > 0, got {t}")));
        }
        Ok(match self {
            DensityModel::AnalyticGaussian { mean, variance } => {
                let v = variance(t);
                -(x - mean(t)) / v * normal_pdf(x, mean(t), v)
            }
            DensityModel::Kernel(f) => f.slice_at(t).dpdf_dx(x),
        })
    }
}

/// Envelopes r(t) >= sup_x p_t(x) and u(t) bounding the weighted L^2 norm of
/// d/dx(sigma^2 p_t).
#[derive(Clone)]
pub struct EnvelopePair {
    pub r: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub u: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl EnvelopePair {
    pub fn new(
        r: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            r: Arc::new(r),
            u: Arc::new(u),
        }
    }
}

/// A one-dimensional diffusion started at the deterministic point x0.
#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub coefficients: CoefficientPair,
    pub x0: f64,
    pub density: DensityModel,
    pub envelopes: EnvelopePair,
}

impl DiffusionModel {
    /// Standard Brownian motion from 0: b = 0, sigma = 1, p_t = N(0, t).
    pub fn brownian() -> Self {
        let density = DensityModel::AnalyticGaussian {
            mean: Arc::new(|_| 0.0),
            variance: Arc::new(|t| t),
        };
        // r(t) = (2 pi t)^(-1/2); u(t) = t^(-1/2) from the Gaussian second moment.
        let envelopes = EnvelopePair::new(
            |t: f64| (2.0 * std::f64::consts::PI * t).sqrt().recip(),
            |t: f64| t.sqrt().recip(),
        );
        Self {
            name: "bm".into(),
            coefficients: CoefficientPair::new(|_, _| 0.0, |_, _| 1.0),
            x0: 0.0,
            density,
            envelopes,
        }
    }

    /// Ornstein-Uhlenbeck dX = -theta X dt + sigma dW from 0.
    /// Marginal is N(0, v(t)) with v(t) = sigma^2 (1 - e^(-2 theta t)) / (2 theta).
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Self {
        let var = move |t: f64| sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
        let density = DensityModel::AnalyticGaussian {
            mean: Arc::new(|_| 0.0),
            variance: Arc::new(var),
        };
        // sup p_t = (2 pi v)^(-1/2); the weighted derivative integral is
        // sigma^4 / v(t), hence u = sigma^2 / sqrt(v(t)).
        let envelopes = EnvelopePair::new(
            move |t: f64| (2.0 * std::f64::consts::PI * var(t)).sqrt().recip(),
            move |t: f64| sigma * sigma / var(t).sqrt(),
        );
        Self {
            name: format!("ou(theta={theta},sigma={sigma})"),
            coefficients: CoefficientPair::new(move |_, x| -theta * x, move |_, _| sigma),
            x0: 0.0,
            density,
            envelopes,
        }
    }

    /// User-supplied coefficients with a (typically kernel-estimated) density.
    /// Envelopes are computed by quadrature over `xgrid`.
    pub fn custom(
        name: impl Into<String>,
        coefficients: CoefficientPair,
        x0: f64,
        density: DensityModel,
        xgrid: Vec<f64>,
    ) -> Self {
        let envelopes = numeric_envelopes(&density, &coefficients, xgrid);
        Self {
            name: name.into(),
            coefficients,
            x0,
            density,
            envelopes,
        }
    }

    pub fn drift(&self, t: f64, x: f64) -> f64 {
        self.coefficients.b(t, x)
    }

    pub fn sigma(&self, t: f64, x: f64) -> f64 {
        self.coefficients.sigma(t, x)
    }

    pub fn pdf(&self, t: f64, x: f64) -> Result<f64> {
        self.density.pdf(t, x)
    }

    /// d/dx(sigma^2(t, x) p_t(x)), the distributional derivative realized as
    /// an evaluable function: sigma^2 p' + (sigma^2)' p, with (sigma^2)' by
    /// central difference since sigma is a black box.
    pub fn weighted_density_derivative(&self, t: f64, x: f64) -> Result<f64> {
        let s = self.sigma(t, x);
        let p = self.pdf(t, x)?;
        let dp = self.density.dpdf_dx(t, x)?;
        let h = 1e-5;
        let sp = self.sigma(t, x + h);
        let sm = self.sigma(t, x - h);
        let ds2 = (sp * sp - sm * sm) / (2.0 * h);
        Ok(s * s * dp + ds2 * p)
    }
}

fn numeric_envelopes(
    density: &DensityModel,
    coefficients: &CoefficientPair,
    xgrid: Vec<f64>,
) -> EnvelopePair {
    let d_r = density.clone();
    let xs_r = xgrid.clone();
    let r = move |t: f64| {
        xs_r.iter()
            .map(|&x| d_r.pdf(t, x).unwrap_or(0.0))
            .fold(0.0f64, f64::max)
    };
    let d_u = density.clone();
    let c_u = coefficients.clone();
    let u = move |t: f64| {
        // trapezoid over the grid of (1/p) (d/dx(sigma^2 p))^2
        let f = |x: f64| {
            let p = d_u.pdf(t, x).unwrap_or(0.0);
            if p < DENSITY_FLOOR {
                return 0.0;
            }
            let s = c_u.sigma(t, x);
            let dp = d_u.dpdf_dx(t, x).unwrap_or(0.0);
            let h = 1e-5;
            let sp = c_u.sigma(t, x + h);
            let sm = c_u.sigma(t, x - h);
            let ds2 = (sp * sp - sm * sm) / (2.0 * h);
            let w = s * s * dp + ds2 * p;
            w * w / p
        };
        let mut acc = 0.0;
        for w in xgrid.windows(2) {
            acc += 0.5 * (f(w[0]) + f(w[1])) * (w[1] - w[0]);
        }
        acc.sqrt()
    };
    EnvelopePair::new(r, u)
}

/// Closed-form marginal densities for the shipped analytic models.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticModelKind {
    Bm,
    Ou { theta: f64, sigma: f64 },
}

pub fn analytic_density(kind: AnalyticModelKind, t: f64, x: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Domain(format!(
            "analytic density requires t > 0, got {t}"
        )));
    }
    Ok(match kind {
        AnalyticModelKind::Bm => normal_pdf(x, 0.0, t),
        AnalyticModelKind::Ou { theta, sigma } => {
            let v = sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
            normal_pdf(x, 0.0, v)
        }
    })
}

pub fn envelope_r(model: &DiffusionModel, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("envelope requires t > 0, got {t}")));
    }
    Ok((model.envelopes.r)(t))
}

pub fn envelope_u(model: &DiffusionModel, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("envelope requires t > 0, got {t}")));
    }
    Ok((model.envelopes.u)(t))
}

/// Report of the Lipschitz and linear-growth checks over a sampled grid.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisReport {
    pub lipschitz_ratio: f64,
    pub growth_ratio: f64,
    pub ceiling: f64,
    pub pass: bool,
}

/// Grid-sampled check of the Lipschitz and linear-growth conditions on
/// (b, sigma). The conditions hold for *some* constant K, so the observed
/// ratios are reported against a user-chosen ceiling.
pub fn check_hypotheses_h(
    coefficients: &CoefficientPair,
    grid: &[(f64, f64, f64)],
    ceiling: f64,
) -> Result<HypothesisReport> {
    if grid.is_empty() {
        return Err(Error::Config("hypothesis grid is empty".into()));
    }
    let mut lip: f64 = 0.0;
    let mut growth: f64 = 0.0;
    for &(t, x, y) in grid {
        if x == y {
            return Err(Error::Config(format!(
                "hypothesis grid triple has x == y == {x}"
            )));
        }
        let db = (coefficients.b(t, x) - coefficients.b(t, y)).abs();
        let ds = (coefficients.sigma(t, x) - coefficients.sigma(t, y)).abs();
        lip = lip.max((db + ds) / (x - y).abs());
        for &z in &[x, y] {
            let g = (coefficients.sigma(t, z).abs() + coefficients.b(t, z).abs()) / (1.0 + z.abs());
            growth = growth.max(g);
        }
    }
    let pass = lip.is_finite() && growth.is_finite() && lip <= ceiling && growth <= ceiling;
    Ok(HypothesisReport {
        lipschitz_ratio: lip,
        growth_ratio: growth,
        ceiling,
        pass,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrabilityReport {
    /// Value of int_0^1 r(t)^(1/2) u(t) dt, infinite when divergent.
    pub value: f64,
    /// Fitted power-law exponent of the integrand near t = 0.
    pub exponent: f64,
    pub pass: bool,
}

/// Check (r)^(1/2) u in L^1[0,1] by quadrature on [delta, 1] with a fitted
/// power-law tail on (0, delta).
pub fn check_integrability(envelopes: &EnvelopePair) -> IntegrabilityReport {
    let r = envelopes.r.clone();
    let u = envelopes.u.clone();
    let g = move |t: f64| r(t).sqrt() * u(t);
    let SingularIntegral {
        value,
        exponent,
        finite,
    } = integrate_power_singular(&g, 1e-4, 1e-10);
    IntegrabilityReport {
        value,
        exponent,
        pass: finite,
    }
}

/// (H3): p_s(x) > 0 at all sampled points and the sampled set where both
/// coefficients vanish has zero empirical measure.
pub fn check_h3(model: &DiffusionModel, grid: &[(f64, f64)]) -> bool {
    let mut zero_coeff = 0usize;
    for &(s, x) in grid {
        match model.pdf(s, x) {
            Ok(p) if p > 0.0 => {}
            _ => return false,
        }
        if model.sigma(s, x) == 0.0 && model.drift(s, x) == 0.0 {
            zero_coeff += 1;
        }
    }
    zero_coeff == 0
}

/// Quadrature check that a density integrates to one over [lo, hi].
pub fn density_mass(density: &DensityModel, t: f64, lo: f64, hi: f64) -> Result<f64> {
    let d = density.clone();
    Ok(adaptive_simpson(
        &move |x| d.pdf(t, x).unwrap_or(0.0),
        lo,
        hi,
        1e-10,
    ))
}
