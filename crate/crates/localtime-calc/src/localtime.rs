//! Local-time fields, elementary time-space functions, integration against
//! dL, and the seminorm / norm of the function space behind that integral.
//!
//! Two field estimators are provided. The occupation-density estimator
//! realizes L_t^x as a smoothed occupation measure against the sigma^2 ds
//! clock and is the calibration reference. The level-crossing estimator
//! accumulates |dX| over the steps that cross a level; it is the estimator
//! the dL-integration machinery uses because its double increments reproduce
//! the discrete forward/backward sum difference cell by cell.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::numerics::{midpoint, KahanSum};
use crate::simulate::SamplePath;

/// Resolution floor multiplier: occupation bandwidths below
/// `RESOLUTION_FLOOR_FACTOR * sqrt(mesh)` are flagged but still processed.
pub const RESOLUTION_FLOOR_FACTOR: f64 = 4.0;

/// Estimated local time L_t^x on a time-by-space grid for one path.
#[derive(Debug, Clone)]
pub struct LocalTimeField {
    pub xgrid: Vec<f64>,
    pub tgrid: Vec<f64>,
    /// values[j][i] = L at (tgrid[j], xgrid[i])
    pub values: Vec<Vec<f64>>,
    /// Occupation bandwidth used, 0 for the crossing estimator.
    pub epsilon: f64,
    pub below_resolution_floor: bool,
}

impl LocalTimeField {
    /// Bilinear lookup. Zero outside the x-grid and before the first grid
    /// time; clamped to the last row beyond it.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let xs = &self.xgrid;
        if x < xs[0] || x > *xs.last().unwrap() {
            return 0.0;
        }
        if t <= self.tgrid[0] {
            return 0.0;
        }
        let row = |j: usize| -> f64 {
            let i = match xs.binary_search_by(|v| v.total_cmp(&x)) {
                Ok(i) => return self.values[j][i],
                Err(i) => i,
            };
            let (x0, x1) = (xs[i - 1], xs[i]);
            let w = (x - x0) / (x1 - x0);
            self.values[j][i - 1] * (1.0 - w) + self.values[j][i] * w
        };
        let ts = &self.tgrid;
        if t >= *ts.last().unwrap() {
            return row(ts.len() - 1);
        }
        let j = match ts.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(j) => return row(j),
            Err(j) => j,
        };
        let (t0, t1) = (ts[j - 1], ts[j]);
        let w = (t - t0) / (t1 - t0);
        row(j - 1) * (1.0 - w) + row(j) * w
    }

    pub fn x_step_bound(&self) -> (f64, f64) {
        (self.xgrid[0], *self.xgrid.last().unwrap())
    }
}

fn validate_grids(xgrid: &[f64], tgrid: &[f64]) -> Result<()> {
    if xgrid.len() < 2 || xgrid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch(
            "x-grid must be strictly increasing with at least two points".into(),
        ));
    }
    if tgrid.is_empty() || tgrid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch("t-grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Default decimated snapshot grid: every 2^(n-8) partition steps for
/// n > 8, every step otherwise. Always contains 0 and 1.
pub fn default_tgrid(path: &SamplePath) -> Vec<f64> {
    let n = path.partition.level();
    let stride = if n > 8 { 1usize << (n - 8) } else { 1 };
    let times = path.times();
    let mut grid: Vec<f64> = times.iter().copied().step_by(stride).collect();
    if *grid.last().unwrap() != 1.0 {
        grid.push(1.0);
    }
    grid
}

pub fn uniform_grid(min: f64, max: f64, dx: f64) -> Vec<f64> {
    let count = ((max - min) / dx).round() as usize;
    (0..=count).map(|i| min + i as f64 * dx).collect()
}

/// Occupation-density estimate
/// L_t^x = (1 / 2 eps) sum_{steps with t_{i+1} <= t} 1{|X_i - x| <= eps}
///         sigma^2(t_i, X_i) dt.
pub fn estimate_local_time(
    path: &SamplePath,
    model: &DiffusionModel,
    xgrid: &[f64],
    tgrid: &[f64],
    epsilon: f64,
) -> Result<LocalTimeField> {
    if epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "occupation bandwidth must be positive, got {epsilon}"
        )));
    }
    validate_grids(xgrid, tgrid)?;
    let mesh = path.partition.mesh();
    let below_floor = epsilon < RESOLUTION_FLOOR_FACTOR * mesh.sqrt();

    let times = path.times();
    let dt = mesh;
    let mut running = vec![0.0f64; xgrid.len()];
    let mut values = Vec::with_capacity(tgrid.len());
    let mut snap = 0usize;
    // snapshot grid times that precede the first step
    while snap < tgrid.len() && tgrid[snap] < times[1] {
        values.push(running.clone());
        snap += 1;
    }
    for i in 0..path.partition.num_steps() {
        let x = path.values[i];
        let s = model.sigma(times[i], x);
        let w = s * s * dt / (2.0 * epsilon);
        if w != 0.0 {
            let lo = xgrid.partition_point(|&g| g < x - epsilon);
            let hi = xgrid.partition_point(|&g| g <= x + epsilon);
            for cell in running.iter_mut().take(hi).skip(lo) {
                *cell += w;
            }
        }
        let t_done = times[i + 1];
        while snap < tgrid.len()
            && (i + 2 > path.partition.num_steps() + 1 || tgrid[snap] <= t_done + 1e-15)
            && !(i + 1 < path.partition.num_steps() && tgrid[snap] > t_done + 1e-15)
        {
            values.push(running.clone());
            snap += 1;
        }
    }
    while snap < tgrid.len() {
        values.push(running.clone());
        snap += 1;
    }
    Ok(LocalTimeField {
        xgrid: xgrid.to_vec(),
        tgrid: tgrid.to_vec(),
        values,
        epsilon,
        below_resolution_floor: below_floor,
    })
}

/// Level-crossing estimate: L_t^x = sum over steps with t_{i+1} <= t that
/// straddle the level x of |X_{i+1} - X_i|.
pub fn crossing_local_time(
    path: &SamplePath,
    xgrid: &[f64],
    tgrid: &[f64],
) -> Result<LocalTimeField> {
    validate_grids(xgrid, tgrid)?;
    let times = path.times();
    let mut running = vec![0.0f64; xgrid.len()];
    let mut values = Vec::with_capacity(tgrid.len());
    let mut snap = 0usize;
    while snap < tgrid.len() && tgrid[snap] < times[1] - 1e-15 {
        values.push(running.clone());
        snap += 1;
    }
    for i in 0..path.partition.num_steps() {
        let (a, b) = (path.values[i], path.values[i + 1]);
        let dx = b - a;
        if dx != 0.0 {
            // levels x with min <= x < max are crossed
            let (lo_v, hi_v) = if a < b { (a, b) } else { (b, a) };
            let lo = xgrid.partition_point(|&g| g < lo_v);
            let hi = xgrid.partition_point(|&g| g < hi_v);
            for cell in running.iter_mut().take(hi).skip(lo) {
                *cell += dx.abs();
            }
        }
        let t_done = times[i + 1];
        while snap < tgrid.len() && tgrid[snap] <= t_done + 1e-15 {
            values.push(running.clone());
            snap += 1;
        }
    }
    while snap < tgrid.len() {
        values.push(running.clone());
        snap += 1;
    }
    Ok(LocalTimeField {
        xgrid: xgrid.to_vec(),
        tgrid: tgrid.to_vec(),
        values,
        epsilon: 0.0,
        below_resolution_floor: false,
    })
}

/// Piecewise-constant function on cells (x_i, x_{i+1}] x (s_j, s_{j+1}].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementaryFunction {
    /// x-breakpoints, strictly increasing, length nx.
    pub x: Vec<f64>,
    /// s-breakpoints, a subdivision of [0, 1], length ns.
    pub s: Vec<f64>,
    /// coef[i][j] on cell (x[i], x[i+1]] x (s[j], s[j+1]]; (nx-1) x (ns-1).
    pub coef: Vec<Vec<f64>>,
}

impl ElementaryFunction {
    pub fn validate(&self) -> Result<()> {
        if self.x.len() < 2 || self.x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("x-breakpoints must be strictly increasing".into()));
        }
        if self.s.len() < 2 || self.s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("s-breakpoints must be strictly increasing".into()));
        }
        if self.s[0] < 0.0 || *self.s.last().unwrap() > 1.0 {
            return Err(Error::Config("s-breakpoints must subdivide [0, 1]".into()));
        }
        if self.coef.len() != self.x.len() - 1
            || self.coef.iter().any(|r| r.len() != self.s.len() - 1)
        {
            return Err(Error::Config(format!(
                "coef must be {} x {}",
                self.x.len() - 1,
                self.s.len() - 1
            )));
        }
        Ok(())
    }

    /// Unique cell coefficient, or 0 outside all cells.
    pub fn eval(&self, x: f64, s: f64) -> f64 {
        if x <= self.x[0] || x > *self.x.last().unwrap() {
            return 0.0;
        }
        if s <= self.s[0] || s > *self.s.last().unwrap() {
            return 0.0;
        }
        // cells are half-open on the left, so a point equal to a breakpoint
        // belongs to the cell ending there
        let ci = self.x.partition_point(|&v| v < x) - 1;
        let cj = self.s.partition_point(|&v| v < s) - 1;
        self.coef[ci][cj]
    }
}

/// Integral of an elementary function against the field's dL:
/// sum f_ij (L_{s_{j+1}}^{x_{i+1}} - L_{s_j}^{x_{i+1}} - L_{s_{j+1}}^{x_i}
///           + L_{s_j}^{x_i}).
pub fn elementary_integral(
    f: &ElementaryFunction,
    field: &LocalTimeField,
    interpolate: bool,
) -> Result<f64> {
    f.validate()?;
    if !interpolate {
        let on = |grid: &[f64], v: f64| grid.iter().any(|&g| (g - v).abs() < 1e-12);
        for &xv in &f.x {
            if !on(&field.xgrid, xv) {
                return Err(Error::GridMismatch(format!(
                    "x-breakpoint {xv} not on the field grid and interpolation is disabled"
                )));
            }
        }
        for &sv in &f.s {
            if !on(&field.tgrid, sv) {
                return Err(Error::GridMismatch(format!(
                    "s-breakpoint {sv} not on the field grid and interpolation is disabled"
                )));
            }
        }
    }
    let mut acc = KahanSum::new();
    for (i, row) in f.coef.iter().enumerate() {
        let (x0, x1) = (f.x[i], f.x[i + 1]);
        for (j, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (s0, s1) = (f.s[j], f.s[j + 1]);
            let dd = field.value_at(s1, x1) - field.value_at(s0, x1) - field.value_at(s1, x0)
                + field.value_at(s0, x0);
            acc.add(c * dd);
        }
    }
    Ok(acc.value())
}

/// A measurable f(x, s) with a declared support box in x.
#[derive(Clone)]
pub struct TimeSpaceFunction {
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// Support interval [x_min, x_max]; time support is always [0, 1].
    pub support: (f64, f64),
}

impl TimeSpaceFunction {
    pub fn new(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Self {
        Self {
            f: Arc::new(f),
            support,
        }
    }

    pub fn eval(&self, x: f64, s: f64) -> f64 {
        (self.f)(x, s)
    }
}

/// Tensor-quadrature resolution for the norms.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub x_points: usize,
    pub s_points: usize,
    pub delta: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            x_points: 400,
            s_points: 200,
            delta: 1e-4,
        }
    }
}

/// Midpoint in s on [delta, 1] plus a fitted power-law tail on (0, delta).
/// Returns infinity when the fitted tail exponent signals divergence.
fn integrate_s_singular(inner: &dyn Fn(f64) -> f64, quad: &QuadratureSpec) -> f64 {
    let g1 = inner(quad.delta);
    let g2 = inner(2.0 * quad.delta);
    let body = midpoint(inner, quad.delta, 1.0, quad.s_points);
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
    body + g1 * quad.delta / (exponent + 1.0)
}

/// Seminorm with the three-term structure: drift part, martingale part and
/// density-derivative part, each by tensor-product quadrature over the
/// support box and (0, 1].
pub fn seminorm_star(
    f: &TimeSpaceFunction,
    model: &DiffusionModel,
    quad: &QuadratureSpec,
) -> f64 {
    let (lo, hi) = f.support;
    let inner = |s: f64, integrand: &dyn Fn(f64, f64) -> f64| -> f64 {
        midpoint(&|x| integrand(x, s), lo, hi, quad.x_points)
    };
    let drift = integrate_s_singular(
        &|s| {
            inner(s, &|x, s| {
                let p = model.pdf(s, x).unwrap_or(0.0);
                (f.eval(x, s) * model.drift(s, x)).abs() * p
            })
        },
        quad,
    );
    let mart_sq = integrate_s_singular(
        &|s| {
            inner(s, &|x, s| {
                let p = model.pdf(s, x).unwrap_or(0.0);
                let v = f.eval(x, s);
                let sg = model.sigma(s, x);
                v * v * sg * sg * p
            })
        },
        quad,
    );
    let deriv = integrate_s_singular(
        &|s| {
            inner(s, &|x, s| {
                let w = model.weighted_density_derivative(s, x).unwrap_or(0.0);
                (f.eval(x, s) * w).abs()
            })
        },
        quad,
    );
    2.0 * drift + 2.0 * mart_sq.sqrt() + deriv
}

/// L^2 norm of f over the support box times [0, 1].
pub fn l2_norm(f: &TimeSpaceFunction, quad: &QuadratureSpec) -> f64 {
    let (lo, hi) = f.support;
    let v = midpoint(
        &|s| {
            midpoint(
                &|x| {
                    let v = f.eval(x, s);
                    v * v
                },
                lo,
                hi,
                quad.x_points,
            )
        },
        0.0,
        1.0,
        quad.s_points,
    );
    v.sqrt()
}

/// Fallback norm when (H3) fails: seminorm plus the plain L^2 norm.
pub fn norm_h(f: &TimeSpaceFunction, model: &DiffusionModel, quad: &QuadratureSpec) -> f64 {
    seminorm_star(f, model, quad) + l2_norm(f, quad)
}

/// Project f onto the field grids as a cell-average elementary function
/// restricted to s in (0, t], then integrate.
pub fn timespace_integral(f: &TimeSpaceFunction, field: &LocalTimeField, t: f64) -> Result<f64> {
    let proj = project_onto_field(f, field, 0.0, t);
    elementary_integral(&proj, field, true)
}

/// Truncated integral of f * 1_{(eps, t)}(s); equals `timespace_integral`
/// exactly at eps = 0 and vanishes for eps >= t.
pub fn epsilon_truncated_integral(
    f: &TimeSpaceFunction,
    field: &LocalTimeField,
    eps: f64,
    t: f64,
) -> Result<f64> {
    if eps >= t {
        return Ok(0.0);
    }
    let proj = project_onto_field(f, field, eps, t);
    elementary_integral(&proj, field, true)
}

fn project_onto_field(
    f: &TimeSpaceFunction,
    field: &LocalTimeField,
    s_lo: f64,
    s_hi: f64,
) -> ElementaryFunction {
    let mut ss: Vec<f64> = field
        .tgrid
        .iter()
        .copied()
        .filter(|&s| s > s_lo && s < s_hi)
        .collect();
    ss.insert(0, s_lo);
    ss.push(s_hi);
    ss.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let xs = field.xgrid.clone();
    let coef = (0..xs.len() - 1)
        .map(|i| {
            let xm = 0.5 * (xs[i] + xs[i + 1]);
            (0..ss.len() - 1)
                .map(|j| f.eval(xm, 0.5 * (ss[j] + ss[j + 1])))
                .collect()
        })
        .collect();
    ElementaryFunction { x: xs, s: ss, coef }
}

/// Refinement limit of the projected integral for the crossing field:
/// cells adapted to the path (x-breakpoints at the path values,
/// s-breakpoints at every grid time) collapse the double-increment sum to
/// -sum dX_i (f(X_{i+1}, t_{i+1}) - f(X_i, t_{i+1})) over steps with
/// t_{i+1} in (s_lo, t].
pub fn timespace_integral_adapted(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    t: f64,
) -> Result<f64> {
    adapted_window(f, path, 0.0, t)
}

pub fn epsilon_truncated_adapted(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    eps: f64,
    t: f64,
) -> Result<f64> {
    if eps >= t {
        return Ok(0.0);
    }
    adapted_window(f, path, eps, t)
}

fn adapted_window(
    f: impl Fn(f64, f64) -> f64,
    path: &SamplePath,
    s_lo: f64,
    t: f64,
) -> Result<f64> {
    let hi = path.partition.snap_down(t)?;
    let lo = path.partition.snap_down(s_lo.max(0.0))?;
    let times = path.times();
    let mut acc = KahanSum::new();
    for i in lo..hi {
        let s1 = times[i + 1];
        let dx = path.values[i + 1] - path.values[i];
        acc.add(-dx * (f(path.values[i + 1], s1) - f(path.values[i], s1)));
    }
    Ok(acc.value())
}
