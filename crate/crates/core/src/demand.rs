//! Jacobi and Ornstein–Uhlenbeck demand processes: path simulation and
//! conditional moments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;
use crate::timefuncs::CoefFn;

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemandError {
    #[error("the step recursion needs a piecewise-constant mean level")]
    WrongThetaVariant,
    #[error("invalid demand parameters: {0}")]
    InvalidParams(String),
}

/// Jacobi diffusion `dZ = κ(θ(t) − Z)dt + σ√(Z(1−Z))dW`, optionally shifted to `[lo, hi]`.
///
/// `theta` and `d0` are given in demand units; the diffusion acts on the
/// normalized process `(D − lo)/(hi − lo)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    pub kappa: f64,
    pub theta: CoefFn,
    pub sigma: f64,
    pub d0: f64,
    #[serde(default = "unit_bounds")]
    pub bounds: (f64, f64),
}

fn unit_bounds() -> (f64, f64) {
    (0.0, 1.0)
}

impl JacobiParams {
    pub fn new(kappa: f64, theta: CoefFn, sigma: f64, d0: f64) -> Self {
        Self {
            kappa,
            theta,
            sigma,
            d0,
            bounds: unit_bounds(),
        }
    }

    pub fn validate(&self, t0: f64, t_end: f64) -> Result<(), DemandError> {
        let (lo, hi) = self.bounds;
        let bad = |m: &str| Err(DemandError::InvalidParams(m.to_string()));
        if !(lo < hi) {
            return bad("bounds must satisfy lo < hi");
        }
        if !(self.kappa >= 0.0) || !(self.sigma >= 0.0) {
            return bad("kappa and sigma must be non-negative");
        }
        if self.sigma > 0.0 && self.kappa == 0.0 {
            return bad("kappa must be positive when sigma is positive");
        }
        if !(self.d0 >= lo && self.d0 <= hi) {
            return bad("d0 outside the demand range");
        }
        self.theta.check().map_err(DemandError::InvalidParams)?;
        let (tmin, tmax) = self.theta.bounds_on(t0, t_end);
        if !(tmin > lo && tmax < hi) {
            return bad("theta must stay strictly inside the demand range");
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        self.bounds.1 - self.bounds.0
    }

    /// Mean level of the normalized process.
    fn unit_theta(&self) -> CoefFn {
        let (lo, _) = self.bounds;
        self.theta.affine(1.0 / self.width(), -lo / self.width())
    }

    fn to_unit(&self, d: f64) -> f64 {
        (d - self.bounds.0) / self.width()
    }
}

/// Ornstein–Uhlenbeck demand `dẐ = κ̂(θ̂(t) − Ẑ)dt + σ̂ dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub theta: CoefFn,
    pub sigma: f64,
    pub z0: f64,
}

/// Demand model attached to one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum DemandModel {
    Jacobi(JacobiParams),
    Ou(OuParams),
}

impl DemandModel {
    pub fn initial(&self) -> f64 {
        match self {
            DemandModel::Jacobi(p) => p.d0,
            DemandModel::Ou(p) => p.z0,
        }
    }

    /// `(a, b)` with `E[D_t | D_τ = x] = a·x + b`.
    pub fn mean_coefficients(&self, tau: f64, t: f64) -> (f64, f64) {
        let (kappa, theta) = match self {
            DemandModel::Jacobi(p) => (p.kappa, &p.theta),
            DemandModel::Ou(p) => (p.kappa, &p.theta),
        };
        (
            (-kappa * (t - tau)).exp(),
            relaxation_integral(theta, kappa, tau, t),
        )
    }

    pub fn conditional_mean(&self, tau: f64, x: f64, t: f64) -> f64 {
        let (a, b) = self.mean_coefficients(tau, t);
        a * x + b
    }

    pub fn simulate(&self, grid: &SdeGrid, normals: &[f64]) -> SamplePath {
        match self {
            DemandModel::Jacobi(p) => simulate_jacobi_with(p, grid, normals),
            DemandModel::Ou(p) => simulate_ou_with(p, grid, normals),
        }
    }
}

/// `κ ∫_τ^s e^{−κ(s−r)} θ(r) dr`, in closed form for every coefficient family.
pub fn relaxation_integral(theta: &CoefFn, kappa: f64, tau: f64, s: f64) -> f64 {
    let decay = (-kappa * (s - tau)).exp();
    match theta {
        CoefFn::Constant { value } => value * (1.0 - decay),
        CoefFn::Sinusoid {
            offset,
            amplitude,
            omega,
            phase,
        } => {
            let g = |r: f64| kappa * (omega * r + phase).sin() - omega * (omega * r + phase).cos();
            let denom = kappa * kappa + omega * omega;
            let osc = if denom > 0.0 {
                kappa * amplitude / denom * (g(s) - decay * g(tau))
            } else {
                0.0
            };
            offset * (1.0 - decay) + osc
        }
        CoefFn::PiecewiseConstant { breakpoints, .. } => {
            let mut total = 0.0;
            let mut lo = tau;
            for &b in breakpoints.iter().filter(|&&b| b > tau && b < s) {
                total += theta.eval(lo) * ((-kappa * (s - b)).exp() - (-kappa * (s - lo)).exp());
                lo = b;
            }
            total + theta.eval(lo) * (1.0 - (-kappa * (s - lo)).exp())
        }
    }
}

/// `E[D_t | D_{t0} = z0]`.
pub fn jacobi_mean(p: &JacobiParams, t0: f64, z0: f64, t: f64) -> f64 {
    z0 * (-p.kappa * (t - t0)).exp() + relaxation_integral(&p.theta, p.kappa, t0, t)
}

/// `E[Z_t | Z_{t0} = z0]` for the normalized process with mean level `theta`.
fn unit_mean(kappa: f64, theta: &CoefFn, t0: f64, z0: f64, t: f64) -> f64 {
    z0 * (-kappa * (t - t0)).exp() + relaxation_integral(theta, kappa, t0, t)
}

/// Closed form for constant θ on the unit interval.
fn unit_m2_constant(kappa: f64, theta: f64, sigma: f64, z0: f64, dt: f64) -> f64 {
    let s2 = sigma * sigma;
    let a = 2.0 * kappa + s2;
    if kappa + s2 == 0.0 {
        return z0 * z0;
    }
    let c = (2.0 * kappa * theta + s2) / (kappa + s2);
    (2.0 * kappa * theta + s2) * theta / a
        + c * (z0 - theta) * (-kappa * dt).exp()
        + (z0 * z0 - c * z0 + kappa * theta * (2.0 * kappa * theta + s2) / (a * (kappa + s2)))
            * (-a * dt).exp()
}

/// Variation-of-constants form of the second moment, integrated numerically.
fn unit_m2_quadrature(kappa: f64, theta: &CoefFn, sigma: f64, t0: f64, z0: f64, t: f64) -> f64 {
    let s2 = sigma * sigma;
    let a = 2.0 * kappa + s2;
    let integrand = |s: f64| {
        (2.0 * kappa * theta.eval(s) + s2)
            * unit_mean(kappa, theta, t0, z0, s)
            * (-a * (t - s)).exp()
    };
    quad::integrate_split(integrand, t0, t, theta.breakpoints(), QUAD_TOL)
        + z0 * z0 * (-a * (t - t0)).exp()
}

fn from_unit_m2(p: &JacobiParams, m1_unit: f64, m2_unit: f64) -> f64 {
    let (lo, _) = p.bounds;
    let w = p.width();
    lo * lo + 2.0 * lo * w * m1_unit + w * w * m2_unit
}

/// `E[D_t² | D_{t0} = z0]`. Closed form for constant θ, quadrature otherwise.
pub fn jacobi_second_moment(p: &JacobiParams, t0: f64, z0: f64, t: f64) -> f64 {
    let theta = p.unit_theta();
    let x0 = p.to_unit(z0);
    let m1 = unit_mean(p.kappa, &theta, t0, x0, t);
    let m2 = match theta {
        CoefFn::Constant { value } => unit_m2_constant(p.kappa, value, p.sigma, x0, t - t0),
        _ => unit_m2_quadrature(p.kappa, &theta, p.sigma, t0, x0, t),
    };
    from_unit_m2(p, m1, m2)
}

/// Second moment through the general quadrature path regardless of θ's family.
pub fn jacobi_second_moment_quadrature(p: &JacobiParams, t0: f64, z0: f64, t: f64) -> f64 {
    let theta = p.unit_theta();
    let x0 = p.to_unit(z0);
    let m1 = unit_mean(p.kappa, &theta, t0, x0, t);
    from_unit_m2(
        p,
        m1,
        unit_m2_quadrature(p.kappa, &theta, p.sigma, t0, x0, t),
    )
}

/// Finite-sum second moment for a step-function mean level.
pub fn jacobi_m2_step_recursion(
    p: &JacobiParams,
    t0: f64,
    z0: f64,
    t: f64,
) -> Result<f64, DemandError> {
    let theta = p.unit_theta();
    let CoefFn::PiecewiseConstant { breakpoints, .. } = &theta else {
        return Err(DemandError::WrongThetaVariant);
    };
    let x0 = p.to_unit(z0);
    let m1 = unit_mean(p.kappa, &theta, t0, x0, t);
    let (k, s2) = (p.kappa, p.sigma * p.sigma);
    if t == t0 || k + s2 == 0.0 {
        return Ok(from_unit_m2(p, m1, x0 * x0));
    }

    let mut ts = vec![t0];
    ts.extend(breakpoints.iter().copied().filter(|&b| b > t0 && b < t));
    ts.push(t);
    let th: Vec<f64> = ts[..ts.len() - 1].iter().map(|&s| theta.eval(s)).collect();
    let n = th.len();
    let tn = ts[n];
    let a = 2.0 * k + s2;
    let e = f64::exp;
    let bco = |i: usize| (2.0 * k * th[i] + s2) / (k + s2);

    let mut sum = 0.0;
    for i in 0..n {
        sum += (2.0 * k * th[i] + s2) * th[i] / a * e(-a * (tn - ts[i + 1]))
            + k * th[i] * (2.0 * k * th[i] + s2) / (a * (k + s2)) * e(-a * (tn - ts[i]));
    }
    for i in 1..n {
        let mut inner: f64 = (1..=i)
            .map(|j| (th[j - 1] - th[j]) * e(-k * (ts[i + 1] - ts[j]) - a * (tn - ts[i + 1])))
            .sum();
        inner -= th[i - 1] * e(-a * (tn - ts[i]));
        inner -= (1..i)
            .map(|j| (th[j - 1] - th[j]) * e(-k * (ts[i] - ts[j]) - a * (tn - ts[i])))
            .sum::<f64>();
        sum += bco(i) * inner;
        sum += bco(i)
            * (x0 - th[0])
            * (e(-k * (ts[i + 1] - ts[0]) - a * (tn - ts[i + 1]))
                - e(-k * (ts[i] - ts[0]) - a * (tn - ts[i])));
    }
    sum += bco(0)
        * ((x0 - th[0]) * e(-k * (ts[1] - ts[0]) - a * (tn - ts[1])) - x0 * e(-a * (tn - ts[0])));
    sum += x0 * x0 * e(-a * (tn - ts[0]));
    Ok(from_unit_m2(p, m1, sum))
}

/// `E[Ẑ_t | Ẑ_{t0} = z0]`.
pub fn ou_mean(p: &OuParams, t0: f64, z0: f64, t: f64) -> f64 {
    z0 * (-p.kappa * (t - t0)).exp() + relaxation_integral(&p.theta, p.kappa, t0, t)
}

/// `E[(D_t − flux)² | D_{t0} = d0] = m2 − 2·flux·m1 + flux²`.
pub fn expected_sq_deviation(p: &JacobiParams, flux: f64, t0: f64, d0: f64, t: f64) -> f64 {
    let m1 = jacobi_mean(p, t0, d0, t);
    let m2 = jacobi_second_moment(p, t0, d0, t);
    m2 - 2.0 * flux * m1 + flux * flux
}

/// Uniform SDE time grid `t_j = t0 + j·dt`, `j = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl SdeGrid {
    /// Grid covering `[t0, t_end]` with step `dt` (last step may overshoot `t_end` slightly).
    pub fn covering(t0: f64, t_end: f64, dt: f64) -> Self {
        let steps = ((t_end - t0) / dt - 1e-9).ceil().max(0.0) as usize;
        Self { t0, dt, steps }
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }
}

/// Simulated path on an [`SdeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: SdeGrid,
    pub values: Vec<f64>,
}

impl SamplePath {
    /// Linear interpolation; constant extrapolation beyond the grid.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t - self.grid.t0) / self.grid.dt;
        if x <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        let j = x.floor() as usize;
        if j >= last {
            return self.values[last];
        }
        let w = x - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Counter-based stream for one (run, node) pair under a master seed.
pub fn stream_rng(seed: u64, run: u64, node: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((run << 16) | (node & 0xffff));
    rng
}

/// Standard normal draws for one path on `grid`.
pub fn normal_increments<R: Rng + ?Sized>(grid: &SdeGrid, rng: &mut R) -> Vec<f64> {
    (0..grid.steps)
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

pub fn simulate_jacobi<R: Rng + ?Sized>(
    p: &JacobiParams,
    grid: &SdeGrid,
    rng: &mut R,
) -> SamplePath {
    simulate_jacobi_with(p, grid, &normal_increments(grid, rng))
}

pub fn simulate_ou<R: Rng + ?Sized>(p: &OuParams, grid: &SdeGrid, rng: &mut R) -> SamplePath {
    simulate_ou_with(p, grid, &normal_increments(grid, rng))
}

/// Truncated Euler–Maruyama driven by the given normal draws.
pub fn simulate_jacobi_with(p: &JacobiParams, grid: &SdeGrid, normals: &[f64]) -> SamplePath {
    let (lo, _) = p.bounds;
    let w = p.width();
    let theta = p.unit_theta();
    let sqdt = grid.dt.sqrt();
    let mut z = p.to_unit(p.d0);
    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(p.d0);
    for (j, x) in normals.iter().take(grid.steps).enumerate() {
        let t = grid.time(j);
        let star = z
            + grid.dt * p.kappa * (theta.eval(t) - z)
            + p.sigma * sqdt * (z * (1.0 - z)).sqrt() * x;
        z = star.clamp(0.0, 1.0);
        values.push(lo + w * z);
    }
    SamplePath {
        grid: *grid,
        values,
    }
}

/// Plain Euler–Maruyama without truncation.
pub fn simulate_ou_with(p: &OuParams, grid: &SdeGrid, normals: &[f64]) -> SamplePath {
    let sqdt = grid.dt.sqrt();
    let mut z = p.z0;
    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(z);
    for (j, x) in normals.iter().take(grid.steps).enumerate() {
        let t = grid.time(j);
        z += grid.dt * p.kappa * (p.theta.eval(t) - z) + p.sigma * sqdt * x;
        values.push(z);
    }
    SamplePath {
        grid: *grid,
        values,
    }
}
