//! Time-dependent arc coefficients, characteristic transit times, damping
//! factors and the path compensation factors γ.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{ArcId, NetError, Network, NodeId};

/// Absolute tolerance on Λ-values when inverting antiderivatives.
pub const TOL_ROOT: f64 = 1e-12;

/// A scalar coefficient of time from a family with closed-form antiderivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CoefFn {
    #[serde(rename = "const")]
    Constant { value: f64 },
    /// `offset + amplitude * sin(omega * t + phase)`
    #[serde(rename = "sin")]
    Sinusoid {
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `values[0]` before `breakpoints[0]`, `values[i]` on `[breakpoints[i-1], breakpoints[i])`.
    #[serde(rename = "pwc")]
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl CoefFn {
    pub fn constant(value: f64) -> Self {
        CoefFn::Constant { value }
    }

    pub fn sinusoid(offset: f64, amplitude: f64, omega: f64, phase: f64) -> Self {
        CoefFn::Sinusoid {
            offset,
            amplitude,
            omega,
            phase,
        }
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Self {
        CoefFn::PiecewiseConstant {
            breakpoints,
            values,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Structural sanity: finite parameters, matching piece counts, sorted breaks.
    pub fn check(&self) -> Result<(), String> {
        match self {
            CoefFn::Constant { value } if !value.is_finite() => Err("non-finite value".into()),
            CoefFn::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } if ![offset, amplitude, omega, phase]
                .iter()
                .all(|x| x.is_finite()) =>
            {
                Err("non-finite sinusoid parameter".into())
            }
            CoefFn::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(format!(
                        "expected {} values for {} breakpoints, got {}",
                        breakpoints.len() + 1,
                        breakpoints.len(),
                        values.len()
                    ));
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err("breakpoints must be strictly increasing".into());
                }
                if !breakpoints.iter().chain(values).all(|x| x.is_finite()) {
                    return Err("non-finite piecewise parameter".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CoefFn::Constant { .. })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            CoefFn::Constant { value } => *value,
            CoefFn::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => offset + amplitude * (omega * t + phase).sin(),
            CoefFn::PiecewiseConstant {
                breakpoints,
                values,
            } => values[breakpoints.partition_point(|&b| b <= t)],
        }
    }

    /// `∫_a^b f`, signed (negative when `b < a`).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            CoefFn::Constant { value } => value * (b - a),
            CoefFn::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => {
                if *omega == 0.0 {
                    (offset + amplitude * phase.sin()) * (b - a)
                } else {
                    offset * (b - a)
                        - amplitude / omega
                            * ((omega * b + phase).cos() - (omega * a + phase).cos())
                }
            }
            CoefFn::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if b < a {
                    return -self.integral(b, a);
                }
                let mut total = 0.0;
                let mut lo = a;
                let mut idx = breakpoints.partition_point(|&p| p <= a);
                while idx < breakpoints.len() && breakpoints[idx] < b {
                    total += values[idx] * (breakpoints[idx] - lo);
                    lo = breakpoints[idx];
                    idx += 1;
                }
                total + values[idx] * (b - lo)
            }
        }
    }

    /// Exact minimum and maximum on `[a, b]`.
    pub fn bounds_on(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            CoefFn::Constant { value } => (*value, *value),
            CoefFn::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => {
                let mut lo = self.eval(a).min(self.eval(b));
                let mut hi = self.eval(a).max(self.eval(b));
                if *omega != 0.0 {
                    // Critical points where omega t + phase = pi/2 + k pi.
                    let (u0, u1) = {
                        let (x, y) = (omega * a + phase, omega * b + phase);
                        (x.min(y), x.max(y))
                    };
                    let k_start = ((u0 - PI / 2.0) / PI).ceil() as i64;
                    let k_end = ((u1 - PI / 2.0) / PI).floor() as i64;
                    if k_end >= k_start {
                        // At least one interior extremum; with two or more both signs occur.
                        let peak = offset + amplitude.abs();
                        let trough = offset - amplitude.abs();
                        if k_end > k_start {
                            lo = lo.min(trough);
                            hi = hi.max(peak);
                        } else {
                            let v = offset + amplitude * (PI / 2.0 + k_start as f64 * PI).sin();
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                (lo, hi)
            }
            CoefFn::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let first = breakpoints.partition_point(|&p| p <= a);
                let last = breakpoints.partition_point(|&p| p <= b);
                values[first..=last]
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            }
        }
    }

    /// `scale * f(t) + shift` in the same family.
    pub fn affine(&self, scale: f64, shift: f64) -> CoefFn {
        match self {
            CoefFn::Constant { value } => CoefFn::constant(scale * value + shift),
            CoefFn::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => CoefFn::sinusoid(scale * offset + shift, scale * amplitude, *omega, *phase),
            CoefFn::PiecewiseConstant {
                breakpoints,
                values,
            } => CoefFn::piecewise(
                breakpoints.clone(),
                values.iter().map(|v| scale * v + shift).collect(),
            ),
        }
    }

    /// A lower bound valid for all t, used to bracket roots.
    fn global_floor(&self) -> f64 {
        match self {
            CoefFn::Constant { value } => *value,
            CoefFn::Sinusoid {
                offset, amplitude, ..
            } => offset - amplitude.abs(),
            CoefFn::PiecewiseConstant { values, .. } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Points where the function has kinks or jumps (for quadrature splitting).
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            CoefFn::PiecewiseConstant { breakpoints, .. } => breakpoints,
            _ => &[],
        }
    }
}

/// Solves `∫_{t_ref}^{t} f = y` for `t`. `f` must be strictly positive around
/// the solution so that the antiderivative is invertible.
pub fn inverse_antiderivative(f: &CoefFn, t_ref: f64, y: f64) -> f64 {
    if y == 0.0 {
        return t_ref;
    }
    if let CoefFn::Constant { value } = f {
        return t_ref + y / value;
    }
    let g = |t: f64| f.integral(t_ref, t) - y;

    // Bracket the root. A positive global floor gives it directly, otherwise grow.
    let floor = f.global_floor();
    let (mut lo, mut hi) = if floor > 0.0 {
        let reach = y / floor;
        if y > 0.0 {
            (t_ref, t_ref + reach)
        } else {
            (t_ref + reach, t_ref)
        }
    } else {
        let mut step = y.abs() / f.eval(t_ref).abs().max(1e-3);
        let dir = y.signum();
        let mut far = t_ref + dir * step;
        while g(far) * dir < 0.0 {
            step *= 2.0;
            far = t_ref + dir * step;
        }
        (t_ref.min(far), t_ref.max(far))
    };

    // Safeguarded Newton: g is increasing with derivative f(t).
    let mut t = t_ref + y / f.eval(t_ref).max(1e-12);
    if !(t > lo && t < hi) {
        t = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let val = g(t);
        if val.abs() <= TOL_ROOT {
            return t;
        }
        if val > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = f.eval(t);
        let mut next = t - val / slope;
        if !(slope > 0.0) || !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

/// `exp(-∫_{t_a}^{t_b} μ)`.
pub fn damping_factor(mu: &CoefFn, t_a: f64, t_b: f64) -> f64 {
    (-mu.integral(t_a, t_b)).exp()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeError {
    #[error("transit completes at t = {arrival} after the horizon end {t_end}")]
    OutOfHorizon { arrival: f64, t_end: f64 },
    #[error(transparent)]
    Path(#[from] NetError),
}

/// Arrival time and compensation factor for a path segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTiming {
    pub arrival: f64,
    pub gamma: f64,
}

/// Transit-time queries over a network restricted to a finite horizon.
#[derive(Debug, Clone, Copy)]
pub struct TransitMap<'a> {
    net: &'a Network,
    t0: f64,
    t_end: f64,
}

impl<'a> TransitMap<'a> {
    pub fn new(net: &'a Network, t0: f64, t_end: f64) -> Self {
        Self { net, t0, t_end }
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    fn bounded(&self, t: f64) -> Result<f64, TimeError> {
        if t > self.t_end + TOL_ROOT {
            Err(TimeError::OutOfHorizon {
                arrival: t,
                t_end: self.t_end,
            })
        } else {
            Ok(t)
        }
    }

    /// Arrival at the head of `arc` for material entering at `t_dep`, ignoring the horizon.
    pub fn arc_arrival(&self, arc: ArcId, t_dep: f64) -> f64 {
        let a = self.net.arc(arc);
        inverse_antiderivative(&a.velocity, t_dep, a.length)
    }

    /// Departure from the tail of `arc` for material reaching its head at `t_arr`.
    pub fn arc_departure(&self, arc: ArcId, t_arr: f64) -> f64 {
        let a = self.net.arc(arc);
        inverse_antiderivative(&a.velocity, t_arr, -a.length)
    }

    pub fn transit_time(&self, arc: ArcId, t_dep: f64) -> Result<f64, TimeError> {
        self.bounded(self.arc_arrival(arc, t_dep))
    }

    /// Arrival time and γ along η(from, to), without the horizon check.
    pub fn path_timing(&self, from: NodeId, to: NodeId, t: f64) -> Result<PathTiming, NetError> {
        let mut now = t;
        let mut gamma = 1.0;
        for a in self.net.path_arcs(from, to)? {
            let arc = self.net.arc(a);
            let next = inverse_antiderivative(&arc.velocity, now, arc.length);
            gamma *= arc.velocity.eval(now) / arc.velocity.eval(next)
                * arc.damping.integral(now, next).exp();
            now = next;
        }
        Ok(PathTiming {
            arrival: now,
            gamma,
        })
    }

    /// t̃(v_i, v_j, t).
    pub fn node_arrival_time(&self, from: NodeId, to: NodeId, t: f64) -> Result<f64, TimeError> {
        let timing = self.path_timing(from, to, t)?;
        self.bounded(timing.arrival)
    }

    /// t̃⁻¹(v_i, v_j, t_arr): when material reaching `to` at `t_arr` left `from`.
    /// May precede the horizon start (material that was never injected).
    pub fn injection_time(&self, from: NodeId, to: NodeId, t_arr: f64) -> Result<f64, TimeError> {
        let path = self.net.path_arcs(from, to)?;
        Ok(path
            .iter()
            .rev()
            .fold(t_arr, |now, &a| self.arc_departure(a, now)))
    }

    pub fn damping_factor(&self, arc: ArcId, t_a: f64, t_b: f64) -> f64 {
        damping_factor(&self.net.arc(arc).damping, t_a, t_b)
    }

    /// γ_i^r(t): velocity ratios and inverse damping along η(v_i, v_r).
    pub fn gamma(&self, from: NodeId, to: NodeId, t: f64) -> Result<f64, TimeError> {
        let timing = self.path_timing(from, to, t)?;
        self.bounded(timing.arrival)?;
        Ok(timing.gamma)
    }
}
