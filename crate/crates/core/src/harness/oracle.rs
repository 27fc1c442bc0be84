//! Brute-force reference for the deterministic control problem.
//!
//! Each leaf receives a piecewise-constant share of the source inflow. The
//! supply response of every share interval is simulated on the chain from
//! the source to that leaf, which turns the tracking objective into a
//! nonnegative least-squares problem per leaf. It is solved by projected
//! coordinate descent.

use crate::control::{ControlContext, ControlPlan, ControlPolicy, ObservationTable};
use crate::demand::{jacobi_mean, jacobi_second_moment};
use crate::netgraph::{Arc, Network, NodeId, NodeKind};
use crate::pdesim::{FnControl, Grids, PdeConfig, Simulator};

use super::metrics::window;
use super::monte_carlo::first_arrivals;
use super::scenario::{DemandKind, Scenario};
use super::HarnessError;

pub const MAX_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub points: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            points: MAX_POINTS,
            tol: 1e-6,
            max_sweeps: 20_000,
        }
    }
}

/// Expected squared tracking gap `Σ_r ∫ E[(D_r − f_r)²] dt` on the common grid,
/// with demand moments conditioned on the initial values.
#[derive(Debug, Clone)]
pub struct TrackingObjective {
    pub times: Vec<f64>,
    pub dt: f64,
    pub windows: Vec<std::ops::Range<usize>>,
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
}

impl TrackingObjective {
    pub fn new(scenario: &Scenario, net: &Network, grids: &Grids) -> Result<Self, HarnessError> {
        let times = grids.common.clone();
        let windows = first_arrivals(net, scenario.t0, scenario.t_end)?
            .into_iter()
            .map(|t| window(&times, t, scenario.t_end))
            .collect::<Result<Vec<_>, _>>()?;
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        for (leaf, w) in scenario.leaves.iter().zip(&windows) {
            let p = &leaf.jacobi;
            m1.push(
                times[w.clone()]
                    .iter()
                    .map(|&t| jacobi_mean(p, scenario.t0, p.d0, t))
                    .collect(),
            );
            m2.push(
                times[w.clone()]
                    .iter()
                    .map(|&t| jacobi_second_moment(p, scenario.t0, p.d0, t))
                    .collect(),
            );
        }
        Ok(Self {
            times,
            dt: grids.dt_common,
            windows,
            m1,
            m2,
        })
    }

    /// `supplies[r]` lives on the full common grid.
    pub fn value(&self, supplies: &[&[f64]]) -> f64 {
        let mut total = 0.0;
        for (r, w) in self.windows.iter().enumerate() {
            let f = &supplies[r][w.clone()];
            for k in 0..f.len() {
                let var = self.m2[r][k] - self.m1[r][k] * self.m1[r][k];
                total += var + (f[k] - self.m1[r][k]).powi(2);
            }
        }
        total * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Interval edges of the share grid.
    pub edges: Vec<f64>,
    /// `[leaf][interval]` inflow share routed to each leaf.
    pub shares: Vec<Vec<f64>>,
    /// Source inflow per interval.
    pub control: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
    /// Largest projected gradient component at exit.
    pub stationarity: f64,
}

impl OracleResult {
    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

fn leaf_chain(net: &Network, leaf: NodeId) -> Result<Network, HarnessError> {
    let path = net.path_arcs(net.source(), leaf)?;
    let mut kinds = vec![NodeKind::Source];
    kinds.extend(std::iter::repeat_n(NodeKind::Inner, path.len() - 1));
    kinds.push(NodeKind::Demand);
    let arcs = path
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let arc = net.arc(a);
            Arc::new(i, i + 1, arc.velocity.clone(), arc.damping.clone()).with_length(arc.length)
        })
        .collect();
    Ok(Network::new(kinds, arcs)?)
}

struct CdOutcome {
    w: Vec<f64>,
    sweeps: usize,
    residual: f64,
    converged: bool,
}

/// Nonnegative least squares `min ½wᵀQw − bᵀw` by coordinate descent.
fn projected_cd(q: &[Vec<f64>], b: &[f64], tol: f64, max_sweeps: usize) -> CdOutcome {
    let n = b.len();
    let mut w = vec![0.0; n];
    let mut grad: Vec<f64> = b.iter().map(|x| -x).collect();
    let projected = |w: &[f64], grad: &[f64]| {
        (0..n)
            .filter(|&c| q[c][c] > 0.0)
            .map(|c| {
                if w[c] > 0.0 {
                    grad[c].abs()
                } else {
                    (-grad[c]).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    };
    for sweep in 1..=max_sweeps {
        for c in 0..n {
            if q[c][c] <= 0.0 {
                continue;
            }
            let new = (w[c] - grad[c] / q[c][c]).max(0.0);
            let delta = new - w[c];
            if delta != 0.0 {
                w[c] = new;
                for (g, qrow) in grad.iter_mut().zip(q) {
                    *g += qrow[c] * delta;
                }
            }
        }
        let res = projected(&w, &grad);
        if res <= tol {
            return CdOutcome {
                w,
                sweeps: sweep,
                residual: res,
                converged: true,
            };
        }
    }
    let residual = projected(&w, &grad);
    CdOutcome {
        w,
        sweeps: max_sweeps,
        residual,
        converged: false,
    }
}

/// Minimizes the deterministic tracking objective over piecewise-constant shares.
pub fn oracle_control_optimizer(
    scenario: &Scenario,
    profile: &str,
    opts: &OracleOptions,
) -> Result<OracleResult, HarnessError> {
    if opts.points == 0 || opts.points > MAX_POINTS {
        return Err(HarnessError::InvalidArgument(format!(
            "oracle needs between 1 and {MAX_POINTS} grid points"
        )));
    }
    let net = scenario.network(profile)?;
    let cfg = scenario.pde_config();
    let grids = Grids::build(&net, scenario.t0, scenario.t_end, &cfg)?;
    let objective = TrackingObjective::new(scenario, &net, &grids)?;
    let sub_cfg = PdeConfig {
        dt_common: Some(grids.dt_common),
        ..cfg
    };

    let n = opts.points;
    let h = (scenario.t_end - scenario.t0) / n as f64;
    let edges: Vec<f64> = (0..=n).map(|c| scenario.t0 + c as f64 * h).collect();
    let interval = |t: f64| (((t - scenario.t0) / h).floor() as usize).min(n - 1);

    let mut shares = Vec::new();
    let mut sweeps = 0;
    let mut stationarity: f64 = 0.0;
    let mut supplies = Vec::new();
    let mut converged = true;
    for (r, &leaf) in net.demand_nodes().iter().enumerate() {
        let chain = leaf_chain(&net, leaf)?;
        let sim = Simulator::new(&chain, scenario.t0, scenario.t_end, &sub_cfg)?;
        let w = objective.windows[r].clone();
        let shares_one = vec![1.0; chain.arc_count()];
        let responses: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let control = FnControl {
                    inflow: |t: f64| if interval(t) == c { 1.0 } else { 0.0 },
                    shares: shares_one.clone(),
                };
                let traj = sim.run(&control);
                traj.supply(0)[w.clone()].to_vec()
            })
            .collect();
        let q: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        responses[a]
                            .iter()
                            .zip(&responses[b])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            * objective.dt
                    })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = responses
            .iter()
            .map(|resp| {
                resp.iter()
                    .zip(&objective.m1[r])
                    .map(|(x, m)| x * m)
                    .sum::<f64>()
                    * objective.dt
            })
            .collect();
        let CdOutcome {
            w: x,
            sweeps: s,
            residual,
            converged: ok,
        } = projected_cd(&q, &b, opts.tol, opts.max_sweeps);
        converged &= ok;
        sweeps = sweeps.max(s);
        stationarity = stationarity.max(residual);
        let mut supply = vec![0.0; objective.times.len()];
        for (c, resp) in responses.iter().enumerate() {
            for (k, v) in resp.iter().enumerate() {
                supply[w.start + k] += x[c] * v;
            }
        }
        supplies.push(supply);
        shares.push(x);
    }
    let refs: Vec<&[f64]> = supplies.iter().map(|s| s.as_slice()).collect();
    let control = (0..n).map(|c| shares.iter().map(|s| s[c]).sum()).collect();
    let result = OracleResult {
        edges,
        shares,
        control,
        objective: objective.value(&refs),
        sweeps,
        stationarity,
    };
    if converged {
        Ok(result)
    } else {
        Err(HarnessError::NotConverged {
            best: Box::new(result),
        })
    }
}

/// Oracle against the explicit single-observation control.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub oracle: OracleResult,
    /// Explicit inflow at the interval midpoints.
    pub explicit_control: Vec<f64>,
    /// Intervals whose material reaches every leaf before the horizon.
    pub compared: Vec<usize>,
    pub relative_l2: f64,
    pub explicit_objective: f64,
}

pub fn compare_with_explicit(
    scenario: &Scenario,
    profile: &str,
    opts: &OracleOptions,
) -> Result<OracleComparison, HarnessError> {
    let oracle = oracle_control_optimizer(scenario, profile, opts)?;
    let net = scenario.network(profile)?;
    let models = scenario.demand_models(DemandKind::Jacobi);
    let policy = ControlPolicy::ms1(scenario.t0);
    let sim = Simulator::new(&net, scenario.t0, scenario.t_end, &scenario.pde_config())?;
    let ctx = ControlContext::new(&net, &models, &policy, scenario.t0, scenario.t_end)?
        .with_delivery_slack(sim.grids().delivery_slack(&net));
    let obs = ObservationTable::initial(&models, &policy.schedule);

    let explicit_control: Vec<f64> = oracle
        .midpoints()
        .iter()
        .map(|&t| ctx.optimal_inflow(&obs, t))
        .collect();
    let tm = ctx.transit();
    let mut compared = Vec::new();
    for c in 0..explicit_control.len() {
        let end = oracle.edges[c + 1];
        let mut inside = true;
        for &v in net.demand_nodes() {
            inside &= tm.path_timing(net.source(), v, end)?.arrival <= scenario.t_end;
        }
        if inside {
            compared.push(c);
        }
    }
    let diff: f64 = compared
        .iter()
        .map(|&c| (oracle.control[c] - explicit_control[c]).powi(2))
        .sum();
    let norm: f64 = compared.iter().map(|&c| explicit_control[c].powi(2)).sum();
    let relative_l2 = (diff / norm).sqrt();

    let plan = ControlPlan::build(&ctx, &sim.grids().arc_times)?;
    let traj = sim.run(&plan.with_observations(&obs));
    let objective = TrackingObjective::new(scenario, &net, sim.grids())?;
    let refs: Vec<&[f64]> = (0..traj.leaves.len()).map(|r| traj.supply(r)).collect();
    Ok(OracleComparison {
        oracle,
        explicit_control,
        compared,
        relative_l2,
        explicit_objective: objective.value(&refs),
    })
}
