//! Transport simulation on the network: exact-shift upwind steps at CFL one on
//! per-arc adaptive time grids, multiplicative damping, and flux exchange at
//! the nodes on a common time grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{ArcId, Network, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("damping factor 1 - dt*mu = {factor} is negative on arc {arc} at t = {t}; refine dx")]
    NegativeDampingFactor { arc: usize, t: f64, factor: f64 },
    #[error("invalid discretization: {0}")]
    InvalidConfig(String),
}

/// Source inflow and node routing consulted by the simulator.
pub trait FlowControl {
    /// Injected flux `u` at step `step` of the source arc's grid (time `t`).
    fn inflow(&self, step: usize, t: f64) -> f64;
    /// Share of the tail node's incoming flux `f_in` routed into `arc` at step
    /// `step` of that arc's grid (time `t`).
    fn share(&self, arc: ArcId, step: usize, t: f64, f_in: f64) -> f64;
}

/// Discretization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub dx: f64,
    /// Common grid step; defaults to `dx / max λ`.
    #[serde(default)]
    pub dt_common: Option<f64>,
    /// Use `exp(-∫μ)` per step instead of `1 - Δt μ`.
    #[serde(default)]
    pub exact_damping: bool,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            dx: 5e-3,
            dt_common: None,
            exact_damping: false,
        }
    }
}

/// One transport-plus-damping step: shift right by one cell with `boundary`
/// entering the first cell, then scale by `1 - dt * mu`.
pub fn step_arc(densities: &mut [f64], boundary: f64, dt: f64, mu: f64) -> Result<(), PdeError> {
    let factor = 1.0 - dt * mu;
    if factor < 0.0 {
        return Err(PdeError::NegativeDampingFactor {
            arc: 0,
            t: f64::NAN,
            factor,
        });
    }
    if densities.is_empty() {
        return Ok(());
    }
    densities.rotate_right(1);
    densities[0] = boundary;
    densities.iter_mut().for_each(|z| *z *= factor);
    Ok(())
}

/// Linear interpolation of `(xs, ys)` at increasing `queries`, constant outside.
pub fn resample(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(queries.len());
    let mut k = 0;
    for &q in queries {
        while k + 1 < xs.len() && xs[k + 1] <= q {
            k += 1;
        }
        out.push(interp_at(xs, ys, k, q));
    }
    out
}

fn interp_at(xs: &[f64], ys: &[f64], k: usize, q: f64) -> f64 {
    if q <= xs[0] {
        return ys[0];
    }
    if k + 1 >= xs.len() {
        return ys[xs.len() - 1];
    }
    let w = (q - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] * (1.0 - w) + ys[k + 1] * w
}

/// Linear interpolation on a uniform grid `t0 + k*h`.
fn interp_uniform(t0: f64, h: f64, ys: &[f64], q: f64) -> f64 {
    let x = (q - t0) / h;
    if x <= 0.0 {
        return ys[0];
    }
    let k = x.floor() as usize;
    if k + 1 >= ys.len() {
        return ys[ys.len() - 1];
    }
    let w = x - k as f64;
    ys[k] * (1.0 - w) + ys[k + 1] * w
}

/// Arc grids and the common exchange grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    /// Per-arc times with `t_{j+1} = t_j + Δx_l / λ_l(t_j)`, reaching at least `t_end`.
    pub arc_times: Vec<Vec<f64>>,
    /// Cells per arc.
    pub cells: Vec<usize>,
    pub common_t0: f64,
    pub dt_common: f64,
    pub common: Vec<f64>,
}

impl Grids {
    pub fn build(net: &Network, t0: f64, t_end: f64, cfg: &PdeConfig) -> Result<Self, PdeError> {
        if !(cfg.dx > 0.0) || !(t_end > t0) {
            return Err(PdeError::InvalidConfig("need dx > 0 and t_end > t0".into()));
        }
        let mut arc_times = Vec::with_capacity(net.arc_count());
        let mut cells = Vec::with_capacity(net.arc_count());
        let mut lam_max: f64 = 0.0;
        for arc in net.arcs() {
            let n = (arc.length / cfg.dx).round().max(1.0) as usize;
            let dx = arc.length / n as f64;
            lam_max = lam_max.max(arc.velocity.bounds_on(t0, t_end).1);
            let mut times = vec![t0];
            let mut t = t0;
            while t < t_end {
                let lam = arc.velocity.eval(t);
                if !(lam > 0.0) {
                    return Err(PdeError::InvalidConfig(format!(
                        "non-positive velocity at t = {t}"
                    )));
                }
                t += dx / lam;
                times.push(t);
            }
            arc_times.push(times);
            cells.push(n);
        }
        let dt_common = cfg.dt_common.unwrap_or(cfg.dx / lam_max);
        if !(dt_common > 0.0) {
            return Err(PdeError::InvalidConfig(
                "common grid step must be positive".into(),
            ));
        }
        let steps = ((t_end - t0) / dt_common + 1e-9).floor() as usize;
        let common = (0..=steps).map(|j| t0 + j as f64 * dt_common).collect();
        Ok(Self {
            arc_times,
            cells,
            common_t0: t0,
            dt_common,
            common,
        })
    }
}

impl Grids {
    /// Largest arc step times the longest source-to-leaf path, a bound on how
    /// far discrete arrival times can drift from exact ones.
    pub fn delivery_slack(&self, net: &Network) -> f64 {
        let step = self
            .arc_times
            .iter()
            .flat_map(|t| t.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max);
        let depth = net
            .demand_nodes()
            .iter()
            .map(|&v| net.depth(v))
            .max()
            .unwrap_or(1);
        step * depth as f64
    }
}

/// Result of one network simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Common grid times.
    pub times: Vec<f64>,
    /// Source inflow on the common grid (held from the latest source-arc step).
    pub inflow: Vec<f64>,
    /// Incoming flux of every node on the common grid; the source carries `u`.
    pub node_influx: Vec<Vec<f64>>,
    /// Demand nodes in network order.
    pub leaves: Vec<NodeId>,
    /// Inlet flux of every arc on its own grid.
    pub arc_inlet_flux: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn supply(&self, leaf: usize) -> &[f64] {
        &self.node_influx[self.leaves[leaf].0]
    }
}

#[derive(Debug, Clone)]
struct ArcCache {
    lam: Vec<f64>,
    /// `ln` of the cumulative damping product before each step.
    log_damp: Vec<f64>,
}

/// Reusable simulator for one network, horizon and discretization.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    net: &'a Network,
    grids: Grids,
    cache: Vec<ArcCache>,
    /// `λ_m` on the common grid for arcs leaving inner nodes.
    lam_common: Vec<Vec<f64>>,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a Network, t0: f64, t_end: f64, cfg: &PdeConfig) -> Result<Self, PdeError> {
        let grids = Grids::build(net, t0, t_end, cfg)?;
        Self::with_grids(net, grids, cfg.exact_damping)
    }

    /// Reuses grids built for a network with the same velocities.
    pub fn with_grids(
        net: &'a Network,
        grids: Grids,
        exact_damping: bool,
    ) -> Result<Self, PdeError> {
        let mut cache = Vec::with_capacity(net.arc_count());
        for (a, arc) in net.arcs().iter().enumerate() {
            let times = &grids.arc_times[a];
            let lam: Vec<f64> = times.iter().map(|&t| arc.velocity.eval(t)).collect();
            let mut log_damp = Vec::with_capacity(times.len());
            let mut acc = 0.0;
            log_damp.push(acc);
            for w in times.windows(2) {
                let factor = if exact_damping {
                    (-arc.damping.integral(w[0], w[1])).exp()
                } else {
                    1.0 - (w[1] - w[0]) * arc.damping.eval(w[0])
                };
                if factor < 0.0 {
                    return Err(PdeError::NegativeDampingFactor {
                        arc: a,
                        t: w[0],
                        factor,
                    });
                }
                acc += factor.max(f64::MIN_POSITIVE).ln();
                log_damp.push(acc);
            }
            cache.push(ArcCache { lam, log_damp });
        }
        let lam_common = net
            .arcs()
            .iter()
            .map(|arc| {
                if net.kind(arc.tail) == NodeKind::Inner {
                    grids.common.iter().map(|&t| arc.velocity.eval(t)).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        Ok(Self {
            net,
            grids,
            cache,
            lam_common,
        })
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    /// Advances every arc over the whole horizon in topological order; tree
    /// causality means an arc only needs its tail node's incoming flux.
    pub fn run<C: FlowControl + ?Sized>(&self, control: &C) -> Trajectory {
        let net = self.net;
        let g = &self.grids;
        let nc = g.common.len();
        let mut node_influx: Vec<Vec<f64>> = vec![Vec::new(); net.node_count()];
        let mut arc_inlet_flux = vec![Vec::new(); net.arc_count()];
        let mut inflow = vec![0.0; nc];

        for &a in net.arcs_topological() {
            let arc = net.arc(a);
            let times = &g.arc_times[a.0];
            let cache = &self.cache[a.0];
            let n = g.cells[a.0];
            let steps = times.len();

            let mut boundary = Vec::with_capacity(steps);
            if net.kind(arc.tail) == NodeKind::Source {
                for (j, &t) in times.iter().enumerate() {
                    boundary.push(control.inflow(j, t) / cache.lam[j]);
                }
                let u: Vec<f64> = boundary
                    .iter()
                    .zip(&cache.lam)
                    .map(|(z, l)| z * l)
                    .collect();
                let mut k = 0;
                for (i, &tc) in g.common.iter().enumerate() {
                    while k + 1 < steps && times[k + 1] <= tc {
                        k += 1;
                    }
                    inflow[i] = u[k];
                }
                node_influx[arc.tail.0] = inflow.clone();
            } else {
                let f_in = &node_influx[arc.tail.0];
                let lam_c = &self.lam_common[a.0];
                let density_in: Vec<f64> = f_in.iter().zip(lam_c).map(|(f, l)| f / l).collect();
                for (j, &t) in times.iter().enumerate() {
                    let f_t = interp_uniform(g.common_t0, g.dt_common, f_in, t);
                    let alpha = control.share(a, j, t, f_t);
                    boundary.push(alpha * interp_uniform(g.common_t0, g.dt_common, &density_in, t));
                }
            }
            arc_inlet_flux[a.0] = boundary
                .iter()
                .zip(&cache.lam)
                .map(|(z, l)| z * l)
                .collect();

            // Exact shift: the outlet after step J holds the boundary value of step J - n.
            let outflux: Vec<f64> = (0..steps)
                .map(|jj| {
                    if jj < n {
                        0.0
                    } else {
                        boundary[jj - n]
                            * (cache.log_damp[jj] - cache.log_damp[jj - n]).exp()
                            * cache.lam[jj]
                    }
                })
                .collect();
            node_influx[arc.head.0] = resample(times, &outflux, &g.common);
        }

        Trajectory {
            times: g.common.clone(),
            inflow,
            node_influx,
            leaves: net.demand_nodes().to_vec(),
            arc_inlet_flux,
        }
    }

    /// `∫ |f_in − Σ_k f_out,k| dt` at an inner node over the common grid.
    pub fn coupling_residual(&self, traj: &Trajectory, node: NodeId) -> f64 {
        let g = &self.grids;
        let f_in = &traj.node_influx[node.0];
        let mut total = vec![0.0; g.common.len()];
        for &k in self.net.outgoing_arcs(node) {
            let out = resample(&g.arc_times[k.0], &traj.arc_inlet_flux[k.0], &g.common);
            total.iter_mut().zip(out).for_each(|(s, o)| *s += o);
        }
        f_in.iter()
            .zip(&total)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * g.dt_common
    }
}

/// Convenience wrapper building a [`Simulator`] for a single run.
pub fn run_simulation<C: FlowControl + ?Sized>(
    net: &Network,
    control: &C,
    t0: f64,
    t_end: f64,
    cfg: &PdeConfig,
) -> Result<Trajectory, PdeError> {
    Ok(Simulator::new(net, t0, t_end, cfg)?.run(control))
}

/// Fixed inflow function and constant routing shares, mainly for tests.
pub struct FnControl<F: Fn(f64) -> f64> {
    pub inflow: F,
    /// Share per arc index; arcs leaving the source are ignored.
    pub shares: Vec<f64>,
}

impl<F: Fn(f64) -> f64> FlowControl for FnControl<F> {
    fn inflow(&self, _step: usize, t: f64) -> f64 {
        (self.inflow)(t)
    }

    fn share(&self, arc: ArcId, _step: usize, _t: f64, _f_in: f64) -> f64 {
        self.shares[arc.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timefuncs::{CoefFn, TransitMap};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn c(v: f64) -> CoefFn {
        CoefFn::constant(v)
    }

    #[test]
    fn step_arc_examples() {
        let mut z = [1.0, 2.0, 3.0];
        step_arc(&mut z, 4.0, 0.1, 0.0).unwrap();
        assert_eq!(z, [4.0, 1.0, 2.0]);

        let mut z = [1.0, 2.0];
        step_arc(&mut z, 3.0, 1.0 / 2800.0, 0.4).unwrap();
        let f = 1.0 - 0.4 / 2800.0;
        assert_eq!(z, [3.0 * f, 1.0 * f]);

        assert!(matches!(
            step_arc(&mut z, 0.0, 1.0, 2.0),
            Err(PdeError::NegativeDampingFactor { .. })
        ));
    }

    #[test]
    fn fast_outlet_matches_explicit_stepping() {
        let net = Network::chain(
            [CoefFn::sinusoid(14.0, 1.0, 2.0 * PI, 0.0), c(12.0)],
            [CoefFn::sinusoid(0.4, 0.2, PI, 0.0), c(0.5)],
        );
        let cfg = PdeConfig {
            dx: 0.02,
            ..Default::default()
        };
        let sim = Simulator::new(&net, 0.0, 1.0, &cfg).unwrap();
        let ctl = FnControl {
            inflow: |t: f64| 1.0 + t.sin(),
            shares: vec![1.0, 1.0],
        };
        let traj = sim.run(&ctl);

        // Replay arc 0 cell by cell.
        let arc = net.arc(ArcId(0));
        let times = &sim.grids().arc_times[0];
        let mut z = vec![0.0; sim.grids().cells[0]];
        let mut outflux = vec![0.0];
        for w in times.windows(2) {
            let lam = arc.velocity.eval(w[0]);
            step_arc(
                &mut z,
                (1.0 + w[0].sin()) / lam,
                w[1] - w[0],
                arc.damping.eval(w[0]),
            )
            .unwrap();
            outflux.push(z[z.len() - 1] * arc.velocity.eval(w[1]));
        }
        let expected = resample(times, &outflux, &sim.grids().common);
        for (a, b) in traj.node_influx[1].iter().zip(&expected) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_control_gives_zero_supply() {
        let net = Network::one_to_two([c(14.0), c(14.0), c(14.0)], [c(0.0), c(0.0), c(0.0)]);
        let ctl = FnControl {
            inflow: |_| 0.0,
            shares: vec![1.0, 0.5, 0.5],
        };
        let traj = run_simulation(&net, &ctl, 0.0, 2.5, &PdeConfig::default()).unwrap();
        assert!(traj
            .supply(0)
            .iter()
            .chain(traj.supply(1))
            .all(|&f| f == 0.0));
    }

    #[test]
    fn steady_inflow_reaches_steady_supply() {
        let net = Network::one_to_two([c(14.0), c(14.0), c(14.0)], [c(0.0), c(0.0), c(0.0)]);
        let ctl = FnControl {
            inflow: |_| 1.0,
            shares: vec![1.0, 0.6, 0.4],
        };
        let sim = Simulator::new(&net, 0.0, 2.5, &PdeConfig::default()).unwrap();
        let traj = sim.run(&ctl);
        let late = traj.times.iter().position(|&t| t > 0.2).unwrap();
        for j in late..traj.times.len() {
            assert_relative_eq!(traj.supply(0)[j], 0.6, epsilon = 1e-12);
            assert_relative_eq!(traj.supply(1)[j], 0.4, epsilon = 1e-12);
        }
        assert!(sim.coupling_residual(&traj, NodeId(1)) < 1e-3);
    }

    #[test]
    fn constant_damping_over_one_transit() {
        let net = Network::chain([c(14.0), c(14.0)], [c(0.4), c(0.0)]);
        for dx in [1e-2, 5e-3] {
            let cfg = PdeConfig {
                dx,
                ..Default::default()
            };
            let traj = run_simulation(
                &net,
                &FnControl {
                    inflow: |_| 1.0,
                    shares: vec![1.0, 1.0],
                },
                0.0,
                1.0,
                &cfg,
            )
            .unwrap();
            let exact = (-0.4f64 / 14.0).exp();
            let last = *traj.node_influx[1].last().unwrap();
            assert!((last - exact).abs() < 0.4 * dx / 14.0, "{last} vs {exact}");
        }
    }

    #[test]
    fn pulse_arrives_on_characteristic() {
        let net = Network::chain(
            [
                CoefFn::sinusoid(14.0, 1.0, 2.0 * PI, 0.3),
                CoefFn::sinusoid(12.0, 1.0, 4.0 * PI, 0.0),
            ],
            [c(0.0), c(0.0)],
        );
        let cfg = PdeConfig::default();
        let sim = Simulator::new(&net, 0.0, 2.5, &cfg).unwrap();
        let t_in = sim.grids().arc_times[0][700];
        let ctl = FnControl {
            inflow: move |t: f64| if t == t_in { 1.0 } else { 0.0 },
            shares: vec![1.0, 1.0],
        };
        let traj = sim.run(&ctl);
        let s = traj.supply(0);
        let mass: f64 = s.iter().sum();
        let centroid = traj.times.iter().zip(s).map(|(t, f)| t * f).sum::<f64>() / mass;
        let predicted = TransitMap::new(&net, 0.0, 2.5)
            .node_arrival_time(NodeId(0), NodeId(2), t_in)
            .unwrap();
        let lam = net.arc(ArcId(1)).velocity.eval(predicted);
        assert!(
            (centroid - predicted).abs() * lam <= cfg.dx,
            "{centroid} vs {predicted}"
        );
    }
}
