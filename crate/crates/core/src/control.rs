//! Explicit optimal inflow and node distribution parameters for the three
//! information settings.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandModel, SamplePath};
use crate::netgraph::{ArcId, NetError, Network, NodeId, NodeKind};
use crate::pdesim::FlowControl;
use crate::timefuncs::TransitMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("every distribution parameter is non-positive")]
    AllNegative,
    #[error("invalid update schedule: {0}")]
    Schedule(String),
    #[error("expected one demand model per demand node ({expected}), got {got}")]
    DemandCount { expected: usize, got: usize },
    #[error("{0} is not an inner node")]
    NotInner(NodeId),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Information regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSetting {
    /// Single observation at the horizon start.
    Ms1,
    /// Periodic observations steering the injection; routing fixed at injection.
    Ms2,
    /// Periodic observations steering injection and node routing.
    Ms3,
}

impl ModelSetting {
    pub const ALL: [ModelSetting; 3] = [ModelSetting::Ms1, ModelSetting::Ms2, ModelSetting::Ms3];
}

impl fmt::Display for ModelSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ModelSetting::Ms1 => "MS1",
            ModelSetting::Ms2 => "MS2",
            ModelSetting::Ms3 => "MS3",
        })
    }
}

impl std::str::FromStr for ModelSetting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms1" => Ok(ModelSetting::Ms1),
            "ms2" => Ok(ModelSetting::Ms2),
            "ms3" => Ok(ModelSetting::Ms3),
            other => Err(format!("unknown model setting `{other}`")),
        }
    }
}

/// Demand observation times `t̂_1 = t0 < t̂_2 < …`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSchedule {
    times: Vec<f64>,
}

impl UpdateSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self, ControlError> {
        if times.is_empty() {
            return Err(ControlError::Schedule("no update times".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(ControlError::Schedule(
                "times must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    /// Only the initial observation.
    pub fn single(t0: f64) -> Self {
        Self { times: vec![t0] }
    }

    /// `n` updates after `t0`, evenly spaced so that the intervals partition `[t0, t_end]`
    /// into `n + 1` pieces.
    pub fn uniform(t0: f64, t_end: f64, n: usize) -> Self {
        let h = (t_end - t0) / (n + 1) as f64;
        Self {
            times: (0..=n).map(|k| t0 + k as f64 * h).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of `⌊s⌋`, the latest update time not after `s` (the first one if `s` precedes all).
    pub fn floor_index(&self, s: f64) -> usize {
        self.times.partition_point(|&t| t <= s).saturating_sub(1)
    }

    pub fn floor_update_time(&self, s: f64) -> f64 {
        self.times[self.floor_index(s)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub setting: ModelSetting,
    pub schedule: UpdateSchedule,
}

impl ControlPolicy {
    pub fn new(setting: ModelSetting, schedule: UpdateSchedule) -> Self {
        let schedule = match setting {
            ModelSetting::Ms1 => UpdateSchedule::single(schedule.times[0]),
            _ => schedule,
        };
        Self { setting, schedule }
    }

    pub fn ms1(t0: f64) -> Self {
        Self::new(ModelSetting::Ms1, UpdateSchedule::single(t0))
    }
}

/// Demand values observed at each update time, indexed `[leaf][update]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    values: Vec<Vec<f64>>,
}

impl ObservationTable {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    /// Reads each leaf path at the update times.
    pub fn from_paths(paths: &[SamplePath], schedule: &UpdateSchedule) -> Self {
        Self {
            values: paths
                .iter()
                .map(|p| schedule.times().iter().map(|&t| p.value_at(t)).collect())
                .collect(),
        }
    }

    /// Every observation equal to the initial demand of its leaf.
    pub fn initial(demands: &[DemandModel], schedule: &UpdateSchedule) -> Self {
        Self {
            values: demands
                .iter()
                .map(|d| vec![d.initial(); schedule.len()])
                .collect(),
        }
    }

    pub fn value(&self, leaf: usize, update: usize) -> f64 {
        self.values[leaf][update]
    }
}

/// One leaf's contribution to a control quantity: weight `gamma` times the
/// conditional mean `a·x + b`, where `x` is the leaf observation at update `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafTerm {
    pub leaf: usize,
    pub child: usize,
    pub tau: usize,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
}

impl LeafTerm {
    pub fn expectation(&self, obs: &ObservationTable) -> f64 {
        self.a * obs.value(self.leaf, self.tau) + self.b
    }

    pub fn weighted(&self, obs: &ObservationTable) -> f64 {
        self.gamma * self.expectation(obs)
    }
}

/// Sets negative shares to zero and rescales the rest to sum to one.
pub fn clamp_alphas(alphas: &[f64]) -> Result<Vec<f64>, ControlError> {
    let mut out = alphas.to_vec();
    // Each pass removes at least one negative entry.
    for _ in 0..=alphas.len() {
        let positive: f64 = out.iter().filter(|&&x| x > 0.0).sum();
        if !(positive > 0.0) {
            return Err(ControlError::AllNegative);
        }
        out.iter_mut()
            .for_each(|x| *x = if *x > 0.0 { *x / positive } else { 0.0 });
        if out.iter().all(|&x| x >= 0.0) {
            break;
        }
    }
    Ok(out)
}

/// Minimizer of `Σ (E_r − m_r)²` subject to `Σ γ_r m_r = f_in`.
pub fn optimal_allocation(gammas: &[f64], expectations: &[f64], f_in: f64) -> Vec<f64> {
    let g2: f64 = gammas.iter().map(|g| g * g).sum();
    let gap = f_in
        - gammas
            .iter()
            .zip(expectations)
            .map(|(g, e)| g * e)
            .sum::<f64>();
    gammas
        .iter()
        .zip(expectations)
        .map(|(g, e)| e + g / g2 * gap)
        .collect()
}

fn equal_split(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Ratio of per-child weighted expectations to their total.
pub fn ratio_alphas(terms: &[LeafTerm], n_children: usize, obs: &ObservationTable) -> Vec<f64> {
    let mut num = vec![0.0; n_children];
    for term in terms {
        num[term.child] += term.weighted(obs);
    }
    let total: f64 = num.iter().sum();
    if !(total > 0.0) {
        return equal_split(n_children);
    }
    num.iter().map(|n| n / total).collect()
}

/// Node allocation with fresh information for a given incoming flux.
pub fn ms3_alphas(
    terms: &[LeafTerm],
    n_children: usize,
    obs: &ObservationTable,
    f_in: f64,
) -> Vec<f64> {
    if !(f_in > 0.0) {
        return ratio_alphas(terms, n_children, obs);
    }
    let gammas: Vec<f64> = terms.iter().map(|t| t.gamma).collect();
    let expect: Vec<f64> = terms.iter().map(|t| t.expectation(obs)).collect();
    let m = optimal_allocation(&gammas, &expect, f_in);
    let mut num = vec![0.0; n_children];
    for (term, m) in terms.iter().zip(&m) {
        num[term.child] += term.gamma * m;
    }
    let raw: Vec<f64> = num.iter().map(|n| n / f_in).collect();
    clamp_alphas(&raw).unwrap_or_else(|_| equal_split(n_children))
}

/// Result of the fresh-information node allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ms3Allocation {
    pub leaves: Vec<NodeId>,
    /// Optimal leaf supplies `m_i^r`.
    pub supplies: Vec<f64>,
    pub gammas: Vec<f64>,
    pub expectations: Vec<f64>,
    /// Shares per outgoing arc before clamping.
    pub raw_alphas: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Network, demand models and policy bound together for control evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    tm: TransitMap<'a>,
    demands: &'a [DemandModel],
    policy: &'a ControlPolicy,
    slack: f64,
}

impl<'a> ControlContext<'a> {
    pub fn new(
        net: &'a Network,
        demands: &'a [DemandModel],
        policy: &'a ControlPolicy,
        t0: f64,
        t_end: f64,
    ) -> Result<Self, ControlError> {
        let expected = net.demand_nodes().len();
        if demands.len() != expected {
            return Err(ControlError::DemandCount {
                expected,
                got: demands.len(),
            });
        }
        Ok(Self {
            tm: TransitMap::new(net, t0, t_end),
            demands,
            policy,
            slack: crate::timefuncs::TOL_ROOT,
        })
    }

    /// Deliveries up to `t_end + slack` still count as within the horizon.
    /// A discretized transport may land material a few steps early, so
    /// simulations pass their time-step scale here.
    pub fn with_delivery_slack(mut self, slack: f64) -> Self {
        self.slack = slack.max(crate::timefuncs::TOL_ROOT);
        self
    }

    pub fn network(&self) -> &'a Network {
        self.tm.network()
    }

    pub fn transit(&self) -> &TransitMap<'a> {
        &self.tm
    }

    pub fn policy(&self) -> &'a ControlPolicy {
        self.policy
    }

    fn leaf_index(&self, v: NodeId) -> usize {
        self.network()
            .demand_nodes()
            .binary_search(&v)
            .expect("demand node")
    }

    fn term(
        &self,
        from: NodeId,
        leaf: NodeId,
        t: f64,
        tau: usize,
        child: usize,
        bounded: bool,
    ) -> Option<LeafTerm> {
        let timing = self.tm.path_timing(from, leaf, t).ok()?;
        if bounded && timing.arrival > self.tm.t_end() + self.slack {
            return None;
        }
        let idx = self.leaf_index(leaf);
        let (a, b) =
            self.demands[idx].mean_coefficients(self.policy.schedule.times()[tau], timing.arrival);
        Some(LeafTerm {
            leaf: idx,
            child,
            tau,
            gamma: timing.gamma,
            a,
            b,
        })
    }

    /// Update index conditioning the injection at `t_in`.
    fn inflow_tau(&self, t_in: f64) -> usize {
        match self.policy.setting {
            ModelSetting::Ms1 => 0,
            _ => self.policy.schedule.floor_index(t_in),
        }
    }

    /// Update index conditioning the routing at node `v` at time `t`.
    fn routing_tau(&self, v: NodeId, t: f64) -> usize {
        let schedule = &self.policy.schedule;
        match self.policy.setting {
            ModelSetting::Ms1 => 0,
            ModelSetting::Ms2 => {
                let injected = self
                    .tm
                    .injection_time(self.network().source(), v, t)
                    .expect("inner node reachable from the source");
                schedule.floor_index(injected)
            }
            ModelSetting::Ms3 => schedule.floor_index(t),
        }
    }

    /// Linear form of `u(t_in)`: leaves whose delivery falls after the horizon are omitted.
    pub fn inflow_terms(&self, t_in: f64) -> Vec<LeafTerm> {
        let tau = self.inflow_tau(t_in);
        let source = self.network().source();
        self.network()
            .demand_nodes()
            .iter()
            .filter_map(|&leaf| self.term(source, leaf, t_in, tau, 0, true))
            .collect()
    }

    /// `u(t_in)`.
    pub fn optimal_inflow(&self, obs: &ObservationTable, t_in: f64) -> f64 {
        self.inflow_terms(t_in)
            .iter()
            .map(|t| t.weighted(obs))
            .sum()
    }

    /// Leaf terms at inner node `v` and time `t`, tagged with the outgoing-arc slot.
    pub fn routing_terms(&self, v: NodeId, t: f64) -> Result<Vec<LeafTerm>, ControlError> {
        let net = self.network();
        if net.kind(v) != NodeKind::Inner {
            return Err(ControlError::NotInner(v));
        }
        Ok(self.node_terms(v, t, self.routing_tau(v, t)))
    }

    /// Terms of the leaves below `v` that flux leaving `v` at `t` reaches
    /// within the horizon. If none does, every leaf is kept so the shares
    /// stay defined.
    fn node_terms(&self, v: NodeId, t: f64, tau: usize) -> Vec<LeafTerm> {
        let net = self.network();
        let collect = |bounded: bool| {
            let mut terms = Vec::new();
            for (slot, &k) in net.outgoing_arcs(v).iter().enumerate() {
                for &leaf in net.demand_descendants(net.arc(k).head) {
                    terms.extend(self.term(v, leaf, t, tau, slot, bounded));
                }
            }
            terms
        };
        let terms = collect(true);
        if terms.is_empty() {
            collect(false)
        } else {
            terms
        }
    }

    /// `α_{i,k}(t)` for arc `i` into an inner node and outgoing arc `k`.
    ///
    /// For MS3 this is the balanced-inflow value, see [`ControlContext::ms3_allocation`]
    /// for the allocation given an actual incoming flux.
    pub fn alpha(
        &self,
        obs: &ObservationTable,
        i: ArcId,
        k: ArcId,
        t: f64,
    ) -> Result<f64, ControlError> {
        let net = self.network();
        let v = net.arc(i).head;
        let slot =
            net.outgoing_arcs(v)
                .iter()
                .position(|&a| a == k)
                .ok_or(NetError::NoSuchPath {
                    from: v,
                    to: net.arc(k).head,
                })?;
        let terms = self.routing_terms(v, t)?;
        Ok(ratio_alphas(&terms, net.outgoing_arcs(v).len(), obs)[slot])
    }

    /// Fresh-information allocation at inner node `v` for incoming flux `f_in`.
    pub fn ms3_allocation(
        &self,
        obs: &ObservationTable,
        v: NodeId,
        f_in: f64,
        t: f64,
    ) -> Result<Ms3Allocation, ControlError> {
        let net = self.network();
        if net.kind(v) != NodeKind::Inner {
            return Err(ControlError::NotInner(v));
        }
        let tau = self.policy.schedule.floor_index(t);
        let n_children = net.outgoing_arcs(v).len();
        let terms = self.node_terms(v, t, tau);
        let gammas: Vec<f64> = terms.iter().map(|t| t.gamma).collect();
        let expectations: Vec<f64> = terms.iter().map(|t| t.expectation(obs)).collect();
        let supplies = optimal_allocation(&gammas, &expectations, f_in);
        let mut raw = vec![0.0; n_children];
        for (term, m) in terms.iter().zip(&supplies) {
            raw[term.child] += term.gamma * m;
        }
        if f_in > 0.0 {
            raw.iter_mut().for_each(|x| *x /= f_in);
        }
        Ok(Ms3Allocation {
            leaves: terms.iter().map(|t| net.demand_nodes()[t.leaf]).collect(),
            supplies,
            gammas,
            expectations,
            alphas: ms3_alphas(&terms, n_children, obs, f_in),
            raw_alphas: raw,
        })
    }
}

/// Flattened per-step term lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermTable {
    offsets: Vec<usize>,
    terms: Vec<LeafTerm>,
}

impl TermTable {
    fn from_rows(rows: impl IntoIterator<Item = Vec<LeafTerm>>) -> Self {
        let mut table = TermTable {
            offsets: vec![0],
            terms: Vec::new(),
        };
        for row in rows {
            table.terms.extend(row);
            table.offsets.push(table.terms.len());
        }
        table
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, j: usize) -> &[LeafTerm] {
        let j = j.min(self.len() - 1);
        &self.terms[self.offsets[j]..self.offsets[j + 1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Routing {
    slot: usize,
    n_children: usize,
    table: TermTable,
}

/// Control terms precomputed on the arc time grids. The observation-independent
/// work (transit times, γ, mean coefficients) is done once; each Monte Carlo
/// run only evaluates linear forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    setting: ModelSetting,
    inflow: TermTable,
    routing: Vec<Option<Routing>>,
}

impl ControlPlan {
    /// `arc_times[a]` is the time grid of arc `a`.
    pub fn build(ctx: &ControlContext<'_>, arc_times: &[Vec<f64>]) -> Result<Self, ControlError> {
        let net = ctx.network();
        let source_arc = net.source_arc();
        let inflow =
            TermTable::from_rows(arc_times[source_arc.0].iter().map(|&t| ctx.inflow_terms(t)));
        let mut routing = vec![None; net.arc_count()];
        for &a in net.arcs_topological() {
            if a == source_arc {
                continue;
            }
            let v = net.arc(a).tail;
            let outgoing = net.outgoing_arcs(v);
            let slot = outgoing.iter().position(|&x| x == a).expect("outgoing arc");
            let rows = arc_times[a.0]
                .iter()
                .map(|&t| ctx.routing_terms(v, t))
                .collect::<Result<Vec<_>, _>>()?;
            routing[a.0] = Some(Routing {
                slot,
                n_children: outgoing.len(),
                table: TermTable::from_rows(rows),
            });
        }
        Ok(Self {
            setting: ctx.policy().setting,
            inflow,
            routing,
        })
    }

    pub fn setting(&self) -> ModelSetting {
        self.setting
    }

    pub fn inflow_at(&self, step: usize, obs: &ObservationTable) -> f64 {
        self.inflow.row(step).iter().map(|t| t.weighted(obs)).sum()
    }

    pub fn share_at(&self, arc: ArcId, step: usize, obs: &ObservationTable, f_in: f64) -> f64 {
        let r = self.routing[arc.0]
            .as_ref()
            .expect("arc leaving an inner node");
        let terms = r.table.row(step);
        let alphas = match self.setting {
            ModelSetting::Ms3 => ms3_alphas(terms, r.n_children, obs, f_in),
            _ => ratio_alphas(terms, r.n_children, obs),
        };
        alphas[r.slot]
    }

    /// Binds the plan to one run's observations.
    pub fn with_observations<'p>(&'p self, obs: &'p ObservationTable) -> PlannedControl<'p> {
        PlannedControl { plan: self, obs }
    }
}

/// A [`ControlPlan`] evaluated against concrete observations.
#[derive(Debug, Clone, Copy)]
pub struct PlannedControl<'p> {
    plan: &'p ControlPlan,
    obs: &'p ObservationTable,
}

impl FlowControl for PlannedControl<'_> {
    fn inflow(&self, step: usize, _t: f64) -> f64 {
        self.plan.inflow_at(step, self.obs)
    }

    fn share(&self, arc: ArcId, step: usize, _t: f64, f_in: f64) -> f64 {
        self.plan.share_at(arc, step, self.obs, f_in)
    }
}

/// Evaluates the explicit formulas on the fly.
#[derive(Debug, Clone, Copy)]
pub struct DirectControl<'a> {
    pub ctx: ControlContext<'a>,
    pub obs: &'a ObservationTable,
}

impl FlowControl for DirectControl<'_> {
    fn inflow(&self, _step: usize, t: f64) -> f64 {
        self.ctx.optimal_inflow(self.obs, t)
    }

    fn share(&self, arc: ArcId, _step: usize, t: f64, f_in: f64) -> f64 {
        let net = self.ctx.network();
        let v = net.arc(arc).tail;
        let slot = net
            .outgoing_arcs(v)
            .iter()
            .position(|&a| a == arc)
            .expect("outgoing arc");
        match self.ctx.policy().setting {
            ModelSetting::Ms3 => {
                self.ctx
                    .ms3_allocation(self.obs, v, f_in, t)
                    .expect("inner node")
                    .alphas[slot]
            }
            _ => {
                let i = net.arc_into(v).expect("inner node has an incoming arc");
                self.ctx.alpha(self.obs, i, arc, t).expect("valid arcs")
            }
        }
    }
}
