//! Scenario files: network, coefficients, demand parameters and numerics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlPolicy, ModelSetting, UpdateSchedule};
use crate::demand::{DemandError, DemandModel, JacobiParams, OuParams, SdeGrid};
use crate::netgraph::{Arc, NetError, Network, NodeId, NodeKind};
use crate::pdesim::PdeConfig;
use crate::timefuncs::CoefFn;

pub const TABLE1_JSON: &str = include_str!("../../scenarios/table1.json");
pub const TABLE2_JSON: &str = include_str!("../../scenarios/table2.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Demand { path: String, source: DemandError },
}

fn schema(path: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    t0: Option<f64>,
    t_end: Option<f64>,
    nodes: Option<Vec<NodeKind>>,
    arcs: Option<Vec<RawArc>>,
    demands: Option<Vec<RawDemand>>,
    setting: Option<ModelSetting>,
    updates: Option<usize>,
    schedule: Option<Vec<f64>>,
    #[serde(default)]
    numerics: RawNumerics,
    runs: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArc {
    tail: Option<usize>,
    head: Option<usize>,
    length: Option<f64>,
    velocity: Option<CoefFn>,
    damping: Option<BTreeMap<String, CoefFn>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemand {
    node: Option<usize>,
    kappa: Option<f64>,
    theta: Option<CoefFn>,
    sigma: Option<f64>,
    d0: Option<f64>,
    bounds: Option<(f64, f64)>,
    ou_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    dx: Option<f64>,
    dt_sde: Option<f64>,
    dt_common: Option<f64>,
    #[serde(default)]
    exact_damping: bool,
}

/// Per-arc data with all damping profiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArcSpec {
    pub tail: usize,
    pub head: usize,
    pub length: f64,
    pub velocity: CoefFn,
    pub damping: BTreeMap<String, CoefFn>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafSpec {
    pub node: NodeId,
    pub jacobi: JacobiParams,
    /// Noise level of the Ornstein–Uhlenbeck counterpart, if configured.
    pub ou_sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Numerics {
    pub dx: f64,
    pub dt_sde: f64,
    pub dt_common: Option<f64>,
    pub exact_damping: bool,
}

/// How update times are specified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Updates {
    Count(usize),
    Times(Vec<f64>),
}

/// Demand process family used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandKind {
    #[default]
    Jacobi,
    Ou,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub t0: f64,
    pub t_end: f64,
    pub nodes: Vec<NodeKind>,
    pub arcs: Vec<ArcSpec>,
    /// Damping profile names, shared by every arc.
    pub profiles: Vec<String>,
    /// One entry per demand node, ordered by node.
    pub leaves: Vec<LeafSpec>,
    pub setting: ModelSetting,
    pub updates: Updates,
    pub numerics: Numerics,
    pub runs: usize,
    pub seed: u64,
}

const NO_DAMPING: &str = "none";

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "table1" => TABLE1_JSON,
            "table2" => TABLE2_JSON,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled scenarios are valid"))
    }

    fn from_raw(raw: RawScenario) -> Result<Self, ScenarioError> {
        let t0 = raw.t0.unwrap_or(0.0);
        let t_end = raw.t_end.unwrap_or(2.5);
        if !(t_end > t0) {
            return Err(schema("t_end", "must exceed t0"));
        }
        let nodes = raw.nodes.ok_or_else(|| schema("nodes", "missing"))?;
        let raw_arcs = raw.arcs.ok_or_else(|| schema("arcs", "missing"))?;

        let mut arcs = Vec::with_capacity(raw_arcs.len());
        let mut profiles: Option<Vec<String>> = None;
        for (i, a) in raw_arcs.into_iter().enumerate() {
            let at = |field: &str| format!("arcs[{i}].{field}");
            let tail = a.tail.ok_or_else(|| schema(at("tail"), "missing"))?;
            let head = a.head.ok_or_else(|| schema(at("head"), "missing"))?;
            let velocity = a
                .velocity
                .ok_or_else(|| schema(at("velocity"), "missing velocity for arc"))?;
            velocity.check().map_err(|m| schema(at("velocity"), m))?;
            let length = a.length.unwrap_or(1.0);
            let damping = a
                .damping
                .unwrap_or_else(|| BTreeMap::from([(NO_DAMPING.to_string(), CoefFn::zero())]));
            for (name, f) in &damping {
                f.check()
                    .map_err(|m| schema(at(&format!("damping.{name}")), m))?;
            }
            let names: Vec<String> = damping.keys().cloned().collect();
            match &profiles {
                None => profiles = Some(names),
                Some(p) if *p != names => {
                    return Err(schema(
                        at("damping"),
                        format!("profiles {names:?} differ from {p:?}"),
                    ));
                }
                _ => {}
            }
            arcs.push(ArcSpec {
                tail,
                head,
                length,
                velocity,
                damping,
            });
        }
        let profiles = profiles.unwrap_or_else(|| vec![NO_DAMPING.to_string()]);
        if profiles.is_empty() {
            return Err(schema("arcs[0].damping", "at least one profile required"));
        }

        let mut leaves = Vec::new();
        for (i, d) in raw.demands.unwrap_or_default().into_iter().enumerate() {
            let at = |field: &str| format!("demands[{i}].{field}");
            let node = d.node.ok_or_else(|| schema(at("node"), "missing"))?;
            let mut jacobi = JacobiParams::new(
                d.kappa.ok_or_else(|| schema(at("kappa"), "missing"))?,
                d.theta.ok_or_else(|| schema(at("theta"), "missing"))?,
                d.sigma.unwrap_or(0.0),
                d.d0.ok_or_else(|| schema(at("d0"), "missing"))?,
            );
            if let Some(b) = d.bounds {
                jacobi.bounds = b;
            }
            jacobi
                .validate(t0, t_end)
                .map_err(|source| ScenarioError::Demand {
                    path: format!("demands[{i}]"),
                    source,
                })?;
            leaves.push(LeafSpec {
                node: NodeId(node),
                jacobi,
                ou_sigma: d.ou_sigma,
            });
        }
        leaves.sort_by_key(|l| l.node);

        let numerics = Numerics {
            dx: raw.numerics.dx.unwrap_or(5e-3),
            dt_sde: raw.numerics.dt_sde.unwrap_or(1e-4),
            dt_common: raw.numerics.dt_common,
            exact_damping: raw.numerics.exact_damping,
        };
        if !(numerics.dx > 0.0) {
            return Err(schema("numerics.dx", "must be positive"));
        }
        if !(numerics.dt_sde > 0.0) {
            return Err(schema("numerics.dt_sde", "must be positive"));
        }
        if numerics.dt_common.is_some_and(|d| !(d > 0.0)) {
            return Err(schema("numerics.dt_common", "must be positive"));
        }

        let updates = match (raw.schedule, raw.updates) {
            (Some(_), Some(_)) => {
                return Err(schema(
                    "schedule",
                    "give either `schedule` or `updates`, not both",
                ))
            }
            (Some(times), None) => {
                if times.first() != Some(&t0) {
                    return Err(schema("schedule", "must start at t0"));
                }
                UpdateSchedule::new(times.clone())
                    .map_err(|e| schema("schedule", e.to_string()))?;
                Updates::Times(times)
            }
            (None, n) => Updates::Count(n.unwrap_or(0)),
        };

        let scenario = Scenario {
            name: raw.name.unwrap_or_else(|| "scenario".into()),
            t0,
            t_end,
            nodes,
            arcs,
            profiles,
            leaves,
            setting: raw.setting.unwrap_or(ModelSetting::Ms1),
            updates,
            numerics,
            runs: raw.runs.unwrap_or(500),
            seed: raw.seed.unwrap_or(0),
        };

        for p in &scenario.profiles {
            scenario.network(p)?;
        }
        let net = scenario.network(&scenario.profiles[0])?;
        let demand_nodes = net.demand_nodes();
        for (i, l) in scenario.leaves.iter().enumerate() {
            if !demand_nodes.contains(&l.node) {
                return Err(schema(
                    format!("demands[{i}].node"),
                    format!("{} is not a demand node", l.node),
                ));
            }
        }
        if let Some(missing) = demand_nodes
            .iter()
            .find(|v| !scenario.leaves.iter().any(|l| l.node == **v))
        {
            return Err(schema(
                "demands",
                format!("no demand parameters for {missing}"),
            ));
        }
        if scenario.leaves.windows(2).any(|w| w[0].node == w[1].node) {
            return Err(schema("demands", "duplicate demand node"));
        }
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Validated network with the named damping profile.
    pub fn network(&self, profile: &str) -> Result<Network, ScenarioError> {
        let arcs = self
            .arcs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mu = a.damping.get(profile).ok_or_else(|| {
                    schema(
                        format!("arcs[{i}].damping"),
                        format!("no profile `{profile}`"),
                    )
                })?;
                Ok(Arc::new(a.tail, a.head, a.velocity.clone(), mu.clone()).with_length(a.length))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let net = Network::new(self.nodes.clone(), arcs)?;
        net.validate(self.t0, self.t_end)?;
        Ok(net)
    }

    pub fn demand_models(&self, kind: DemandKind) -> Vec<DemandModel> {
        self.leaves
            .iter()
            .map(|l| match kind {
                DemandKind::Jacobi => DemandModel::Jacobi(l.jacobi.clone()),
                DemandKind::Ou => DemandModel::Ou(OuParams {
                    kappa: l.jacobi.kappa,
                    theta: l.jacobi.theta.clone(),
                    sigma: l.ou_sigma.unwrap_or(0.0),
                    z0: l.jacobi.d0,
                }),
            })
            .collect()
    }

    pub fn schedule(&self) -> UpdateSchedule {
        match &self.updates {
            Updates::Count(n) => UpdateSchedule::uniform(self.t0, self.t_end, *n),
            Updates::Times(t) => UpdateSchedule::new(t.clone()).expect("validated schedule"),
        }
    }

    pub fn policy(&self, setting: ModelSetting) -> ControlPolicy {
        ControlPolicy::new(setting, self.schedule())
    }

    pub fn pde_config(&self) -> PdeConfig {
        PdeConfig {
            dx: self.numerics.dx,
            dt_common: self.numerics.dt_common,
            exact_damping: self.numerics.exact_damping,
        }
    }

    pub fn sde_grid(&self) -> SdeGrid {
        SdeGrid::covering(self.t0, self.t_end, self.numerics.dt_sde)
    }

    /// Copy with every demand noise set to zero.
    pub fn deterministic(&self) -> Self {
        let mut s = self.clone();
        s.leaves.iter_mut().for_each(|l| l.jacobi.sigma = 0.0);
        s
    }
}
