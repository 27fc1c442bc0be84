//! Monte Carlo error estimation with common random numbers.
//!
//! Every configuration sees the same demand paths: the normals for run `r`
//! at leaf `v` come from stream `(r, v)` of the master seed. Runs are split
//! into contiguous batches; batch sums are reduced in batch order, so
//! results do not depend on the number of threads.

use std::ops::Range;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::control::{
    ControlContext, ControlPlan, ControlPolicy, ModelSetting, ObservationTable, UpdateSchedule,
};
use crate::demand::{normal_increments, stream_rng, DemandModel, SamplePath, SdeGrid};
use crate::netgraph::{Network, NodeId};
use crate::par::Execution;
use crate::pdesim::{Grids, Simulator, Trajectory};
use crate::timefuncs::TransitMap;

use super::metrics::{norm_rmse_from_mean_sq, window};
use super::scenario::{DemandKind, Scenario};
use super::HarnessError;

const BATCHES: usize = 10;

/// One (setting, schedule, damping profile) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub policy: ControlPolicy,
    pub profile: String,
}

impl ExperimentConfig {
    pub fn new(
        setting: ModelSetting,
        schedule: UpdateSchedule,
        profile: impl Into<String>,
    ) -> Self {
        Self {
            policy: ControlPolicy::new(setting, schedule),
            profile: profile.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub runs: usize,
    pub seed: u64,
    pub demand: DemandKind,
    pub execution: Execution,
}

impl McOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            runs: s.runs,
            seed: s.seed,
            demand: DemandKind::Jacobi,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafError {
    pub leaf: NodeId,
    pub norm_rmse: f64,
    /// Standard error from the spread of per-batch estimates.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub config: ExperimentConfig,
    pub leaves: Vec<LeafError>,
}

impl ConfigResult {
    pub fn leaf(&self, v: NodeId) -> Option<&LeafError> {
        self.leaves.iter().find(|l| l.leaf == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: ModelSetting,
    pub leaf: usize,
    pub damping_profile: String,
    pub norm_rmse: f64,
    pub std_err: f64,
    pub n_runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ReportRow>,
    pub runtime: Duration,
}

impl ErrorReport {
    pub fn get(&self, setting: ModelSetting, profile: &str, leaf: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.setting == setting && r.damping_profile == profile && r.leaf == leaf)
    }
}

/// First arrival at every demand node of material injected at `t0`.
pub fn first_arrivals(net: &Network, t0: f64, t_end: f64) -> Result<Vec<f64>, HarnessError> {
    let tm = TransitMap::new(net, t0, t_end);
    net.demand_nodes()
        .iter()
        .map(|&v| Ok(tm.path_timing(net.source(), v, t0)?.arrival))
        .collect()
}

/// Simulates one demand path per leaf for the given run index.
pub fn demand_paths(
    models: &[DemandModel],
    leaves: &[NodeId],
    grid: &SdeGrid,
    seed: u64,
    run: u64,
) -> Vec<SamplePath> {
    models
        .iter()
        .zip(leaves)
        .map(|(m, v)| {
            let mut rng = stream_rng(seed, run, v.0 as u64);
            let normals = normal_increments(grid, &mut rng);
            m.simulate(grid, &normals)
        })
        .collect()
}

struct Prepared<'n> {
    sims: Vec<Simulator<'n>>,
    plans: Vec<ControlPlan>,
    profile_of: Vec<usize>,
    windows: Vec<Range<usize>>,
}

fn prepare<'n>(
    scenario: &Scenario,
    nets: &'n [Network],
    models: &[DemandModel],
    configs: &[ExperimentConfig],
) -> Result<Prepared<'n>, HarnessError> {
    let cfg = scenario.pde_config();
    let grids = Grids::build(&nets[0], scenario.t0, scenario.t_end, &cfg)?;
    let sims = nets
        .iter()
        .map(|n| Simulator::with_grids(n, grids.clone(), cfg.exact_damping))
        .collect::<Result<Vec<_>, _>>()?;
    let mut plans = Vec::with_capacity(configs.len());
    let mut profile_of = Vec::with_capacity(configs.len());
    for c in configs {
        let p = scenario
            .profiles
            .iter()
            .position(|p| *p == c.profile)
            .ok_or_else(|| HarnessError::UnknownProfile(c.profile.clone()))?;
        let ctx = ControlContext::new(&nets[p], models, &c.policy, scenario.t0, scenario.t_end)?
            .with_delivery_slack(grids.delivery_slack(&nets[p]));
        plans.push(ControlPlan::build(&ctx, &grids.arc_times)?);
        profile_of.push(p);
    }
    let windows = first_arrivals(&nets[0], scenario.t0, scenario.t_end)?
        .into_iter()
        .map(|t| window(&grids.common, t, scenario.t_end))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        sims,
        plans,
        profile_of,
        windows,
    })
}

/// Squared deviations summed over one batch, `[config][leaf][window index]`.
type BatchSums = Vec<Vec<Vec<f64>>>;

/// normRMSE per configuration and leaf over `opts.runs` runs.
pub fn run_experiments(
    scenario: &Scenario,
    configs: &[ExperimentConfig],
    opts: &McOptions,
) -> Result<Vec<ConfigResult>, HarnessError> {
    if opts.runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let nets = scenario
        .profiles
        .iter()
        .map(|p| scenario.network(p))
        .collect::<Result<Vec<_>, _>>()?;
    let models = scenario.demand_models(opts.demand);
    let prep = prepare(scenario, &nets, &models, configs)?;
    let leaves = nets[0].demand_nodes().to_vec();
    let grid = scenario.sde_grid();
    let times = &prep.sims[0].grids().common;

    let batches = BATCHES.min(opts.runs);
    let ranges: Vec<Range<usize>> = (0..batches)
        .map(|b| (b * opts.runs / batches)..((b + 1) * opts.runs / batches))
        .collect();

    let run_batch = |runs: Range<usize>| -> BatchSums {
        let mut sums: BatchSums = configs
            .iter()
            .map(|_| prep.windows.iter().map(|w| vec![0.0; w.len()]).collect())
            .collect();
        for run in runs {
            let paths = demand_paths(&models, &leaves, &grid, opts.seed, run as u64);
            let demand: Vec<Vec<f64>> = paths
                .iter()
                .zip(&prep.windows)
                .map(|(p, w)| times[w.clone()].iter().map(|&t| p.value_at(t)).collect())
                .collect();
            for (c, config) in configs.iter().enumerate() {
                let obs = ObservationTable::from_paths(&paths, &config.policy.schedule);
                let traj =
                    prep.sims[prep.profile_of[c]].run(&prep.plans[c].with_observations(&obs));
                for (r, w) in prep.windows.iter().enumerate() {
                    let supply = &traj.supply(r)[w.clone()];
                    for ((acc, d), s) in sums[c][r].iter_mut().zip(&demand[r]).zip(supply) {
                        *acc += (d - s) * (d - s);
                    }
                }
            }
        }
        sums
    };
    let per_batch = opts.execution.map(ranges.clone(), run_batch);

    let mut results = Vec::with_capacity(configs.len());
    for (c, config) in configs.iter().enumerate() {
        let mut leaf_errors = Vec::with_capacity(leaves.len());
        for (r, w) in prep.windows.iter().enumerate() {
            let wt = &times[w.clone()];
            let mut total = vec![0.0; w.len()];
            let mut batch_vals = Vec::with_capacity(batches);
            for (b, sums) in per_batch.iter().enumerate() {
                let n_b = ranges[b].len() as f64;
                total.iter_mut().zip(&sums[c][r]).for_each(|(t, s)| *t += s);
                let ms: Vec<f64> = sums[c][r].iter().map(|s| s / n_b).collect();
                batch_vals.push(norm_rmse_from_mean_sq(wt, &ms, wt[0], scenario.t_end)?);
            }
            total.iter_mut().for_each(|t| *t /= opts.runs as f64);
            let value = norm_rmse_from_mean_sq(wt, &total, wt[0], scenario.t_end)?;
            leaf_errors.push(LeafError {
                leaf: leaves[r],
                norm_rmse: value,
                std_err: batch_std_err(&batch_vals),
            });
        }
        results.push(ConfigResult {
            config: config.clone(),
            leaves: leaf_errors,
        });
    }
    Ok(results)
}

fn batch_std_err(vals: &[f64]) -> f64 {
    let n = vals.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// All settings against all damping profiles with the scenario's schedule.
pub fn monte_carlo(scenario: &Scenario, opts: &McOptions) -> Result<ErrorReport, HarnessError> {
    let start = Instant::now();
    let configs: Vec<ExperimentConfig> = ModelSetting::ALL
        .iter()
        .flat_map(|&s| {
            scenario
                .profiles
                .iter()
                .map(move |p| ExperimentConfig::new(s, scenario.schedule(), p.clone()))
        })
        .collect();
    let results = run_experiments(scenario, &configs, opts)?;
    let rows = results
        .iter()
        .flat_map(|res| {
            res.leaves.iter().map(|l| ReportRow {
                setting: res.config.policy.setting,
                leaf: l.leaf.0,
                damping_profile: res.config.profile.clone(),
                norm_rmse: l.norm_rmse,
                std_err: l.std_err,
                n_runs: opts.runs,
                seed: opts.seed,
            })
        })
        .collect();
    Ok(ErrorReport {
        rows,
        runtime: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub updates: usize,
    pub setting: ModelSetting,
    pub leaf: usize,
    pub norm_rmse: f64,
    /// Percent reduction against the same setting without updates.
    pub reduction_pct: f64,
}

/// Error reduction for uniform schedules with the given update counts.
pub fn error_reduction_study(
    scenario: &Scenario,
    counts: &[usize],
    settings: &[ModelSetting],
    profile: &str,
    opts: &McOptions,
) -> Result<Vec<ReductionRow>, HarnessError> {
    let mut all_counts = vec![0];
    all_counts.extend(counts.iter().copied().filter(|&n| n != 0));
    let configs: Vec<ExperimentConfig> = settings
        .iter()
        .flat_map(|&s| {
            all_counts.iter().map(move |&n| {
                ExperimentConfig::new(
                    s,
                    UpdateSchedule::uniform(scenario.t0, scenario.t_end, n),
                    profile,
                )
            })
        })
        .collect();
    let results = run_experiments(scenario, &configs, opts)?;
    let mut rows = Vec::new();
    for (si, &setting) in settings.iter().enumerate() {
        let block = &results[si * all_counts.len()..(si + 1) * all_counts.len()];
        let base = &block[0];
        for (&n, res) in all_counts.iter().zip(block) {
            if n == 0 && !counts.contains(&0) {
                continue;
            }
            for (l, b) in res.leaves.iter().zip(&base.leaves) {
                rows.push(ReductionRow {
                    updates: n,
                    setting,
                    leaf: l.leaf.0,
                    norm_rmse: l.norm_rmse,
                    reduction_pct: 100.0 * (1.0 - l.norm_rmse / b.norm_rmse),
                });
            }
        }
    }
    Ok(rows)
}

/// One realization: trajectory plus demand sampled on the common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub trajectory: Trajectory,
    /// `[leaf][common grid index]`.
    pub demand: Vec<Vec<f64>>,
}

pub fn sample_run(
    scenario: &Scenario,
    config: &ExperimentConfig,
    demand: DemandKind,
    seed: u64,
    run: u64,
) -> Result<SampleRun, HarnessError> {
    let net = scenario.network(&config.profile)?;
    let models = scenario.demand_models(demand);
    let sim = Simulator::new(&net, scenario.t0, scenario.t_end, &scenario.pde_config())?;
    let ctx = ControlContext::new(&net, &models, &config.policy, scenario.t0, scenario.t_end)?
        .with_delivery_slack(sim.grids().delivery_slack(&net));
    let plan = ControlPlan::build(&ctx, &sim.grids().arc_times)?;
    let paths = demand_paths(&models, net.demand_nodes(), &scenario.sde_grid(), seed, run);
    let obs = ObservationTable::from_paths(&paths, &config.policy.schedule);
    let trajectory = sim.run(&plan.with_observations(&obs));
    let demand = paths
        .iter()
        .map(|p| trajectory.times.iter().map(|&t| p.value_at(t)).collect())
        .collect();
    Ok(SampleRun { trajectory, demand })
}
