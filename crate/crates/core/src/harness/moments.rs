//! Monte Carlo check of the closed-form demand moments.

use crate::demand::{
    jacobi_mean, jacobi_second_moment, normal_increments, simulate_jacobi_with, stream_rng, SdeGrid,
};
use crate::netgraph::NodeId;
use crate::par::Execution;

use super::scenario::Scenario;

const CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentProbe {
    pub leaf: NodeId,
    pub t: f64,
    pub exact_mean: f64,
    pub mc_mean: f64,
    pub se_mean: f64,
    pub exact_m2: f64,
    pub mc_m2: f64,
    pub se_m2: f64,
}

impl MomentProbe {
    /// Deviation of the sample mean in standard errors.
    pub fn z_mean(&self) -> f64 {
        (self.mc_mean - self.exact_mean) / self.se_mean
    }

    pub fn z_m2(&self) -> f64 {
        (self.mc_m2 - self.exact_m2) / self.se_m2
    }

    pub fn within(&self, k: f64) -> bool {
        self.z_mean().abs() <= k && self.z_m2().abs() <= k
    }
}

/// `probes` times `t0 + k (t_end − t0)/n` for `k = 1..=n`.
pub fn probe_times(scenario: &Scenario, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| scenario.t0 + k as f64 * (scenario.t_end - scenario.t0) / n as f64)
        .collect()
}

/// Samples `paths` truncated Euler–Maruyama paths per leaf and compares
/// the first two moments at `probes` with the closed forms.
pub fn moments_check(
    scenario: &Scenario,
    paths: usize,
    probes: &[f64],
    seed: u64,
    exec: Execution,
) -> Vec<MomentProbe> {
    let t_max = probes.iter().copied().fold(scenario.t0, f64::max);
    let grid = SdeGrid::covering(scenario.t0, t_max, scenario.numerics.dt_sde);
    let mut out = Vec::new();
    for leaf in &scenario.leaves {
        let p = &leaf.jacobi;
        let chunks: Vec<std::ops::Range<usize>> = (0..paths.div_ceil(CHUNK))
            .map(|c| c * CHUNK..((c + 1) * CHUNK).min(paths))
            .collect();
        let sums = exec.map(chunks, |range| {
            let mut s = vec![[0.0f64; 3]; probes.len()];
            for path in range {
                let mut rng = stream_rng(seed, path as u64, leaf.node.0 as u64);
                let normals = normal_increments(&grid, &mut rng);
                let sample = simulate_jacobi_with(p, &grid, &normals);
                for (acc, &t) in s.iter_mut().zip(probes) {
                    let x = sample.value_at(t);
                    let x2 = x * x;
                    acc[0] += x;
                    acc[1] += x2;
                    acc[2] += x2 * x2;
                }
            }
            s
        });
        let n = paths as f64;
        for (i, &t) in probes.iter().enumerate() {
            let mut tot = [0.0; 3];
            for s in &sums {
                for j in 0..3 {
                    tot[j] += s[i][j];
                }
            }
            let [s1, s2, s4] = tot.map(|v| v / n);
            let var1 = (s2 - s1 * s1) * n / (n - 1.0);
            let var2 = (s4 - s2 * s2) * n / (n - 1.0);
            out.push(MomentProbe {
                leaf: leaf.node,
                t,
                exact_mean: jacobi_mean(p, scenario.t0, p.d0, t),
                mc_mean: s1,
                se_mean: (var1.max(0.0) / n).sqrt(),
                exact_m2: jacobi_second_moment(p, scenario.t0, p.d0, t),
                mc_m2: s2,
                se_m2: (var2.max(0.0) / n).sqrt(),
            });
        }
    }
    out
}
