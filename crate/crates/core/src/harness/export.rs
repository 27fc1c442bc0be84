//! CSV output for trajectories and error reports.

use std::io::{Read, Write};

use super::monte_carlo::{ReportRow, SampleRun};
use super::HarnessError;
use crate::control::ModelSetting;

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Columns `t,u,supply_v<i>,demand_v<i>,…`.
pub fn write_trajectory_csv<W: Write>(run: &SampleRun, out: W) -> Result<(), HarnessError> {
    let traj = &run.trajectory;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "u".to_string()];
    for v in &traj.leaves {
        header.push(format!("supply_{v}"));
        header.push(format!("demand_{v}"));
    }
    w.write_record(&header)?;
    for k in 0..traj.times.len() {
        let mut rec = vec![fmt(traj.times[k]), fmt(traj.inflow[k])];
        for r in 0..traj.leaves.len() {
            rec.push(fmt(traj.supply(r)[k]));
            rec.push(fmt(run.demand[r][k]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed trajectory table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryTable, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for rec in rd.records() {
        let rec = rec?;
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            col.push(field.parse::<f64>().map_err(|e| {
                HarnessError::InvalidArgument(format!("bad number `{field}`: {e}"))
            })?);
        }
    }
    Ok(TrajectoryTable { header, columns })
}

pub const REPORT_HEADER: [&str; 6] = [
    "setting",
    "leaf",
    "damping_profile",
    "norm_rmse",
    "n_runs",
    "seed",
];

/// Columns `setting,leaf,damping_profile,norm_rmse,n_runs,seed`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            format!("v{}", r.leaf),
            r.damping_profile.clone(),
            fmt(r.norm_rmse),
            r.n_runs.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a report; the standard error column is not stored and comes back as NaN.
pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>, HarnessError> {
    let bad = |m: String| HarnessError::InvalidArgument(m);
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(REPORT_HEADER) {
        return Err(bad("unexpected report header".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let leaf = rec[1].strip_prefix('v').unwrap_or(&rec[1]);
        rows.push(ReportRow {
            setting: rec[0].parse::<ModelSetting>().map_err(bad)?,
            leaf: leaf.parse().map_err(|e| bad(format!("leaf: {e}")))?,
            damping_profile: rec[2].to_string(),
            norm_rmse: rec[3].parse().map_err(|e| bad(format!("norm_rmse: {e}")))?,
            std_err: f64::NAN,
            n_runs: rec[4].parse().map_err(|e| bad(format!("n_runs: {e}")))?,
            seed: rec[5].parse().map_err(|e| bad(format!("seed: {e}")))?,
        });
    }
    Ok(rows)
}
