use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use supplynet::control::ModelSetting;
use supplynet::harness::export::{write_report_csv, write_trajectory_csv};
use supplynet::harness::moments::{moments_check, probe_times};
use supplynet::harness::oracle::compare_with_explicit;
use supplynet::harness::{
    error_reduction_study, monte_carlo, sample_run, DemandKind, ExperimentConfig, HarnessError,
    McOptions, OracleOptions, Scenario, ScenarioError,
};
use supplynet::par::Execution;

/// Demand-tracking inflow control on transport networks.
#[derive(Parser)]
#[command(name = "supplynet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a scenario.
    Validate { scenario: String },
    /// Simulate one realization and write its trajectory.
    Simulate {
        scenario: String,
        #[arg(long, default_value_t = 0)]
        run_id: u64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the scenario's setting.
        #[arg(long)]
        setting: Option<ModelSetting>,
        /// Defaults to the first damping profile.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "jacobi")]
        demand: DemandArg,
    },
    /// Monte Carlo normRMSE for every setting and damping profile.
    Mc {
        scenario: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
        #[arg(long, value_enum, default_value = "jacobi")]
        demand: DemandArg,
    },
    /// Compare closed-form demand moments with sample moments.
    MomentsCheck {
        scenario: String,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 10)]
        probes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Error reduction against the number of demand updates.
    ReductionStudy {
        scenario: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 6, 12, 24, 48])]
        updates: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [ModelSetting::Ms2, ModelSetting::Ms3])]
        settings: Vec<ModelSetting>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force control optimizer against the explicit control.
    Oracle {
        scenario: String,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DemandArg {
    Jacobi,
    Ou,
}

impl From<DemandArg> for DemandKind {
    fn from(d: DemandArg) -> Self {
        match d {
            DemandArg::Jacobi => DemandKind::Jacobi,
            DemandArg::Ou => DemandKind::Ou,
        }
    }
}

enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(_)
            | HarnessError::UnknownProfile(_)
            | HarnessError::InvalidArgument(_) => Failure::Validation(e.into()),
            other => Failure::Numerical(other.into()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Numerical(e)
    }
}

/// A file path, or the name of a bundled scenario (`table1`, `table2`).
fn load(arg: &str) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = Scenario::bundled(arg) {
            return Ok(s);
        }
    }
    Scenario::load(path).map_err(|e| {
        Failure::Validation(anyhow::Error::new(e).context(format!("scenario `{arg}`")))
    })
}

fn profile_or_first(s: &Scenario, p: Option<String>) -> String {
    p.unwrap_or_else(|| s.profiles[0].clone())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!(
                "{}: {} nodes, {} arcs, {} demand nodes, profiles {:?}, horizon [{}, {}]",
                s.name,
                s.nodes.len(),
                s.arcs.len(),
                s.leaves.len(),
                s.profiles,
                s.t0,
                s.t_end
            );
        }
        Command::Simulate {
            scenario,
            run_id,
            out,
            setting,
            profile,
            seed,
            demand,
        } => {
            let s = load(&scenario)?;
            let setting = setting.unwrap_or(s.setting);
            let profile = profile_or_first(&s, profile);
            let config = ExperimentConfig::new(setting, s.schedule(), profile.clone());
            let run = sample_run(&s, &config, demand.into(), seed.unwrap_or(s.seed), run_id)?;
            let name = format!("trajectory_{setting}_{profile}_run{run_id}.csv");
            write_trajectory_csv(&run, create(&out, &name)?)?;
            println!("{}", out.join(name).display());
        }
        Command::Mc {
            scenario,
            n,
            seed,
            out,
            sequential,
            demand,
        } => {
            let s = load(&scenario)?;
            let mut opts = McOptions::from_scenario(&s);
            opts.runs = n.unwrap_or(s.runs);
            opts.seed = seed.unwrap_or(s.seed);
            opts.demand = demand.into();
            if sequential {
                opts.execution = Execution::Sequential;
            }
            let report = monte_carlo(&s, &opts)?;
            println!("setting  leaf  profile  norm_rmse  std_err");
            for r in &report.rows {
                println!(
                    "{:<8} v{:<4} {:<8} {:.4}     {:.4}",
                    r.setting, r.leaf, r.damping_profile, r.norm_rmse, r.std_err
                );
            }
            println!(
                "runs {}, seed {}, {:.1} s",
                opts.runs,
                opts.seed,
                report.runtime.as_secs_f64()
            );
            if let Some(dir) = out {
                write_report_csv(&report.rows, create(&dir, "report.csv")?)?;
            }
        }
        Command::MomentsCheck {
            scenario,
            paths,
            probes,
            seed,
        } => {
            let s = load(&scenario)?;
            let times = probe_times(&s, probes);
            let res = moments_check(
                &s,
                paths,
                &times,
                seed.unwrap_or(s.seed),
                Execution::Parallel,
            );
            println!("leaf  t      mean     mc_mean  z      m2       mc_m2    z");
            let mut all_ok = true;
            for r in &res {
                all_ok &= r.within(3.0);
                println!(
                    "v{:<4} {:<6.3} {:.5}  {:.5}  {:+.2}  {:.5}  {:.5}  {:+.2}",
                    r.leaf.0,
                    r.t,
                    r.exact_mean,
                    r.mc_mean,
                    r.z_mean(),
                    r.exact_m2,
                    r.mc_m2,
                    r.z_m2()
                );
            }
            if !all_ok {
                return Err(Failure::Numerical(anyhow::anyhow!(
                    "sample moments deviate by more than 3 standard errors"
                )));
            }
        }
        Command::ReductionStudy {
            scenario,
            updates,
            settings,
            profile,
            n,
            seed,
            out,
        } => {
            let s = load(&scenario)?;
            if settings.contains(&ModelSetting::Ms1) {
                return Err(Failure::Validation(anyhow::anyhow!(
                    "updates do not affect MS1; use MS2 or MS3"
                )));
            }
            let profile = profile_or_first(&s, profile);
            let mut opts = McOptions::from_scenario(&s);
            opts.runs = n.unwrap_or(s.runs);
            opts.seed = seed.unwrap_or(s.seed);
            let mut counts = vec![0];
            counts.extend(updates);
            let rows = error_reduction_study(&s, &counts, &settings, &profile, &opts)?;
            println!("setting  updates  leaf  norm_rmse  reduction_%");
            for r in &rows {
                println!(
                    "{:<8} {:<8} v{:<4} {:.4}     {:.2}",
                    r.setting, r.updates, r.leaf, r.norm_rmse, r.reduction_pct
                );
            }
            if let Some(dir) = out {
                let mut w = csv::Writer::from_writer(create(&dir, "reduction.csv")?);
                for r in &rows {
                    w.serialize(r).map_err(anyhow::Error::from)?;
                }
                w.flush().map_err(anyhow::Error::from)?;
            }
        }
        Command::Oracle {
            scenario,
            profile,
            points,
            out,
        } => {
            let s = load(&scenario)?;
            let profile = profile_or_first(&s, profile);
            let opts = OracleOptions {
                points,
                ..Default::default()
            };
            let cmp = compare_with_explicit(&s, &profile, &opts)?;
            println!(
                "oracle objective {:.8e}, explicit objective {:.8e}",
                cmp.oracle.objective, cmp.explicit_objective
            );
            println!(
                "relative L2 gap {:.3e} over {} of {} intervals, stationarity {:.1e} after {} sweeps",
                cmp.relative_l2,
                cmp.compared.len(),
                cmp.explicit_control.len(),
                cmp.oracle.stationarity,
                cmp.oracle.sweeps
            );
            if let Some(dir) = out {
                let mut w = csv::Writer::from_writer(create(&dir, "oracle.csv")?);
                w.write_record(["t", "u_oracle", "u_explicit"])
                    .map_err(anyhow::Error::from)?;
                for (c, t) in cmp.oracle.midpoints().iter().enumerate() {
                    w.write_record([
                        format!("{t:.16e}"),
                        format!("{:.16e}", cmp.oracle.control[c]),
                        format!("{:.16e}", cmp.explicit_control[c]),
                    ])
                    .map_err(anyhow::Error::from)?;
                }
                w.flush().map_err(anyhow::Error::from)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
