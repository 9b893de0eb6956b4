//! Density sweeps: generate, solve, validate, and record one CSV row per
//! trial, then aggregate per density.

use std::io;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    generate_random, make_experiment_env, ExperimentEnv, GoalPolicy, Instance, InstanceError,
};
use crate::phans::{solve, SolverLimits};
use crate::sim::validate_solution;

pub const CSV_HEADER: &str = "density,trial,seed,success,makespan,compute_time_ms,failure_reason";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error("density {density}, trial {trial}: {source}")]
    Generate {
        density: f64,
        trial: usize,
        source: InstanceError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Where trial instances come from.
#[derive(Debug, Clone)]
pub enum Source {
    /// Fresh random instances on a benchmark environment.
    Env {
        env: ExperimentEnv,
        n_targets: usize,
        goal_policy: GoalPolicy,
    },
    /// Fixed instances; each becomes one trial at its own density.
    Instances(Vec<Instance>),
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub source: Source,
    pub densities: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub limits: SolverLimits,
}

impl SweepConfig {
    /// Environment sweep with that environment's default targets and goal
    /// policy, the default 180 s limit, and base seed 0.
    pub fn for_env(env: ExperimentEnv, densities: Vec<f64>, trials: usize) -> Self {
        SweepConfig {
            source: Source::Env {
                env,
                n_targets: env.default_targets(),
                goal_policy: env.default_goal_policy(),
            },
            densities,
            trials,
            base_seed: 0,
            limits: SolverLimits::default(),
        }
    }

    pub fn check(&self) -> Result<(), BenchError> {
        if let Source::Instances(list) = &self.source {
            if list.is_empty() {
                return Err(BenchError::Config("no instances given".into()));
            }
            return Ok(());
        }
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.densities.is_empty() {
            return Err(BenchError::Config("no densities given".into()));
        }
        if let Some(d) = self.densities.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(BenchError::Config(format!("density {d} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub density: f64,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub makespan: Option<usize>,
    pub compute_time_ms: f64,
    pub failure_reason: Option<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial generator seed: the base seed mixed with a hash of
/// (density, trial).
pub fn trial_seed(base_seed: u64, density: f64, trial: usize) -> u64 {
    let key = splitmix64(density.to_bits()) ^ splitmix64(trial as u64).rotate_left(32);
    splitmix64(base_seed ^ splitmix64(key))
}

/// Fraction of all cells holding an obstacle or an obstructing agent.
pub fn instance_density(inst: &Instance) -> f64 {
    let grid = inst.grid();
    (grid.obstacles().len() + inst.obstructors().len()) as f64 / grid.num_cells() as f64
}

/// Solve and validate one instance. Only the solver call is timed.
pub fn run_trial(inst: &Instance, density: f64, trial: usize, seed: u64, limits: &SolverLimits) -> TrialRecord {
    let clock = Instant::now();
    let outcome = solve(inst, limits);
    let elapsed = clock.elapsed();
    let (success, makespan, failure_reason) = match outcome {
        Ok(sol) if validate_solution(inst, &sol).is_valid() => (true, Some(sol.makespan), None),
        Ok(_) => (false, None, Some("invalid_solution".to_string())),
        Err(f) => (false, None, Some(f.reason.name().to_string())),
    };
    TrialRecord {
        density,
        trial,
        seed,
        success,
        makespan,
        compute_time_ms: millis(elapsed),
        failure_reason,
    }
}

fn millis(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

/// Runs every trial on the rayon pool; records come back in
/// (density, trial) order whatever the completion order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<TrialRecord>, BenchError> {
    cfg.check()?;
    match &cfg.source {
        Source::Instances(list) => Ok(list
            .par_iter()
            .enumerate()
            .map(|(i, inst)| run_trial(inst, instance_density(inst), i, 0, &cfg.limits))
            .collect()),
        Source::Env {
            env,
            n_targets,
            goal_policy,
        } => {
            let grid = make_experiment_env(*env);
            let jobs: Vec<(f64, usize)> = cfg
                .densities
                .iter()
                .flat_map(|&d| (0..cfg.trials).map(move |t| (d, t)))
                .collect();
            jobs.par_iter()
                .map(|&(density, trial)| {
                    let seed = trial_seed(cfg.base_seed, density, trial);
                    let inst = generate_random(&grid, *n_targets, density, seed, *goal_policy)
                        .map_err(|source| BenchError::Generate {
                            density,
                            trial,
                            source,
                        })?;
                    Ok(run_trial(&inst, density, trial, seed, &cfg.limits))
                })
                .collect()
        }
    }
}

pub fn write_csv<W: io::Write>(records: &[TrialRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<TrialRecord>, BenchError> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if !header.is_empty() && header.join(",") != CSV_HEADER {
        return Err(BenchError::Config(format!("unexpected header '{}'", header.join(","))));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let r: TrialRecord = row?;
        if r.success != r.makespan.is_some() || r.success == r.failure_reason.is_some() {
            return Err(BenchError::Config(format!(
                "trial {} at density {}: success flag disagrees with makespan or failure reason",
                r.trial, r.density
            )));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySummary {
    pub density: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_compute_ms: f64,
    pub median_compute_ms: f64,
    /// `None` when fewer than half the trials succeeded.
    pub mean_makespan: Option<f64>,
    pub median_makespan: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// One row per density in ascending order.
pub fn summarize(records: &[TrialRecord]) -> Vec<DensitySummary> {
    let mut densities: Vec<f64> = records.iter().map(|r| r.density).collect();
    densities.sort_by(f64::total_cmp);
    densities.dedup();
    densities
        .into_iter()
        .map(|density| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.density == density).collect();
            let mut times: Vec<f64> = rows.iter().map(|r| r.compute_time_ms).collect();
            let mut spans: Vec<f64> = rows.iter().filter_map(|r| r.makespan).map(|m| m as f64).collect();
            let trials = rows.len();
            let successes = spans.len();
            let success_rate = successes as f64 / trials as f64;
            let shown = success_rate >= 0.5;
            DensitySummary {
                density,
                trials,
                successes,
                success_rate,
                mean_compute_ms: mean(&times),
                median_compute_ms: median(&mut times),
                mean_makespan: shown.then(|| mean(&spans)),
                median_makespan: shown.then(|| median(&mut spans)),
            }
        })
        .collect()
}

/// Plain-text table of [`summarize`] output.
pub fn render_summary(rows: &[DensitySummary]) -> String {
    let mut s = format!(
        "{:>8} {:>7} {:>8} {:>14} {:>14} {:>13} {:>15}\n",
        "density", "trials", "success", "mean_ms", "median_ms", "mean_makespan", "median_makespan"
    );
    let cell = |v: Option<f64>| v.map_or_else(|| "suppressed".to_string(), |m| format!("{m:.2}"));
    for r in rows {
        s.push_str(&format!(
            "{:>8.3} {:>7} {:>8.3} {:>14.3} {:>14.3} {:>13} {:>15}\n",
            r.density,
            r.trials,
            r.success_rate,
            r.mean_compute_ms,
            r.median_compute_ms,
            cell(r.mean_makespan),
            cell(r.median_makespan),
        ));
    }
    s
}

/// Places where mean makespan drops as density rises, counting only
/// densities whose makespan is shown.
pub fn makespan_inversions(rows: &[DensitySummary]) -> usize {
    let spans: Vec<f64> = rows.iter().filter_map(|r| r.mean_makespan).collect();
    spans.windows(2).filter(|w| w[1] < w[0]).count()
}
