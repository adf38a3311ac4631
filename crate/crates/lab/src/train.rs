//! Runs every (method, seed) pair of an experiment, optionally on several
//! threads. Each run owns the RNG stream `(master_seed, method_index, seed)`,
//! so results do not depend on scheduling or on which other runs exist.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use vaml_lab_core::env::Gridworld;
use vaml_lab_core::mbrl::{run_value_aware_mbrl, LoopConfig, RunRecord};
use vaml_lab_core::random::run_rng;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::output::{aggregate, to_csv, write_atomic, write_run_csv};

/// "Solved" means an evaluation whose mean return exceeds this.
pub const SOLVE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct RunJob {
    pub method_index: usize,
    pub method: String,
    pub seed: u32,
    pub config: LoopConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub job: RunJob,
    /// `Err` holds the message of a run that failed outright.
    pub result: std::result::Result<RunRecord, String>,
}

impl RunOutcome {
    pub fn record(&self) -> Option<&RunRecord> {
        self.result.as_ref().ok()
    }
}

/// Method-major, then seed, in config order.
pub fn plan(config: &ExperimentConfig) -> Vec<RunJob> {
    let mut jobs = Vec::new();
    for (i, m) in config.methods.iter().enumerate() {
        for &seed in &config.seeds {
            jobs.push(RunJob {
                method_index: i,
                method: m.label(),
                seed,
                config: config.loop_config(i),
            });
        }
    }
    jobs
}

pub fn run_job(world: &Gridworld, master_seed: u64, job: &RunJob) -> RunOutcome {
    let mut rng = run_rng(master_seed, job.method_index as u32, job.seed);
    let result = run_value_aware_mbrl(&job.config, world, &job.method, job.seed as u64, &mut rng).map_err(|e| e.to_string());
    RunOutcome {
        job: job.clone(),
        result,
    }
}

/// Runs `jobs` on up to `threads` workers; outcomes come back in job order.
pub fn run_jobs(world: &Gridworld, master_seed: u64, jobs: &[RunJob], threads: usize) -> Vec<RunOutcome> {
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(|j| run_job(world, master_seed, j)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let outcome = run_job(world, master_seed, job);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

pub fn build_world(config: &ExperimentConfig) -> Result<Gridworld> {
    Gridworld::new(config.env.spec()).map_err(|source| LabError::Invalid {
        context: "env".into(),
        source,
    })
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    seed: u32,
    status: &'a str,
    evaluations: usize,
    final_return: Option<f64>,
    first_solve_steps: Option<usize>,
    diverged_iteration: Option<usize>,
    max_abs_logit: Option<f64>,
    error: Option<&'a str>,
}

pub fn run_csv_name(method: &str, seed: u32) -> String {
    let safe: String = method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}__seed{seed}.csv")
}

/// Writes `runs/<method>__seed<k>.csv`, `curves.csv` and `summary.csv`
/// under `dir`.
pub fn write_outputs(dir: &Path, outcomes: &[RunOutcome]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for o in outcomes {
        if let Some(record) = o.record() {
            let path = dir.join("runs").join(run_csv_name(&o.job.method, o.job.seed));
            write_run_csv(&path, record)?;
            written.push(path);
        }
    }
    let records: Vec<&RunRecord> = outcomes.iter().filter_map(RunOutcome::record).collect();
    let curves = dir.join("curves.csv");
    let rows = aggregate(&records);
    if rows.is_empty() {
        write_atomic(&curves, b"method,env_steps,runs,mean_return,se_return\n")?;
    } else {
        write_atomic(&curves, &to_csv(&rows)?)?;
    }
    written.push(curves);

    let summary: Vec<SummaryRow> = outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(r) => SummaryRow {
                method: &o.job.method,
                seed: o.job.seed,
                status: if r.divergence.is_some() { "diverged" } else { "ok" },
                evaluations: r.curve.len(),
                final_return: r.final_return(),
                first_solve_steps: r.steps_to_first_solve(SOLVE_THRESHOLD),
                diverged_iteration: r.divergence.map(|d| d.iteration),
                max_abs_logit: r.divergence.map(|d| d.max_abs_logit),
                error: None,
            },
            Err(msg) => SummaryRow {
                method: &o.job.method,
                seed: o.job.seed,
                status: "failed",
                evaluations: 0,
                final_return: None,
                first_solve_steps: None,
                diverged_iteration: None,
                max_abs_logit: None,
                error: Some(msg),
            },
        })
        .collect();
    let path = dir.join("summary.csv");
    write_atomic(&path, &to_csv(&summary)?)?;
    written.push(path);
    Ok(written)
}

/// Loads nothing, runs everything, writes everything.
pub fn train(config: &ExperimentConfig, threads: usize) -> Result<(PathBuf, Vec<RunOutcome>)> {
    let world = build_world(config)?;
    let outcomes = run_jobs(&world, config.master_seed, &plan(config), threads);
    let dir = config.resolved_output_dir();
    write_outputs(&dir, &outcomes)?;
    Ok((dir, outcomes))
}
