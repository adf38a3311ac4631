//! Log-scale hyperparameter sweep: every candidate runs on the sweep seeds
//! for the full step budget and the best mean final return wins. A candidate
//! with any diverged or failed run is never selected.

use serde::Serialize;

use crate::config::{ExperimentConfig, SweepSettings};
use crate::error::{LabError, Result};
use crate::train::{build_world, run_jobs, RunJob, RunOutcome};

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub alpha: f64,
    pub vps_lambda: f64,
    /// `None` when any run diverged or failed.
    pub mean_return: Option<f64>,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSweep {
    pub method: String,
    pub selected: Option<Candidate>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub total_env_steps: usize,
    pub seeds: Vec<u32>,
    pub methods: Vec<MethodSweep>,
}

fn score(outcomes: &[RunOutcome]) -> (Option<f64>, usize) {
    let mut finals = Vec::with_capacity(outcomes.len());
    let mut bad = 0;
    for o in outcomes {
        match o.record() {
            Some(r) if r.divergence.is_none() => match r.final_return() {
                Some(x) if x.is_finite() => finals.push(x),
                _ => bad += 1,
            },
            _ => bad += 1,
        }
    }
    if bad > 0 || finals.is_empty() {
        return (None, bad);
    }
    (Some(finals.iter().sum::<f64>() / finals.len() as f64), 0)
}

/// Highest score; the earliest candidate wins ties.
pub fn select(candidates: &[Candidate]) -> Option<Candidate> {
    let mut best: Option<&Candidate> = None;
    for c in candidates {
        if let Some(x) = c.mean_return {
            if best.and_then(|b| b.mean_return).is_none_or(|b| x > b) {
                best = Some(c);
            }
        }
    }
    best.cloned()
}

pub fn sweep(config: &ExperimentConfig, threads: usize) -> Result<SweepReport> {
    let settings: &SweepSettings = config
        .sweep
        .as_ref()
        .ok_or_else(|| LabError::Config("sweep needs a \"sweep\" section".into()))?;
    let world = build_world(config)?;
    let alphas = settings.alpha.values();

    // every (method, candidate, seed) job, flattened so threads stay busy
    let mut jobs = Vec::new();
    let mut layout = Vec::new();
    for (i, method) in config.methods.iter().enumerate() {
        let lambdas = match &settings.vps_lambda {
            Some(grid) if method.vps_lambda > 0.0 => grid.values(),
            _ => vec![method.vps_lambda],
        };
        let mut grid = Vec::new();
        for &alpha in &alphas {
            for &vps_lambda in &lambdas {
                let mut loop_config = config.loop_config(i);
                loop_config.objective = method.kind().with_alpha(alpha).with_vps(vps_lambda);
                for &seed in &settings.seeds {
                    jobs.push(RunJob {
                        method_index: i,
                        method: method.label(),
                        seed,
                        config: loop_config.clone(),
                    });
                }
                grid.push((alpha, vps_lambda));
            }
        }
        layout.push((method.label(), grid));
    }
    let outcomes = run_jobs(&world, config.master_seed, &jobs, threads);

    let per = settings.seeds.len();
    let mut chunks = outcomes.chunks(per);
    let methods = layout
        .into_iter()
        .map(|(method, grid)| {
            let candidates: Vec<Candidate> = grid
                .into_iter()
                .map(|(alpha, vps_lambda)| {
                    let (mean_return, diverged_runs) = score(chunks.next().expect("one chunk per candidate"));
                    Candidate {
                        alpha,
                        vps_lambda,
                        mean_return,
                        diverged_runs,
                    }
                })
                .collect();
            MethodSweep {
                method,
                selected: select(&candidates),
                candidates,
            }
        })
        .collect();
    Ok(SweepReport {
        total_env_steps: config.total_env_steps,
        seeds: settings.seeds.clone(),
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(alpha: f64, mean_return: Option<f64>) -> Candidate {
        Candidate {
            alpha,
            vps_lambda: 0.0,
            mean_return,
            diverged_runs: usize::from(mean_return.is_none()),
        }
    }

    #[test]
    fn single_candidate_is_selected() {
        assert_eq!(select(&[c(2.0, Some(-1.0))]).unwrap().alpha, 2.0);
    }

    #[test]
    fn diverged_candidate_loses_to_a_finite_one() {
        assert_eq!(select(&[c(1e9, None), c(1.0, Some(0.2))]).unwrap().alpha, 1.0);
        assert!(select(&[c(1e9, None)]).is_none());
    }

    #[test]
    fn ties_keep_the_first() {
        assert_eq!(select(&[c(1.0, Some(1.0)), c(10.0, Some(1.0))]).unwrap().alpha, 1.0);
    }
}
