//! Command bodies, kept out of `main` so tests can call them.

use std::io::Write;
use std::path::Path;

use vaml_lab_core::env::{Gridworld, GridworldSpec};
use vaml_lab_core::gradcheck::{run_suite, GradcheckConfig, ObjectiveCheck, TOLERANCE};
use vaml_lab_core::lemma::{sweep_random_pairs, PairSweep};
use vaml_lab_core::random::rng_from_seed;
use vaml_lab_core::TabularMdp;

use crate::error::{LabError, Result};
use crate::mdp_json::save_mdp;

pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
pub const SHARED_REWARD_TOLERANCE: f64 = 1e-10;

fn core_err(context: &str) -> impl FnOnce(vaml_lab_core::Error) -> LabError + '_ {
    move |source| LabError::Invalid {
        context: context.into(),
        source,
    }
}

/// Returns the sweep and whether it passed. Zero trials pass with a warning.
pub fn verify_lemmas(
    trials: usize,
    seed: u64,
    max_states: usize,
    base: Option<&TabularMdp>,
    out: &mut dyn Write,
) -> Result<(PairSweep, bool)> {
    if trials == 0 {
        eprintln!("warning: verify-lemmas with 0 trials checks nothing");
    }
    let mut rng = rng_from_seed(seed);
    let sweep = sweep_random_pairs(&mut rng, trials, max_states, base).map_err(core_err("verify-lemmas"))?;
    let ok = sweep.passes(RESIDUAL_TOLERANCE, SHARED_REWARD_TOLERANCE);
    let _ = writeln!(
        out,
        "trials {}\nsimulation lemma   max residual {:.3e}\ndeviation error    max residual {:.3e}\nloose bound        violations {} (worst actual/bound {:.3})\nshared rewards     max gap {:.3e}\n{}",
        sweep.trials,
        sweep.max_simulation_residual,
        sweep.max_deviation_residual,
        sweep.bound_violations,
        sweep.max_bound_ratio,
        sweep.max_shared_reward_gap,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok((sweep, ok))
}

pub fn gradcheck(seed: u64, out: &mut dyn Write) -> Result<(Vec<ObjectiveCheck>, bool)> {
    let mut rng = rng_from_seed(seed);
    let checks = run_suite(&mut rng, &GradcheckConfig::default()).map_err(core_err("gradcheck"))?;
    let _ = writeln!(out, "{:<16} {:>7} {:>7} {:>12}", "objective", "checked", "skipped", "max rel err");
    for c in &checks {
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>7} {:>12.3e} {}",
            c.label,
            c.checked,
            c.skipped,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let ok = checks.iter().all(ObjectiveCheck::passed);
    let _ = writeln!(out, "tolerance {TOLERANCE:e}: {}", if ok { "PASS" } else { "FAIL" });
    Ok((checks, ok))
}

pub fn build_env(size: usize, path: &Path) -> Result<Gridworld> {
    let world = Gridworld::new(GridworldSpec::with_size(size)).map_err(core_err("build-env"))?;
    save_mdp(path, world.mdp())?;
    Ok(world)
}
