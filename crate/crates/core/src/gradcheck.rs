//! Central finite-difference checks of the analytic model gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::mdp::{TabularMdp, ValueTable};
use crate::model::{grad, kink_distance, loss, ModelParams, Objective, ObjectiveKind, TransitionBatch};
use crate::random::{random_mdp, random_values, LabRng};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Instances whose loss is at or below this are skipped.
pub const MIN_LOSS: f64 = 1e-6;
/// Instances with an absolute-value argument this close to zero are skipped:
/// a step of `FD_STEP` could cross the kink.
pub const MIN_KINK_DISTANCE: f64 = 1e-4;
/// Denominator floor so that near-zero entries are compared absolutely.
const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub trajectories: usize,
    pub max_trajectory_len: usize,
    pub gamma: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 50,
            num_states: 4,
            num_actions: 2,
            trajectories: 3,
            max_trajectory_len: 5,
            gamma: 0.9,
        }
    }
}

/// Outcome for one objective over the whole suite.
#[derive(Debug, Clone)]
pub struct ObjectiveCheck {
    pub label: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl ObjectiveCheck {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= TOLERANCE
    }
}

/// `max_i |a_i - f_i| / max(|a_i|, |f_i|, 1e-4)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Relative error of [`grad`] against central differences, or `None` when the
/// instance is too close to a kink (or the loss is essentially zero).
pub fn check_instance(
    params: &ModelParams,
    kind: &ObjectiveKind,
    batch: &TransitionBatch,
    v: &ValueTable,
) -> Result<Option<f64>> {
    let value = loss(params, kind, batch, v)?;
    if value.abs() <= MIN_LOSS || kink_distance(params, kind, batch, v)? < MIN_KINK_DISTANCE {
        return Ok(None);
    }
    let analytic = grad(params, kind, batch, v)?;
    let (ns, na) = (params.num_states(), params.num_actions());
    let numeric = finite_difference(params.logits(), FD_STEP, |x| {
        let probe = ModelParams::from_logits(ns, na, x.to_vec()).expect("finite probe");
        loss(&probe, kind, batch, v).expect("loss evaluated above")
    });
    Ok(Some(relative_error(&analytic, &numeric)))
}

/// The objectives covered by the suite: the five main objectives, VPS on its
/// own, and one composite.
pub fn suite_objectives() -> Vec<ObjectiveKind> {
    let mut kinds: Vec<ObjectiveKind> = Objective::ALL.iter().map(|o| ObjectiveKind::new(*o)).collect();
    // alpha = 0 isolates the smoothness term; it is never a valid training config
    kinds.push(ObjectiveKind {
        variant: Objective::MaUbL1,
        alpha: 0.0,
        vps_lambda: 1.0,
    });
    kinds.push(ObjectiveKind::new(Objective::VamlL2).with_alpha(0.7).with_vps(0.3));
    kinds
}

fn suite_label(kind: &ObjectiveKind) -> String {
    if kind.alpha == 0.0 {
        String::from("vps")
    } else {
        kind.label()
    }
}

/// Random batch of whole trajectories sampled from `mdp`, with VPS triples linked.
pub fn random_batch(rng: &mut LabRng, mdp: &TabularMdp, trajectories: usize, max_len: usize) -> TransitionBatch {
    let paths: Vec<(Vec<usize>, Vec<usize>)> = (0..trajectories)
        .map(|_| {
            let len = rng.gen_range(2..=max_len.max(2));
            let mut states = alloc::vec![mdp.sample_start(rng)];
            let mut actions = Vec::with_capacity(len);
            for _ in 0..len {
                let s = *states.last().unwrap();
                let a = rng.gen_range(0..mdp.num_actions());
                actions.push(a);
                states.push(mdp.sample_next(s, a, rng));
            }
            (states, actions)
        })
        .collect();
    TransitionBatch::from_paths(&paths, mdp.gamma())
}

/// Checks every objective on `config.instances` random instances each.
/// Skipped instances are replaced by fresh draws, up to ten times the target.
pub fn run_suite(rng: &mut LabRng, config: &GradcheckConfig) -> Result<Vec<ObjectiveCheck>> {
    let mut results = Vec::new();
    for kind in suite_objectives() {
        let mut check = ObjectiveCheck {
            label: suite_label(&kind),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        let mut attempts = 0;
        while check.checked < config.instances && attempts < 10 * config.instances.max(1) {
            attempts += 1;
            let mdp = random_mdp(rng, config.num_states, config.num_actions, config.gamma);
            let params = ModelParams::random(config.num_states, config.num_actions, 1.5, rng);
            let v = random_values(rng, config.num_states, 2.0);
            let batch = random_batch(rng, &mdp, config.trajectories, config.max_trajectory_len);
            match check_instance(&params, &kind, &batch, &v)? {
                Some(err) => {
                    check.checked += 1;
                    check.max_rel_error = check.max_rel_error.max(err);
                }
                None => check.skipped += 1,
            }
        }
        results.push(check);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;

    #[test]
    fn finite_difference_of_a_quadratic() {
        let g = finite_difference(&[1.0, -2.0], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_catches_a_wrong_gradient() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(relative_error(&[1.0], &[1.1]) > 0.05);
        // tiny entries compare absolutely
        assert!(relative_error(&[1e-9], &[2e-9]) < 1e-4);
    }

    #[test]
    fn suite_passes_on_a_small_run() {
        let mut rng = rng_from_seed(11);
        let config = GradcheckConfig {
            instances: 8,
            ..GradcheckConfig::default()
        };
        for check in run_suite(&mut rng, &config).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }

    #[test]
    fn sign_flip_in_gradient_is_detected() {
        let mut rng = rng_from_seed(12);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9);
        let params = ModelParams::random(4, 2, 1.0, &mut rng);
        let v = random_values(&mut rng, 4, 2.0);
        let batch = random_batch(&mut rng, &mdp, 3, 5);
        let kind = ObjectiveKind::new(Objective::VamlL2);
        let mut wrong = grad(&params, &kind, &batch, &v).unwrap();
        wrong.iter_mut().for_each(|g| *g = -*g);
        let numeric = finite_difference(params.logits(), FD_STEP, |x| {
            loss(&ModelParams::from_logits(4, 2, x.to_vec()).unwrap(), &kind, &batch, &v).unwrap()
        });
        assert!(relative_error(&wrong, &numeric) > 1.0);
    }
}
