//! Exact checks of the simulation lemma, the deviation-error corollary and
//! the loose value-difference bound on pairs of tabular MDPs.
//!
//! All expectations are closed-form matrix algebra. Values are unnormalized
//! (see [`crate::mdp`]), so the constants that make each identity exact were
//! calibrated once by brute force ([`calibrate`]) and are fixed below.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{
    discounted_state_dist, value_exact, StateDistribution, TabularMdp, TabularPolicy, ValueTable,
};

/// Which MDP's discounted state distribution (and next-state law) the
/// expectation is taken under. The model advantage is always measured with
/// the value function of the *other* MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionRole {
    Approx,
    True,
}

/// Candidate factors multiplying the reward-difference term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConventionScale {
    One,
    OneMinusGamma,
    InverseOneMinusGamma,
}

impl ConventionScale {
    pub const ALL: [ConventionScale; 3] = [
        ConventionScale::One,
        ConventionScale::OneMinusGamma,
        ConventionScale::InverseOneMinusGamma,
    ];

    pub fn factor(self, gamma: f64) -> f64 {
        match self {
            ConventionScale::One => 1.0,
            ConventionScale::OneMinusGamma => 1.0 - gamma,
            ConventionScale::InverseOneMinusGamma => 1.0 / (1.0 - gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Convention {
    pub role: DistributionRole,
    pub scale: ConventionScale,
}

/// `J_approx - J_true = E_{d_approx} E_{P_approx}[A_true] / (1 - g) + E_{d_approx}[R_approx - R_true] / (1 - g)`.
pub const SIMULATION_LEMMA_CONVENTION: Convention = Convention {
    role: DistributionRole::Approx,
    scale: ConventionScale::InverseOneMinusGamma,
};

/// `J_approx - J_true = E_{d_true}[T_approx V_approx - T_true V_approx] / (1 - g)`.
pub const DEVIATION_CONVENTION: Convention = Convention {
    role: DistributionRole::True,
    scale: ConventionScale::InverseOneMinusGamma,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaReport {
    /// `J_approx(pi) - J_true(pi)`, computed from exact values.
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Expected model advantage (or expected deviation error), before the
    /// `1 / (1 - gamma)` factor.
    pub ma_term: f64,
    /// Expected reward difference, before `convention_scale`.
    pub reward_term: f64,
    pub convention_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LooseBound {
    pub bound: f64,
    pub actual: f64,
    pub holds: bool,
}

fn check_pair(true_mdp: &TabularMdp, approx_mdp: &TabularMdp, policy: &TabularPolicy) -> Result<()> {
    if true_mdp.num_states() != approx_mdp.num_states()
        || true_mdp.num_actions() != approx_mdp.num_actions()
    {
        return Err(Error::ShapeMismatch(format!(
            "true MDP is {}x{}, approx is {}x{}",
            true_mdp.num_states(),
            true_mdp.num_actions(),
            approx_mdp.num_states(),
            approx_mdp.num_actions()
        )));
    }
    if true_mdp.gamma() != approx_mdp.gamma() {
        return Err(Error::ShapeMismatch(format!(
            "discounts differ: {} vs {}",
            true_mdp.gamma(),
            approx_mdp.gamma()
        )));
    }
    if true_mdp.start() != approx_mdp.start() {
        return Err(Error::ShapeMismatch("start distributions differ".into()));
    }
    true_mdp.check_policy(policy)
}

/// Everything the identities need, evaluated once per pair.
struct PairAlgebra {
    gamma: f64,
    j_true: f64,
    j_approx: f64,
    v_true: ValueTable,
    v_approx: ValueTable,
    d_true: StateDistribution,
    d_approx: StateDistribution,
    r_true: Vec<f64>,
    r_approx: Vec<f64>,
    /// `(P^pi V)(s)` for each (dynamics, value) combination.
    p_true_v_true: Vec<f64>,
    p_true_v_approx: Vec<f64>,
    p_approx_v_true: Vec<f64>,
    p_approx_v_approx: Vec<f64>,
}

fn policy_expectation(mdp: &TabularMdp, probs: &[f64], v: &ValueTable) -> Vec<f64> {
    let mut row = alloc::vec![0.0; mdp.num_states()];
    (0..mdp.num_states())
        .map(|s| {
            mdp.policy_row(probs, s, &mut row);
            math::dot(&row, v.as_slice())
        })
        .collect()
}

impl PairAlgebra {
    fn new(true_mdp: &TabularMdp, approx_mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Self> {
        check_pair(true_mdp, approx_mdp, policy)?;
        let probs = policy.prob_table();
        let v_true = value_exact(true_mdp, policy)?;
        let v_approx = value_exact(approx_mdp, policy)?;
        Ok(PairAlgebra {
            gamma: true_mdp.gamma(),
            j_true: math::dot(true_mdp.start(), v_true.as_slice()),
            j_approx: math::dot(approx_mdp.start(), v_approx.as_slice()),
            d_true: discounted_state_dist(true_mdp, policy)?,
            d_approx: discounted_state_dist(approx_mdp, policy)?,
            r_true: true_mdp.policy_reward(policy),
            r_approx: approx_mdp.policy_reward(policy),
            p_true_v_true: policy_expectation(true_mdp, &probs, &v_true),
            p_true_v_approx: policy_expectation(true_mdp, &probs, &v_approx),
            p_approx_v_true: policy_expectation(approx_mdp, &probs, &v_true),
            p_approx_v_approx: policy_expectation(approx_mdp, &probs, &v_approx),
            v_true,
            v_approx,
        })
    }

    fn reward_gap(&self) -> Vec<f64> {
        self.r_approx.iter().zip(&self.r_true).map(|(a, t)| a - t).collect()
    }

    /// Lemma form under `convention`, always oriented as `J_approx - J_true`.
    fn simulation(&self, convention: Convention) -> LemmaReport {
        let g = self.gamma;
        // E_{s' ~ P_X(s, pi)}[A_Y(s, s')] = g (P_X V_Y - P_Y V_Y)(s), with Y the other MDP.
        let (d, expected_ma): (&StateDistribution, Vec<f64>) = match convention.role {
            DistributionRole::Approx => (
                &self.d_approx,
                self.p_approx_v_true
                    .iter()
                    .zip(&self.p_true_v_true)
                    .map(|(x, y)| g * (x - y))
                    .collect(),
            ),
            DistributionRole::True => (
                &self.d_true,
                self.p_true_v_approx
                    .iter()
                    .zip(&self.p_approx_v_approx)
                    .map(|(x, y)| g * (x - y))
                    .collect(),
            ),
        };
        let ma_term = d.expect(&expected_ma);
        let reward_term = d.expect(&self.reward_gap());
        let scale = convention.scale.factor(g);
        self.report(ma_term / (1.0 - g) + scale * reward_term, ma_term, reward_term, scale)
    }

    /// Per-state deviation error `T_approx V_approx - T_true V_approx`.
    fn deviation(&self) -> Vec<f64> {
        let g = self.gamma;
        (0..self.r_true.len())
            .map(|s| {
                (self.r_approx[s] + g * self.p_approx_v_approx[s])
                    - (self.r_true[s] + g * self.p_true_v_approx[s])
            })
            .collect()
    }

    fn deviation_report(&self, convention: Convention) -> LemmaReport {
        let d = match convention.role {
            DistributionRole::Approx => &self.d_approx,
            DistributionRole::True => &self.d_true,
        };
        let ma_term = d.expect(&self.deviation());
        let reward_term = d.expect(&self.reward_gap());
        let scale = convention.scale.factor(self.gamma);
        self.report(scale * ma_term, ma_term, reward_term, scale)
    }

    fn report(&self, rhs: f64, ma_term: f64, reward_term: f64, convention_scale: f64) -> LemmaReport {
        let lhs = self.j_approx - self.j_true;
        LemmaReport {
            lhs,
            rhs,
            residual: (lhs - rhs).abs(),
            ma_term,
            reward_term,
            convention_scale,
        }
    }
}

/// Simulation lemma: the return gap equals the expected model advantage of
/// the true MDP under the approximate MDP's state distribution plus the
/// expected reward difference.
pub fn check_simulation_lemma(
    true_mdp: &TabularMdp,
    approx_mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<LemmaReport> {
    Ok(PairAlgebra::new(true_mdp, approx_mdp, policy)?.simulation(SIMULATION_LEMMA_CONVENTION))
}

/// Deviation-error corollary. `ma_term` holds the expected deviation error.
pub fn check_deviation_error(
    true_mdp: &TabularMdp,
    approx_mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<LemmaReport> {
    Ok(PairAlgebra::new(true_mdp, approx_mdp, policy)?.deviation_report(DEVIATION_CONVENTION))
}

/// Largest per-state gap between the deviation error
/// `T_true V_approx - T_approx V_approx` and the expected model advantage
/// `E_{s' ~ P_true(s, pi)}[A_approx(s, s')]`. The two coincide exactly when
/// the reward tables match, which is required here.
pub fn deviation_model_advantage_gap(
    true_mdp: &TabularMdp,
    approx_mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<f64> {
    if true_mdp.rewards() != approx_mdp.rewards() {
        return Err(Error::Invalid(
            "deviation/model-advantage equality needs identical reward tables".into(),
        ));
    }
    let alg = PairAlgebra::new(true_mdp, approx_mdp, policy)?;
    let g = alg.gamma;
    let gap = alg
        .deviation()
        .iter()
        .enumerate()
        .map(|(s, dev)| {
            let expected_ma = g * (alg.p_true_v_approx[s] - alg.p_approx_v_approx[s]);
            (-dev - expected_ma).abs()
        })
        .fold(0.0, f64::max);
    Ok(gap)
}

/// `max_s |V_approx(s) - V_true(s)| <= (eps_R + g eps_P R_max / (1 - g)) / (1 - g)`.
pub fn check_loose_bound(
    true_mdp: &TabularMdp,
    approx_mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<LooseBound> {
    let alg = PairAlgebra::new(true_mdp, approx_mdp, policy)?;
    let g = alg.gamma;
    let eps_r = alg
        .r_approx
        .iter()
        .zip(&alg.r_true)
        .fold(0.0, |m, (a, t)| f64::max(m, (a - t).abs()));
    let n = true_mdp.num_states();
    let mut eps_p: f64 = 0.0;
    for s in 0..n {
        for a in 0..true_mdp.num_actions() {
            let l1: f64 = true_mdp
                .transition_row(s, a)
                .iter()
                .zip(approx_mdp.transition_row(s, a))
                .map(|(p, q)| (p - q).abs())
                .sum();
            eps_p = eps_p.max(l1);
        }
    }
    let r_max = f64::max(true_mdp.r_max(), approx_mdp.r_max());
    let bound = (eps_r + g * eps_p * r_max / (1.0 - g)) / (1.0 - g);
    let actual = alg.v_approx.max_abs_diff(&alg.v_true);
    Ok(LooseBound {
        bound,
        actual,
        holds: actual <= bound + 1e-10,
    })
}

/// Which identity a calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identity {
    SimulationLemma,
    DeviationError,
}

/// Brute-force search over every (distribution role, scale) pair, returning
/// the convention with the smallest worst-case residual on `pairs` together
/// with that residual.
pub fn calibrate(
    identity: Identity,
    pairs: &[(TabularMdp, TabularMdp, TabularPolicy)],
) -> Result<(Convention, f64)> {
    let mut best: Option<(Convention, f64)> = None;
    for role in [DistributionRole::Approx, DistributionRole::True] {
        for scale in ConventionScale::ALL {
            let convention = Convention { role, scale };
            let mut worst: f64 = 0.0;
            for (t, a, pi) in pairs {
                let alg = PairAlgebra::new(t, a, pi)?;
                let report = match identity {
                    Identity::SimulationLemma => alg.simulation(convention),
                    Identity::DeviationError => alg.deviation_report(convention),
                };
                worst = worst.max(report.residual);
            }
            if best.is_none_or(|(_, r)| worst < r) {
                best = Some((convention, worst));
            }
        }
    }
    best.ok_or_else(|| Error::Invalid("calibration needs at least one MDP pair".into()))
}

/// Largest residuals over a batch of random pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairSweep {
    pub trials: usize,
    pub max_simulation_residual: f64,
    pub max_deviation_residual: f64,
    /// Pairs where the loose bound failed (with `1e-10` slack).
    pub bound_violations: usize,
    /// Worst `actual / bound` seen; at most 1 when every bound holds.
    pub max_bound_ratio: f64,
    /// Deviation error vs expected model advantage, on a second approximate
    /// MDP that shares the true reward table.
    pub max_shared_reward_gap: f64,
}

impl PairSweep {
    pub fn passes(&self, residual_tol: f64, gap_tol: f64) -> bool {
        self.max_simulation_residual <= residual_tol
            && self.max_deviation_residual <= residual_tol
            && self.bound_violations == 0
            && self.max_shared_reward_gap <= gap_tol
    }
}

pub const SWEEP_GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
pub const SWEEP_MAX_ACTIONS: usize = 4;

/// Runs every check on `trials` random (true, approx, policy) triples.
/// States are drawn from `2..=max_states`, actions from `1..=4` and the
/// discount cycles through [`SWEEP_GAMMAS`]. With `base`, every trial
/// perturbs that MDP instead of drawing a fresh one.
pub fn sweep_random_pairs<R: rand::Rng + ?Sized>(
    rng: &mut R,
    trials: usize,
    max_states: usize,
    base: Option<&TabularMdp>,
) -> Result<PairSweep> {
    use crate::random::{perturbed_mdp, random_mdp, random_policy};
    if base.is_none() && max_states < 2 {
        return Err(Error::Invalid(format!("max_states must be at least 2, got {max_states}")));
    }
    let mut out = PairSweep {
        trials,
        ..PairSweep::default()
    };
    for i in 0..trials {
        let true_mdp = match base {
            Some(mdp) => mdp.clone(),
            None => {
                let n = rng.gen_range(2..=max_states);
                let k = rng.gen_range(1..=SWEEP_MAX_ACTIONS);
                random_mdp(rng, n, k, SWEEP_GAMMAS[i % SWEEP_GAMMAS.len()])
            }
        };
        let mix = rng.gen_range(0.05..1.0);
        let approx = perturbed_mdp(rng, &true_mdp, mix, 0.3);
        let shared = perturbed_mdp(rng, &true_mdp, mix, 0.0);
        let policy = random_policy(rng, true_mdp.num_states(), true_mdp.num_actions());

        let sim = check_simulation_lemma(&true_mdp, &approx, &policy)?;
        let dev = check_deviation_error(&true_mdp, &approx, &policy)?;
        let bound = check_loose_bound(&true_mdp, &approx, &policy)?;
        let gap = deviation_model_advantage_gap(&true_mdp, &shared, &policy)?;
        out.max_simulation_residual = out.max_simulation_residual.max(sim.residual);
        out.max_deviation_residual = out.max_deviation_residual.max(dev.residual);
        if !bound.holds {
            out.bound_violations += 1;
        }
        if bound.bound > 0.0 {
            out.max_bound_ratio = out.max_bound_ratio.max(bound.actual / bound.bound);
        }
        out.max_shared_reward_gap = out.max_shared_reward_gap.max(gap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{perturbed_mdp, random_mdp, random_policy, rng_from_seed};
    use alloc::vec::Vec;

    fn pairs(seed: u64, count: usize, states: usize, reward_noise: f64) -> Vec<(TabularMdp, TabularMdp, TabularPolicy)> {
        let mut rng = rng_from_seed(seed);
        (0..count)
            .map(|i| {
                let gamma = [0.5, 0.9, 0.99][i % 3];
                let t = random_mdp(&mut rng, states, 2, gamma);
                let a = perturbed_mdp(&mut rng, &t, 0.5, reward_noise);
                let pi = random_policy(&mut rng, states, 2);
                (t, a, pi)
            })
            .collect()
    }

    #[test]
    fn calibration_reproduces_hard_coded_conventions() {
        let sample = pairs(1234, 12, 3, 0.3);
        let (lemma, residual) = calibrate(Identity::SimulationLemma, &sample).unwrap();
        assert_eq!(lemma, SIMULATION_LEMMA_CONVENTION);
        assert!(residual < 1e-9);
        let (dev, residual) = calibrate(Identity::DeviationError, &sample).unwrap();
        assert_eq!(dev, DEVIATION_CONVENTION);
        assert!(residual < 1e-9);
    }

    #[test]
    fn sweep_passes_and_counts_trials() {
        let mut rng = rng_from_seed(3);
        let sweep = sweep_random_pairs(&mut rng, 30, 6, None).unwrap();
        assert_eq!(sweep.trials, 30);
        assert!(sweep.passes(1e-8, 1e-10), "{sweep:?}");
        assert!(sweep.max_bound_ratio <= 1.0);
        let empty = sweep_random_pairs(&mut rng, 0, 6, None).unwrap();
        assert_eq!(empty, PairSweep::default());
    }

    #[test]
    fn sweep_around_a_fixed_mdp() {
        let mut rng = rng_from_seed(4);
        let base = random_mdp(&mut rng, 3, 2, 0.9);
        let sweep = sweep_random_pairs(&mut rng, 5, 0, Some(&base)).unwrap();
        assert!(sweep.passes(1e-8, 1e-10));
    }

    #[test]
    fn identical_mdps_give_zero_terms() {
        let (t, _, pi) = pairs(5, 1, 4, 0.0).remove(0);
        let r = check_simulation_lemma(&t, &t, &pi).unwrap();
        assert_eq!(r.ma_term, 0.0);
        assert_eq!(r.reward_term, 0.0);
        assert!(r.residual <= 1e-12);
        let d = check_deviation_error(&t, &t, &pi).unwrap();
        assert_eq!(d.ma_term, 0.0);
        let b = check_loose_bound(&t, &t, &pi).unwrap();
        assert!(b.holds && b.actual == 0.0 && b.bound >= 0.0);
    }

    #[test]
    fn shared_rewards_leave_only_model_advantage() {
        for (t, a, pi) in pairs(9, 9, 5, 0.0) {
            let r = check_simulation_lemma(&t, &a, &pi).unwrap();
            assert_eq!(r.reward_term, 0.0);
            assert!(r.residual <= 1e-8 * (1.0 + r.lhs.abs()));
            assert!(deviation_model_advantage_gap(&t, &a, &pi).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn role_swap_negates_both_sides() {
        for (t, a, pi) in pairs(17, 9, 4, 0.2) {
            let fwd = check_simulation_lemma(&t, &a, &pi).unwrap();
            let back = check_simulation_lemma(&a, &t, &pi).unwrap();
            assert!((fwd.lhs + back.lhs).abs() <= 1e-8);
            assert!((fwd.rhs + back.rhs).abs() <= 1e-8);
        }
    }

    #[test]
    fn shrinking_perturbation_drives_ma_term_to_zero() {
        let mut rng = rng_from_seed(77);
        let t = random_mdp(&mut rng, 5, 3, 0.9);
        let far = perturbed_mdp(&mut rng, &t, 1.0, 0.0);
        let pi = random_policy(&mut rng, 5, 3);
        let v_true = value_exact(&t, &pi).unwrap();
        let probs = pi.prob_table();
        // |ma(w)| <= w * g * max_s |((P_far - P) V_true)(s)| since d is a distribution.
        let slope = policy_expectation(&far, &probs, &v_true)
            .iter()
            .zip(policy_expectation(&t, &probs, &v_true))
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            * 0.9;
        for w in [1.0, 0.5, 0.1, 1e-2, 1e-4, 1e-6, 0.0] {
            let mixed: Vec<f64> = t
                .transitions()
                .iter()
                .zip(far.transitions())
                .map(|(p, q)| (1.0 - w) * p + w * q)
                .collect();
            let approx = t.with_transitions(mixed).unwrap();
            let ma = check_simulation_lemma(&t, &approx, &pi).unwrap().ma_term.abs();
            assert!(ma <= w * slope + 1e-12, "w={w}: {ma} > {}", w * slope);
        }
    }

    #[test]
    fn uniform_reward_shift_meets_bound_with_equality() {
        let mut rng = rng_from_seed(3);
        let t = random_mdp(&mut rng, 4, 2, 0.9);
        let scaled: Vec<f64> = t.rewards().iter().map(|r| 0.5 * r).collect();
        let t = t.with_rewards(scaled, 1.0).unwrap();
        let shifted: Vec<f64> = t.rewards().iter().map(|r| r + 0.25).collect();
        let a = t.with_rewards(shifted, 1.0).unwrap();
        let pi = random_policy(&mut rng, 4, 2);
        let b = check_loose_bound(&t, &a, &pi).unwrap();
        assert!((b.actual - 0.25 / 0.1).abs() < 1e-10);
        assert!((b.bound - b.actual).abs() < 1e-10);
        assert!(b.holds);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = rng_from_seed(1);
        let t = random_mdp(&mut rng, 3, 2, 0.9);
        let other = random_mdp(&mut rng, 4, 2, 0.9);
        let pi = random_policy(&mut rng, 3, 2);
        assert!(matches!(
            check_simulation_lemma(&t, &other, &pi),
            Err(Error::ShapeMismatch(_))
        ));
        let g = TabularMdp::new(3, 2, t.transitions().to_vec(), t.rewards().to_vec(), t.start().to_vec(), 0.5, 1.0)
            .unwrap();
        assert!(matches!(check_loose_bound(&t, &g, &pi), Err(Error::ShapeMismatch(_))));
    }
}
