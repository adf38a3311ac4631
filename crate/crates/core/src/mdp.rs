//! Exact finite-MDP machinery.
//!
//! Values follow the unnormalized convention everywhere:
//! `V(s0) = sum_t gamma^t E[R(s_t, a_t)]`. Evaluation is done with a dense
//! linear solve rather than iteration, so identities built on top of these
//! functions hold to round-off.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP `(S, A, P, R, P0, gamma)` with rewards in `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `P[s][a][s']`, flattened.
    transition: Vec<f64>,
    /// `R[s][a]`, flattened.
    reward: Vec<f64>,
    start: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        start: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Invalid(format!(
                "need at least one state and action, got {num_states}x{num_actions}"
            )));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(Error::Invalid(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * num_states
            )));
        }
        if reward.len() != sa {
            return Err(Error::Invalid(format!(
                "reward has {} entries, expected {sa}",
                reward.len()
            )));
        }
        if start.len() != num_states {
            return Err(Error::Invalid(format!(
                "start distribution has {} entries, expected {num_states}",
                start.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!("discount {gamma} outside (0, 1)")));
        }
        if !(r_max >= 0.0) || !r_max.is_finite() {
            return Err(Error::Invalid(format!("r_max {r_max} must be finite and >= 0")));
        }
        for (row_index, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::Invalid(format!(
                    "transition row (s={}, a={}) has a negative or non-finite entry",
                    row_index / num_actions,
                    row_index % num_actions
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!(
                    "transition row (s={}, a={}) sums to {total}",
                    row_index / num_actions,
                    row_index % num_actions
                )));
            }
        }
        if start.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Invalid("start distribution has a negative entry".into()));
        }
        let start_total: f64 = start.iter().sum();
        if (start_total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Invalid(format!("start distribution sums to {start_total}")));
        }
        if let Some((i, r)) = reward
            .iter()
            .enumerate()
            .find(|(_, r)| !(**r >= 0.0 && **r <= r_max))
        {
            return Err(Error::Invalid(format!(
                "reward R[{}][{}] = {r} outside [0, {r_max}]",
                i / num_actions,
                i % num_actions
            )));
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            start,
            gamma,
            r_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    /// Same dynamics and start distribution with a different reward table.
    pub fn with_rewards(&self, reward: Vec<f64>, r_max: f64) -> Result<Self> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            reward,
            self.start.clone(),
            self.gamma,
            r_max,
        )
    }

    /// Same rewards, start distribution and discount with new dynamics.
    pub fn with_transitions(&self, transition: Vec<f64>) -> Result<Self> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            transition,
            self.reward.clone(),
            self.start.clone(),
            self.gamma,
            self.r_max,
        )
    }

    pub fn check_index(&self, s: usize) -> Result<()> {
        if s < self.num_states {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "state",
                index: s,
                len: self.num_states,
            })
        }
    }

    pub(crate) fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states != self.num_states || policy.num_actions != self.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.num_states, policy.num_actions, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    /// Policy-averaged next-state distribution `P^pi(.|s)`.
    pub fn policy_row(&self, probs: &[f64], s: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for a in 0..self.num_actions {
            let w = probs[s * self.num_actions + a];
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.transition_row(s, a)) {
                *o += w * p;
            }
        }
    }

    /// Policy-averaged reward `R^pi(s)` for every state.
    pub fn policy_reward(&self, policy: &TabularPolicy) -> Vec<f64> {
        let probs = policy.prob_table();
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| probs[s * self.num_actions + a] * self.reward(s, a))
                    .sum()
            })
            .collect()
    }

    /// `I - gamma P^pi` as a dense matrix.
    fn evaluation_matrix(&self, probs: &[f64]) -> Matrix {
        let n = self.num_states;
        let mut m = Matrix::identity(n);
        let mut row = alloc::vec![0.0; n];
        for s in 0..n {
            self.policy_row(probs, s, &mut row);
            for (sp, p) in row.iter().enumerate() {
                if *p != 0.0 {
                    m.add(s, sp, -self.gamma * p);
                }
            }
        }
        m
    }

    /// Samples `s' ~ P(.|s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition_row(s, a), rng)
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.start, rng)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Softmax policy over per-state action logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            num_states,
            num_actions,
            logits: alloc::vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_actions {
            return Err(Error::Invalid(format!(
                "policy has {} logits, expected {}",
                logits.len(),
                num_states * num_actions
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Invalid("policy logits must be finite".into()));
        }
        Ok(TabularPolicy {
            num_states,
            num_actions,
            logits,
        })
    }

    /// Near-deterministic softmax policy that picks `actions[s]` with
    /// probability `1 - O(e^-margin)`.
    pub fn near_deterministic(num_actions: usize, actions: &[usize], margin: f64) -> Self {
        let mut policy = TabularPolicy::uniform(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            policy.logits[s * num_actions + a] = margin;
        }
        policy
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn state_logits(&self, s: usize) -> &[f64] {
        &self.logits[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.num_actions];
        math::softmax_into(self.state_logits(s), &mut out);
        out
    }

    /// `pi(a|s)` for every state, flattened `[s][a]`.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.logits.len()];
        for (l, o) in self
            .logits
            .chunks(self.num_actions)
            .zip(out.chunks_mut(self.num_actions))
        {
            math::softmax_into(l, o);
        }
        out
    }

    /// Gradient of `ln pi(a|s)` with respect to the logits of state `s`.
    pub fn log_prob_grad(&self, s: usize, a: usize) -> Vec<f64> {
        let mut g = self.probs(s);
        g.iter_mut().for_each(|p| *p = -*p);
        g[a] += 1.0;
        g
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(s), rng)
    }
}

/// Per-state value estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable(pub Vec<f64>);

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        ValueTable(alloc::vec![0.0; num_states])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `max_s |self(s) - other(s)|`.
    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

impl Index<usize> for ValueTable {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(pub Vec<f64>);

impl StateDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn expect(&self, f: &[f64]) -> f64 {
        math::dot(&self.0, f)
    }
}

/// Unique fixed point of `T^pi_M`, solved from `(I - gamma P^pi) V = R^pi`.
pub fn value_exact(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<ValueTable> {
    mdp.check_policy(policy)?;
    let probs = policy.prob_table();
    let rhs = mdp.policy_reward(policy);
    let v = mdp.evaluation_matrix(&probs).solve(&rhs)?;
    Ok(ValueTable(v))
}

/// `Q[s][a] = R[s][a] + gamma * sum_s' P[s][a][s'] V(s')`, flattened.
pub fn q_exact(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let v = value_exact(mdp, policy)?;
    Ok(q_from_values(mdp, &v))
}

pub(crate) fn q_from_values(mdp: &TabularMdp, v: &ValueTable) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.num_states * mdp.num_actions);
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            q.push(mdp.reward(s, a) + mdp.gamma * math::dot(mdp.transition_row(s, a), &v.0));
        }
    }
    q
}

/// One application of the policy Bellman operator `T^pi_M`.
pub fn bellman_apply(mdp: &TabularMdp, policy: &TabularPolicy, v: &ValueTable) -> Result<ValueTable> {
    mdp.check_policy(policy)?;
    if v.len() != mdp.num_states {
        return Err(Error::ShapeMismatch(format!(
            "value table has {} entries, MDP has {} states",
            v.len(),
            mdp.num_states
        )));
    }
    let probs = policy.prob_table();
    let q = q_from_values(mdp, v);
    let out = (0..mdp.num_states)
        .map(|s| {
            let base = s * mdp.num_actions;
            math::dot(&probs[base..base + mdp.num_actions], &q[base..base + mdp.num_actions])
        })
        .collect();
    Ok(ValueTable(out))
}

/// `d(s') = (1 - gamma) sum_t gamma^t Pr(s_t = s')` with `s_0 ~ P0`.
pub fn discounted_state_dist(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<StateDistribution> {
    discounted_state_dist_from(mdp, policy, &mdp.start)
}

/// Discounted state distribution for an arbitrary initial distribution.
pub fn discounted_state_dist_from(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    initial: &[f64],
) -> Result<StateDistribution> {
    mdp.check_policy(policy)?;
    if initial.len() != mdp.num_states {
        return Err(Error::ShapeMismatch(format!(
            "initial distribution has {} entries, MDP has {} states",
            initial.len(),
            mdp.num_states
        )));
    }
    let probs = policy.prob_table();
    let x = mdp.evaluation_matrix(&probs).transpose().solve(initial)?;
    let d = x.into_iter().map(|p| f64::max(0.0, (1.0 - mdp.gamma) * p)).collect();
    Ok(StateDistribution(d))
}

/// Discounted state distribution when starting deterministically in `s0`.
pub fn discounted_state_dist_at(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    s0: usize,
) -> Result<StateDistribution> {
    mdp.check_index(s0)?;
    let mut initial = alloc::vec![0.0; mdp.num_states];
    initial[s0] = 1.0;
    discounted_state_dist_from(mdp, policy, &initial)
}

/// `gamma * (V(s_next) - E_{s'' ~ P(s, pi)} V(s''))`.
pub fn model_advantage(
    approx: &TabularMdp,
    policy: &TabularPolicy,
    v_approx: &ValueTable,
    s: usize,
    s_next: usize,
) -> Result<f64> {
    approx.check_policy(policy)?;
    approx.check_index(s)?;
    approx.check_index(s_next)?;
    if v_approx.len() != approx.num_states {
        return Err(Error::ShapeMismatch("value table length".into()));
    }
    let probs = policy.probs(s);
    let expected: f64 = (0..approx.num_actions)
        .map(|a| probs[a] * math::dot(approx.transition_row(s, a), &v_approx.0))
        .sum();
    Ok(approx.gamma * (v_approx[s_next] - expected))
}

/// `J(pi) = sum_s P0(s) V^pi(s)`.
pub fn expected_return(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let v = value_exact(mdp, policy)?;
    Ok(math::dot(&mdp.start, &v.0))
}

/// The stationary-distribution form `J(pi) = E_{s ~ d, a ~ pi}[R(s, a)] / (1 - gamma)`.
pub fn expected_return_stationary(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let d = discounted_state_dist(mdp, policy)?;
    Ok(d.expect(&mdp.policy_reward(policy)) / (1.0 - mdp.gamma))
}
