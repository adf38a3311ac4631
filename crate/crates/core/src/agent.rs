//! Tabular actor-critic trained on transitions simulated by a model.

use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::mdp::{sample_categorical, TabularMdp, TabularPolicy, ValueTable};

/// Where a transition came from. Model buffers must only ever hold `Model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// Last transition of its rollout segment (terminal state or horizon).
    pub last: bool,
    pub provenance: Provenance,
}

/// How the critic turns simulated transitions into value targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CriticUpdate {
    /// `V(s) += lr (r + gamma V(s') - V(s))`, one transition at a time.
    #[default]
    Td0,
    /// Discounted return of the rest of the segment, bootstrapped with `V`
    /// where the segment is cut.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub policy: TabularPolicy,
    pub values: ValueTable,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub entropy_bonus: f64,
    pub critic: CriticUpdate,
    /// States whose value is pinned (absorbing terminals); the critic never
    /// moves them and rollouts stop on reaching them.
    pub terminal: Vec<bool>,
}

impl AgentParams {
    /// Uniform policy, zero values, no terminal states.
    pub fn new(num_states: usize, num_actions: usize, lr_policy: f64, lr_value: f64) -> Self {
        AgentParams {
            policy: TabularPolicy::uniform(num_states, num_actions),
            values: ValueTable::zeros(num_states),
            lr_policy,
            lr_value,
            entropy_bonus: 0.0,
            critic: CriticUpdate::Td0,
            terminal: alloc::vec![false; num_states],
        }
    }

    /// Marks `s` as an absorbing terminal whose value is known to be `value`.
    pub fn set_terminal(&mut self, s: usize, value: f64) {
        self.terminal[s] = true;
        self.values.0[s] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.policy.logits().iter().all(|x| x.is_finite()) && self.values.0.iter().all(|x| x.is_finite())
    }
}

/// Reward of a simulated move `(s, a, s')`.
pub type RewardFn<'a> = &'a dyn Fn(usize, usize, usize) -> f64;

/// Where virtual rollouts start, how long they run and how they are rewarded.
#[derive(Clone, Copy)]
pub struct RolloutSpec<'a> {
    /// Start states are drawn uniformly from here; empty means the model's
    /// start distribution.
    pub start_states: &'a [usize],
    pub horizon: usize,
    /// Scores the predicted move; `None` reads the model's own `R(s, a)`.
    pub reward: Option<RewardFn<'a>>,
}

/// `m` transitions simulated in `model` under `policy`, as back-to-back
/// rollout segments of at most `spec.horizon` steps. A segment also ends on
/// entering a state flagged in `terminal`.
pub fn collect_virtual<R: Rng + ?Sized>(
    model: &TabularMdp,
    policy: &TabularPolicy,
    terminal: &[bool],
    spec: &RolloutSpec<'_>,
    m: usize,
    rng: &mut R,
) -> Vec<VirtualTransition> {
    let mut out = Vec::with_capacity(m);
    let horizon = spec.horizon.max(1);
    let mut state = None;
    let mut steps = 0;
    let mut probs = alloc::vec![0.0; model.num_actions()];
    while out.len() < m {
        let s = match state {
            Some(s) => s,
            None => {
                steps = 0;
                if spec.start_states.is_empty() {
                    model.sample_start(rng)
                } else {
                    spec.start_states[rng.gen_range(0..spec.start_states.len())]
                }
            }
        };
        math::softmax_into(policy.state_logits(s), &mut probs);
        let a = sample_categorical(&probs, rng);
        let s_next = model.sample_next(s, a, rng);
        steps += 1;
        let last = terminal[s_next] || steps >= horizon || out.len() + 1 == m;
        out.push(VirtualTransition {
            state: s,
            action: a,
            reward: match spec.reward {
                Some(f) => f(s, a, s_next),
                None => model.reward(s, a),
            },
            next_state: s_next,
            last,
            provenance: Provenance::Model,
        });
        state = if last { None } else { Some(s_next) };
    }
    out
}

/// Critic update from a batch of simulated transitions.
pub fn update_critic(agent: &mut AgentParams, transitions: &[VirtualTransition], gamma: f64) {
    let lr = agent.lr_value;
    match agent.critic {
        CriticUpdate::Td0 => {
            for tr in transitions {
                if agent.terminal[tr.state] {
                    continue;
                }
                let v = &mut agent.values.0;
                let target = tr.reward + gamma * v[tr.next_state];
                v[tr.state] += lr * (target - v[tr.state]);
            }
        }
        CriticUpdate::MonteCarlo => {
            let targets = segment_returns(&agent.values, transitions, gamma);
            for (tr, g) in transitions.iter().zip(targets) {
                if !agent.terminal[tr.state] {
                    let v = &mut agent.values.0[tr.state];
                    *v += lr * (g - *v);
                }
            }
        }
    }
}

/// Discounted return-to-go within each segment, bootstrapped with `values`
/// at the segment's final next state.
fn segment_returns(values: &ValueTable, transitions: &[VirtualTransition], gamma: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; transitions.len()];
    let mut running = 0.0;
    for (i, tr) in transitions.iter().enumerate().rev() {
        if tr.last {
            running = values[tr.next_state];
        }
        running = tr.reward + gamma * running;
        out[i] = running;
    }
    out
}

/// Refreshes the (possibly stale) critic on `m` fresh transitions from the
/// current model. Returns the transitions used.
pub fn value_refresh<R: Rng + ?Sized>(
    agent: &mut AgentParams,
    model: &TabularMdp,
    spec: &RolloutSpec<'_>,
    m: usize,
    rng: &mut R,
) -> Vec<VirtualTransition> {
    if m == 0 {
        return Vec::new();
    }
    let batch = collect_virtual(model, &agent.policy, &agent.terminal, spec, m, rng);
    update_critic(agent, &batch, model.gamma());
    batch
}

/// Policy-gradient step on given transitions, then the critic update.
///
/// Advantages `r + gamma V(s') - V(s)` use the critic from before the step;
/// the per-transition gradients `A (e_a - pi(s)) + beta dH/dtheta` are summed
/// over the batch.
pub fn a2c_step(agent: &mut AgentParams, transitions: &[VirtualTransition], gamma: f64) {
    let na = agent.policy.num_actions();
    let mut grad = alloc::vec![0.0; agent.policy.logits().len()];
    let probs = agent.policy.prob_table();
    for tr in transitions {
        if agent.terminal[tr.state] {
            continue;
        }
        let adv = tr.reward + gamma * agent.values[tr.next_state] - agent.values[tr.state];
        let p = &probs[tr.state * na..(tr.state + 1) * na];
        let g = &mut grad[tr.state * na..(tr.state + 1) * na];
        for (k, (gk, pk)) in g.iter_mut().zip(p).enumerate() {
            let indicator = if k == tr.action { 1.0 } else { 0.0 };
            *gk += adv * (indicator - pk);
        }
        if agent.entropy_bonus > 0.0 {
            let entropy: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * math::ln(*x)).sum();
            for (gk, pk) in g.iter_mut().zip(p) {
                if *pk > 0.0 {
                    *gk -= agent.entropy_bonus * pk * (math::ln(*pk) + entropy);
                }
            }
        }
    }
    let lr = agent.lr_policy;
    for (l, g) in agent.policy.logits_mut().iter_mut().zip(&grad) {
        *l += lr * g;
    }
    update_critic(agent, transitions, gamma);
}

/// One A2C update on `m` fresh transitions from `model`. Returns them.
pub fn policy_update_a2c<R: Rng + ?Sized>(
    agent: &mut AgentParams,
    model: &TabularMdp,
    spec: &RolloutSpec<'_>,
    m: usize,
    rng: &mut R,
) -> Vec<VirtualTransition> {
    if m == 0 {
        return Vec::new();
    }
    let batch = collect_virtual(model, &agent.policy, &agent.terminal, spec, m, rng);
    a2c_step(agent, &batch, model.gamma());
    batch
}
