//! Sampling environments and episode rollouts.
//!
//! [`Gridworld`] is the empty walled grid used by the experiments; it can be
//! exported as an exact [`TabularMdp`] or driven step by step through
//! [`GridworldSim`]. [`TabularSim`] samples any tabular MDP, which is how
//! learned models are rolled out.

mod gridworld;

pub use gridworld::{build_gridworld, Action, Gridworld, GridworldSim, GridworldSpec};

use alloc::vec::Vec;

use rand::Rng;

use crate::mdp::{TabularMdp, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    pub reward: f64,
    /// The episode reached a terminal state.
    pub done: bool,
}

pub trait Environment {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize;
    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Step;
}

/// Anything that picks an action in a state.
pub trait ActionSource {
    fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize;
}

impl ActionSource for TabularPolicy {
    fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        self.sample(state, rng)
    }
}

/// `actions[s]` in every state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy(pub Vec<usize>);

impl ActionSource for DeterministicPolicy {
    fn act<R: Rng + ?Sized>(&self, state: usize, _rng: &mut R) -> usize {
        self.0[state]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `s_0 .. s_T`, one longer than `actions`.
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub reached_terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// One episode of at most `max_steps` steps, stopping early at a terminal state.
pub fn episode_rollout<E, P, R>(env: &mut E, policy: &P, max_steps: usize, rng: &mut R) -> Trajectory
where
    E: Environment,
    P: ActionSource,
    R: Rng + ?Sized,
{
    let gamma = env.gamma();
    let mut state = env.reset(rng);
    let mut traj = Trajectory {
        states: alloc::vec![state],
        ..Trajectory::default()
    };
    let mut discount = 1.0;
    for _ in 0..max_steps {
        let action = policy.act(state, rng);
        let step = env.step(action, rng);
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        traj.states.push(step.next_state);
        traj.undiscounted_return += step.reward;
        traj.discounted_return += discount * step.reward;
        discount *= gamma;
        state = step.next_state;
        if step.done {
            traj.reached_terminal = true;
            break;
        }
    }
    traj
}

/// Samples a [`TabularMdp`] directly; there are no terminal states, only the
/// caller's step budget.
#[derive(Debug, Clone)]
pub struct TabularSim<'a> {
    mdp: &'a TabularMdp,
    state: usize,
}

impl<'a> TabularSim<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Self {
        TabularSim { mdp, state: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn set_state(&mut self, s: usize) {
        self.state = s;
    }
}

impl Environment for TabularSim<'_> {
    fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        self.state = self.mdp.sample_start(rng);
        self.state
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Step {
        let reward = self.mdp.reward(self.state, action);
        self.state = self.mdp.sample_next(self.state, action, rng);
        Step {
            next_state: self.state,
            reward,
            done: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::expected_return;
    use crate::random::rng_from_seed;

    #[test]
    fn tabular_sim_matches_exact_return_on_random_policy_gridworld() {
        let world = Gridworld::new(GridworldSpec::with_size(8)).unwrap();
        let mdp = world.mdp();
        let policy = TabularPolicy::uniform(mdp.num_states(), 4);
        let exact = expected_return(mdp, &policy).unwrap();
        let mut rng = rng_from_seed(99);
        let mut sim = TabularSim::new(mdp);
        // gamma^3000 < 1e-13 at gamma = 0.99
        let returns: Vec<f64> = (0..1000)
            .map(|_| episode_rollout(&mut sim, &policy, 3000, &mut rng).discounted_return)
            .collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        let se = crate::math::sqrt(var / n);
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }
}
