use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{DeterministicPolicy, Environment, Step};
use crate::error::{Error, Result};
use crate::math;
use crate::mdp::TabularMdp;

/// Empty `N x N` grid with walls along every edge, start in the top-left
/// interior cell and an absorbing goal in the bottom-right interior cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridworldSpec {
    pub grid_size: usize,
    /// Episode length cap for the sampler; also sets the goal-bonus decay.
    pub max_steps: usize,
    pub goal_bonus: f64,
    /// Total dense reward collected by walking from start to goal.
    pub distance_reward_scale: f64,
    pub discount: f64,
}

impl GridworldSpec {
    pub fn with_size(grid_size: usize) -> Self {
        GridworldSpec {
            grid_size,
            max_steps: 4 * grid_size * grid_size,
            goal_bonus: 1.0,
            distance_reward_scale: 1.0,
            discount: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(Error::Invalid(format!(
                "grid size {} leaves no interior cell",
                self.grid_size
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Invalid("max_steps must be positive".into()));
        }
        if !(self.goal_bonus >= 0.0 && self.goal_bonus.is_finite()) {
            return Err(Error::Invalid("goal_bonus must be finite and >= 0".into()));
        }
        if !(self.distance_reward_scale >= 0.0 && self.distance_reward_scale.is_finite()) {
            return Err(Error::Invalid("distance_reward_scale must be finite and >= 0".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Invalid(format!("discount {} outside (0, 1)", self.discount)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

/// Geometry of the interior cells, shared by the tabular builder and the sampler.
#[derive(Debug, Clone, Copy)]
struct Layout {
    side: usize,
}

impl Layout {
    fn num_states(self) -> usize {
        self.side * self.side
    }

    fn goal(self) -> usize {
        self.num_states() - 1
    }

    fn coords(self, s: usize) -> (usize, usize) {
        (s / self.side, s % self.side)
    }

    fn state_at(self, row: usize, col: usize) -> usize {
        row * self.side + col
    }

    fn next_state(self, s: usize, action: Action) -> usize {
        if s == self.goal() {
            return s;
        }
        let (row, col) = self.coords(s);
        let last = self.side - 1;
        match action {
            Action::North if row > 0 => self.state_at(row - 1, col),
            Action::South if row < last => self.state_at(row + 1, col),
            Action::East if col < last => self.state_at(row, col + 1),
            Action::West if col > 0 => self.state_at(row, col - 1),
            _ => s,
        }
    }

    fn distance_to_goal(self, s: usize) -> f64 {
        let (r, c) = self.coords(s);
        let (gr, gc) = self.coords(self.goal());
        let dr = gr as f64 - r as f64;
        let dc = gc as f64 - c as f64;
        math::sqrt(dr * dr + dc * dc)
    }

    fn bfs_distances(self, from: usize) -> Vec<usize> {
        let mut dist = alloc::vec![usize::MAX; self.num_states()];
        let mut queue = VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(s) = queue.pop_front() {
            for a in Action::ALL {
                let n = self.next_state(s, a);
                if dist[n] == usize::MAX {
                    dist[n] = dist[s] + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    spec: GridworldSpec,
    layout: Layout,
    /// Dense rewards are measured in units of the start-to-goal distance.
    distance_unit: f64,
    start_to: Vec<usize>,
    mdp: TabularMdp,
}

impl Gridworld {
    pub fn new(spec: GridworldSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout {
            side: spec.grid_size - 2,
        };
        let d0 = layout.distance_to_goal(0);
        let distance_unit = if d0 > 0.0 { d0 } else { 1.0 };
        let start_to = layout.bfs_distances(0);
        let mdp = tabulate(&spec, layout, distance_unit, &start_to)?;
        Ok(Gridworld {
            spec,
            layout,
            distance_unit,
            start_to,
            mdp,
        })
    }

    pub fn spec(&self) -> &GridworldSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn num_states(&self) -> usize {
        self.layout.num_states()
    }

    /// Interior `(row, col)`, zero-based from the top-left interior cell.
    pub fn coords(&self, s: usize) -> (usize, usize) {
        self.layout.coords(s)
    }

    pub fn state_at(&self, row: usize, col: usize) -> usize {
        self.layout.state_at(row, col)
    }

    pub fn start_state(&self) -> usize {
        0
    }

    pub fn goal_state(&self) -> usize {
        self.layout.goal()
    }

    /// Deterministic move; walking into a wall leaves the agent in place and
    /// the goal is absorbing.
    pub fn next_state(&self, s: usize, action: Action) -> usize {
        self.layout.next_state(s, action)
    }

    /// Euclidean distance to the goal, in cells.
    pub fn distance_to_goal(&self, s: usize) -> f64 {
        self.layout.distance_to_goal(s)
    }

    /// Unshifted dense reward for moving `s -> s_next`.
    pub fn distance_improvement(&self, s: usize, s_next: usize) -> f64 {
        improvement(&self.spec, self.layout, self.distance_unit, s, s_next)
    }

    /// Unshifted reward of a move `s -> s_next`, for any pair of states (a
    /// learned model may predict moves the grid cannot make). Includes the
    /// goal bonus at the BFS arrival step; zero once at the goal.
    pub fn transition_reward(&self, s: usize, s_next: usize) -> f64 {
        transition_reward(&self.spec, self.layout, self.distance_unit, &self.start_to, s, s_next)
    }

    /// Constant added to every tabular reward so the table is non-negative.
    /// One move changes the distance by at most one cell.
    pub fn reward_shift(&self) -> f64 {
        self.spec.distance_reward_scale / self.distance_unit
    }

    pub fn r_max(&self) -> f64 {
        2.0 * self.reward_shift() + self.spec.goal_bonus
    }

    /// Goal bonus when the goal is entered on step `t` (1-based).
    pub fn goal_bonus_at(&self, t: usize) -> f64 {
        goal_bonus_at(&self.spec, t)
    }

    /// BFS steps from the start state to every cell.
    pub fn start_distances(&self) -> &[usize] {
        &self.start_to
    }

    /// Breadth-first shortest-path lengths on the grid graph.
    pub fn bfs_distances(&self, from: usize) -> Vec<usize> {
        self.layout.bfs_distances(from)
    }

    pub fn simulator(&self) -> GridworldSim<'_> {
        GridworldSim {
            world: self,
            state: self.start_state(),
            t: 0,
        }
    }

    /// Walk South to the goal row, then East.
    pub fn shortest_path_policy(&self) -> DeterministicPolicy {
        let (goal_row, _) = self.coords(self.goal_state());
        DeterministicPolicy(
            (0..self.num_states())
                .map(|s| {
                    let (row, _) = self.coords(s);
                    if row < goal_row {
                        Action::South as usize
                    } else {
                        Action::East as usize
                    }
                })
                .collect(),
        )
    }
}

fn improvement(spec: &GridworldSpec, layout: Layout, unit: f64, s: usize, s_next: usize) -> f64 {
    spec.distance_reward_scale * (layout.distance_to_goal(s) - layout.distance_to_goal(s_next)) / unit
}

fn goal_bonus_at(spec: &GridworldSpec, t: usize) -> f64 {
    let t = t.min(spec.max_steps) as f64;
    spec.goal_bonus * (1.0 - 0.9 * t / spec.max_steps as f64)
}

/// Tabular rewards cannot see the arrival time, so the goal bonus uses the
/// BFS arrival step from the start instead.
fn transition_reward(spec: &GridworldSpec, layout: Layout, unit: f64, start_to: &[usize], s: usize, s_next: usize) -> f64 {
    let goal = layout.goal();
    if s == goal {
        return 0.0;
    }
    let mut r = improvement(spec, layout, unit, s, s_next);
    if s_next == goal {
        r += goal_bonus_at(spec, start_to[s] + 1);
    }
    r
}

fn tabulate(spec: &GridworldSpec, layout: Layout, unit: f64, start_to: &[usize]) -> Result<TabularMdp> {
    let n = layout.num_states();
    let shift = spec.distance_reward_scale / unit;
    let r_max = 2.0 * shift + spec.goal_bonus;
    let mut transition = alloc::vec![0.0; n * 4 * n];
    let mut reward = alloc::vec![0.0; n * 4];
    for s in 0..n {
        for action in Action::ALL {
            let a = action as usize;
            let next = layout.next_state(s, action);
            transition[(s * 4 + a) * n + next] = 1.0;
            let r = shift + transition_reward(spec, layout, unit, start_to, s, next);
            // round-off can push shift - improvement a hair outside [0, r_max]
            reward[s * 4 + a] = r.clamp(0.0, r_max);
        }
    }
    let mut start = alloc::vec![0.0; n];
    start[0] = 1.0;
    TabularMdp::new(n, 4, transition, reward, start, spec.discount, r_max)
}

/// The exact gridworld MDP of a spec.
pub fn build_gridworld(spec: GridworldSpec) -> Result<TabularMdp> {
    Ok(Gridworld::new(spec)?.mdp)
}

/// Step-by-step gridworld with the true arrival-time goal bonus. Rewards are
/// unshifted, so a full episode that reaches the goal returns
/// `distance_reward_scale + bonus`.
#[derive(Debug, Clone)]
pub struct GridworldSim<'a> {
    world: &'a Gridworld,
    state: usize,
    t: usize,
}

impl GridworldSim<'_> {
    pub fn state(&self) -> usize {
        self.state
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }
}

impl Environment for GridworldSim<'_> {
    fn num_states(&self) -> usize {
        self.world.num_states()
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn gamma(&self) -> f64 {
        self.world.spec.discount
    }

    fn reset<R: Rng + ?Sized>(&mut self, _rng: &mut R) -> usize {
        self.state = self.world.start_state();
        self.t = 0;
        self.state
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Step {
        let goal = self.world.goal_state();
        if self.state == goal {
            return Step {
                next_state: goal,
                reward: 0.0,
                done: true,
            };
        }
        self.t += 1;
        let next = self.world.next_state(self.state, Action::from_index(action));
        let mut reward = self.world.distance_improvement(self.state, next);
        if next == goal {
            reward += self.world.goal_bonus_at(self.t);
        }
        self.state = next;
        Step {
            next_state: next,
            reward,
            done: next == goal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::episode_rollout;
    use crate::random::rng_from_seed;

    fn world(n: usize) -> Gridworld {
        Gridworld::new(GridworldSpec::with_size(n)).unwrap()
    }

    #[test]
    fn interior_has_n_minus_two_squared_cells() {
        for n in [3, 4, 8, 16] {
            assert_eq!(world(n).num_states(), (n - 2) * (n - 2));
        }
        assert!(Gridworld::new(GridworldSpec::with_size(2)).is_err());
    }

    #[test]
    fn walls_are_no_ops_with_shift_only_reward() {
        let w = world(8);
        let s = w.start_state();
        assert_eq!(w.next_state(s, Action::North), s);
        assert_eq!(w.next_state(s, Action::West), s);
        let r = w.mdp().reward(s, Action::North as usize);
        assert!((r - w.reward_shift()).abs() < 1e-15);
    }

    #[test]
    fn goal_is_absorbing() {
        let w = world(8);
        let g = w.goal_state();
        for a in Action::ALL {
            assert_eq!(w.next_state(g, a), g);
            assert_eq!(w.mdp().transition_row(g, a as usize)[g], 1.0);
        }
    }

    /// Plain BFS over (row, col) with explicit wall checks, independent of
    /// `Gridworld::bfs_distances`.
    fn grid_bfs(n: usize) -> usize {
        let side = n - 2;
        let mut dist = alloc::vec![usize::MAX; side * side];
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        dist[0] = 0;
        while let Some((r, c)) = queue.pop_front() {
            let here = dist[r * side + c];
            let moves = [(r.wrapping_sub(1), c), (r + 1, c), (r, c + 1), (r, c.wrapping_sub(1))];
            for (nr, nc) in moves {
                if nr < side && nc < side && dist[nr * side + nc] == usize::MAX {
                    dist[nr * side + nc] = here + 1;
                    queue.push_back((nr, nc));
                }
            }
        }
        dist[side * side - 1]
    }

    #[test]
    fn shortest_path_length_matches_bfs() {
        assert_eq!(grid_bfs(8), 10);
        assert_eq!(grid_bfs(16), 26);
        for n in [8, 16] {
            let w = world(n);
            assert_eq!(w.bfs_distances(w.start_state())[w.goal_state()], grid_bfs(n));
            let mut rng = rng_from_seed(0);
            let traj = episode_rollout(&mut w.simulator(), &w.shortest_path_policy(), 1000, &mut rng);
            assert!(traj.reached_terminal);
            assert_eq!(traj.len(), grid_bfs(n));
        }
    }

    #[test]
    fn solving_episode_returns_more_than_one() {
        let w = world(8);
        let mut rng = rng_from_seed(0);
        let traj = episode_rollout(&mut w.simulator(), &w.shortest_path_policy(), 256, &mut rng);
        // dense part telescopes to the scale, bonus decays with the 10 steps taken
        let expected = 1.0 + (1.0 - 0.9 * 10.0 / 256.0);
        assert!((traj.undiscounted_return - expected).abs() < 1e-12);
        assert!(traj.undiscounted_return > 1.0);
    }

    #[test]
    fn north_only_never_solves() {
        let w = world(8);
        let mut rng = rng_from_seed(0);
        let north = DeterministicPolicy(alloc::vec![Action::North as usize; w.num_states()]);
        let traj = episode_rollout(&mut w.simulator(), &north, 256, &mut rng);
        assert!(!traj.reached_terminal);
        assert_eq!(traj.len(), 256);
        assert!(traj.undiscounted_return < 1.0);
    }

    #[test]
    fn rewards_within_bounds_and_goal_reachable() {
        for n in [3, 5, 8, 16] {
            let w = world(n);
            assert!(w.mdp().rewards().iter().all(|r| *r >= 0.0 && *r <= w.r_max()));
            assert!(w.bfs_distances(w.start_state())[w.goal_state()] < usize::MAX);
        }
    }

    #[test]
    fn transition_reward_reproduces_the_table() {
        let w = world(6);
        for s in 0..w.num_states() {
            for action in Action::ALL {
                let next = w.next_state(s, action);
                let r = w.transition_reward(s, next) + w.reward_shift();
                assert!((r - w.mdp().reward(s, action as usize)).abs() < 1e-12);
            }
        }
        // an impossible jump straight from the start to the goal
        let r = w.transition_reward(w.start_state(), w.goal_state());
        assert!((r - 1.0 - w.goal_bonus_at(1)).abs() < 1e-12);
    }

    #[test]
    fn sampler_agrees_with_tabular_transitions() {
        // Deterministic dynamics: every sampled step must land on the unique
        // support point of the tabular row.
        let w = world(8);
        let mut rng = rng_from_seed(4);
        let mut sim = w.simulator();
        let mut s = sim.reset(&mut rng);
        for i in 0..100_000 {
            let a = rng.gen_range(0..4);
            let step = sim.step(a, &mut rng);
            assert_eq!(w.mdp().transition_row(s, a)[step.next_state], 1.0);
            s = step.next_state;
            if step.done || i % 300 == 0 {
                s = sim.reset(&mut rng);
            }
        }
    }
}
