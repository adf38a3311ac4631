use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

/// What happened one step after a transition: `(a_{t+1}, s_{t+2})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Followup {
    pub action: usize,
    pub next_state: usize,
}

/// One logged step `(s_t, a_t, s_{t+1})` of trajectory `traj_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub t: usize,
    pub traj_id: usize,
    pub followup: Option<Followup>,
}

impl Transition {
    pub fn new(state: usize, action: usize, next_state: usize, t: usize, traj_id: usize) -> Self {
        Transition {
            state,
            action,
            next_state,
            t,
            traj_id,
            followup: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionBatch {
    pub transitions: Vec<Transition>,
    pub gamma: f64,
}

impl TransitionBatch {
    pub fn new(gamma: f64) -> Self {
        TransitionBatch {
            transitions: Vec::new(),
            gamma,
        }
    }

    pub fn from_transitions(transitions: Vec<Transition>, gamma: f64) -> Self {
        TransitionBatch { transitions, gamma }
    }

    /// Builds a batch from state/action sequences, one per trajectory, with
    /// `t` counted from zero and followups filled in.
    pub fn from_paths(paths: &[(Vec<usize>, Vec<usize>)], gamma: f64) -> Self {
        let mut batch = TransitionBatch::new(gamma);
        for (traj_id, (states, actions)) in paths.iter().enumerate() {
            for (t, &a) in actions.iter().enumerate() {
                batch
                    .transitions
                    .push(Transition::new(states[t], a, states[t + 1], t, traj_id));
            }
        }
        batch.link_followups();
        batch
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    /// Fills `followup` wherever the next logged step continues the same
    /// trajectory.
    pub fn link_followups(&mut self) {
        let n = self.transitions.len();
        for i in 0..n {
            let next = (i + 1 < n).then(|| self.transitions[i + 1]);
            let current = &mut self.transitions[i];
            current.followup = next.and_then(|nx| {
                (nx.traj_id == current.traj_id && nx.t == current.t + 1 && nx.state == current.next_state)
                    .then_some(Followup {
                        action: nx.action,
                        next_state: nx.next_state,
                    })
            });
        }
    }

    pub fn num_triples(&self) -> usize {
        self.transitions.iter().filter(|t| t.followup.is_some()).count()
    }

    /// Index ranges of the trajectories, in order. Each trajectory must be
    /// contiguous with `t` increasing by one and each step starting where
    /// the previous one ended.
    pub fn trajectories(&self) -> Result<Vec<Range<usize>>> {
        let mut ranges: Vec<Range<usize>> = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        let mut start = 0;
        for i in 1..=self.transitions.len() {
            let boundary = i == self.transitions.len()
                || self.transitions[i].traj_id != self.transitions[i - 1].traj_id;
            if !boundary {
                let (prev, cur) = (&self.transitions[i - 1], &self.transitions[i]);
                if cur.t != prev.t + 1 || cur.state != prev.next_state {
                    return Err(Error::NotTrajectoryGrouped);
                }
                continue;
            }
            let id = self.transitions[start].traj_id;
            if seen.contains(&id) {
                return Err(Error::NotTrajectoryGrouped);
            }
            seen.push(id);
            ranges.push(start..i);
            start = i;
        }
        Ok(ranges)
    }

    pub fn check_indices(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for tr in &self.transitions {
            for (what, index, len) in [
                ("state", tr.state, num_states),
                ("action", tr.action, num_actions),
                ("next state", tr.next_state, num_states),
            ] {
                if index >= len {
                    return Err(Error::IndexOutOfRange { what, index, len });
                }
            }
            if let Some(f) = tr.followup {
                if f.action >= num_actions || f.next_state >= num_states {
                    return Err(Error::IndexOutOfRange {
                        what: "followup",
                        index: f.action.max(f.next_state),
                        len: num_states.min(num_actions),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn groups_contiguous_trajectories() {
        let batch = TransitionBatch::from_paths(
            &[(vec![0, 1, 2], vec![0, 1]), (vec![2, 2], vec![1])],
            0.9,
        );
        assert_eq!(batch.trajectories().unwrap(), vec![0..2, 2..3]);
        assert_eq!(batch.num_triples(), 1);
        assert_eq!(
            batch.transitions[0].followup,
            Some(Followup {
                action: 1,
                next_state: 2
            })
        );
    }

    #[test]
    fn interleaved_trajectories_are_rejected() {
        let batch = TransitionBatch::from_transitions(
            vec![
                Transition::new(0, 0, 1, 0, 0),
                Transition::new(3, 0, 1, 0, 1),
                Transition::new(1, 0, 2, 1, 0),
            ],
            0.9,
        );
        assert_eq!(batch.trajectories(), Err(Error::NotTrajectoryGrouped));
        let gap = TransitionBatch::from_transitions(
            vec![Transition::new(0, 0, 1, 0, 0), Transition::new(1, 0, 2, 2, 0)],
            0.9,
        );
        assert_eq!(gap.trajectories(), Err(Error::NotTrajectoryGrouped));
    }
}
