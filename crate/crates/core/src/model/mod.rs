//! Learnable tabular dynamics and the model-learning objectives.
//!
//! The model is a per-(s, a) softmax over next states. Every objective
//! evaluates the inner expectation `E_{s' ~ P_phi(s, a)}[V(s')]` exactly by
//! summing over all states, and treats `V` as a constant of the logits.

mod batch;
mod objective;

pub use batch::{Followup, Transition, TransitionBatch};
pub use objective::{
    direct_upper_bound_l1, grad, grad_with_moves, kink_distance, kink_distance_with_moves, loss,
    loss_ma_direct, loss_ma_ub_l1, loss_mle, loss_vaml, loss_vps, loss_with_moves, MoveRewards,
    Norm,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::TabularMdp;

/// Softmax transition model `P_phi(s'|s, a) = softmax(phi[s][a])[s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl ModelParams {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        ModelParams {
            num_states,
            num_actions,
            logits: alloc::vec![0.0; num_states * num_actions * num_states],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, scale: f64, rng: &mut R) -> Self {
        let logits = (0..num_states * num_actions * num_states)
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
            .collect();
        ModelParams {
            num_states,
            num_actions,
            logits,
        }
    }

    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_actions * num_states {
            return Err(Error::Invalid(format!(
                "model has {} logits, expected {}",
                logits.len(),
                num_states * num_actions * num_states
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Invalid("model logits must be finite".into()));
        }
        Ok(ModelParams {
            num_states,
            num_actions,
            logits,
        })
    }

    /// Logits `ln P` of a strictly positive transition tensor; entries equal
    /// to zero are mapped to `zero_logit`.
    pub fn from_probabilities(mdp: &TabularMdp, zero_logit: f64) -> Self {
        let logits = mdp
            .transitions()
            .iter()
            .map(|p| if *p > 0.0 { math::ln(*p) } else { zero_logit })
            .collect();
        ModelParams {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            logits,
        }
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

    #[inline]
    pub(crate) fn row_range(&self, s: usize, a: usize) -> core::ops::Range<usize> {
        let base = (s * self.num_actions + a) * self.num_states;
        base..base + self.num_states
    }

    pub fn row_logits(&self, s: usize, a: usize) -> &[f64] {
        &self.logits[self.row_range(s, a)]
    }

    pub fn probs(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.num_states];
        math::softmax_into(self.row_logits(s, a), &mut out);
        out
    }

    /// The full predicted transition tensor.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.logits.len()];
        for (l, o) in self
            .logits
            .chunks(self.num_states)
            .zip(out.chunks_mut(self.num_states))
        {
            math::softmax_into(l, o);
        }
        out
    }

    pub fn max_abs_logit(&self) -> f64 {
        math::max_abs(&self.logits)
    }

    /// `logits -= learning_rate * gradient`.
    pub fn sgd_step(&mut self, gradient: &[f64], learning_rate: f64) {
        assert_eq!(gradient.len(), self.logits.len(), "gradient shape");
        if learning_rate == 0.0 {
            return;
        }
        for (l, g) in self.logits.iter_mut().zip(gradient) {
            *l -= learning_rate * g;
        }
    }

    /// Approximate MDP with the learned dynamics and everything else
    /// (rewards, start distribution, discount) copied from `reward_source`.
    pub fn to_mdp(&self, reward_source: &TabularMdp) -> Result<TabularMdp> {
        if reward_source.num_states() != self.num_states || reward_source.num_actions() != self.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "model is {}x{}, reward source is {}x{}",
                self.num_states,
                self.num_actions,
                reward_source.num_states(),
                reward_source.num_actions()
            )));
        }
        reward_source.with_transitions(self.prob_table())
    }
}

/// Functional form of [`ModelParams::sgd_step`].
pub fn sgd_step(mut params: ModelParams, gradient: &[f64], learning_rate: f64) -> ModelParams {
    params.sgd_step(gradient, learning_rate);
    params
}

/// The main model-learning objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Mle,
    MaDirectL1,
    MaDirectL2,
    MaUbL1,
    VamlL2,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Mle,
        Objective::MaDirectL1,
        Objective::MaDirectL2,
        Objective::MaUbL1,
        Objective::VamlL2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Mle => "mle",
            Objective::MaDirectL1 => "ma-direct-l1",
            Objective::MaDirectL2 => "ma-direct-l2",
            Objective::MaUbL1 => "ma-ub-l1",
            Objective::VamlL2 => "vaml",
        }
    }

    /// Whether the objective reads the value function.
    pub fn is_value_aware(self) -> bool {
        self != Objective::Mle
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Objective::Mle),
            "ma-direct-l1" => Ok(Objective::MaDirectL1),
            "ma-direct-l2" => Ok(Objective::MaDirectL2),
            "ma-ub-l1" => Ok(Objective::MaUbL1),
            // the per-step L2 upper bound is the VAML objective
            "vaml" | "ma-ub-l2" => Ok(Objective::VamlL2),
            other => Err(Error::Invalid(format!(
                "unknown objective {other:?}; expected mle, ma-direct-l1, ma-direct-l2, ma-ub-l1 or vaml"
            ))),
        }
    }
}

/// Composite objective `alpha * L_main + vps_lambda * L_VPS`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveKind {
    pub variant: Objective,
    pub alpha: f64,
    pub vps_lambda: f64,
}

impl ObjectiveKind {
    pub fn new(variant: Objective) -> Self {
        ObjectiveKind {
            variant,
            alpha: 1.0,
            vps_lambda: 0.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_vps(mut self, vps_lambda: f64) -> Self {
        self.vps_lambda = vps_lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.vps_lambda >= 0.0 && self.vps_lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "vps_lambda must be >= 0, got {}",
                self.vps_lambda
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.vps_lambda > 0.0 {
            format!("{}+vps", self.variant)
        } else {
            format!("{}", self.variant)
        }
    }
}
