//! Loss values and analytic logit gradients.
//!
//! All value-aware objectives are functions of the per-step gaps
//! `delta_i = V(s'_i) - E_{s'' ~ P_phi(s_i, a_i)}[V(s'')]`. With `V` held
//! fixed, the softmax identity
//! `d E_{P(s,a)}[V] / d phi[s][a][k] = P(k|s,a) (V(k) - E_{P(s,a)}[V])`
//! turns every gradient into per-row coefficients times that vector.
//!
//! When rewards depend on the landing state, [`MoveRewards`] folds them into
//! the target: `V(s')` becomes `V(s') + r(s, s') / gamma`, so that
//! `gamma * delta` is the error of the one-step backup `r + gamma V`.

use alloc::vec::Vec;

use super::{ModelParams, Objective, ObjectiveKind, TransitionBatch};
use crate::error::{Error, Result};
use crate::math;
use crate::mdp::ValueTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

/// Rewards `r(s, s')` of moving between states, flattened `[s][s']`.
#[derive(Debug, Clone, Copy)]
pub struct MoveRewards<'a> {
    pub rewards: &'a [f64],
    pub gamma: f64,
}

/// Predicted rows and their expectations for every (s, a).
struct Expectations<'a> {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    /// `E_{P(s,a)}[target_s]`
    expected: Vec<f64>,
    /// `E_{P(s,a)}[V]`; equal to `expected` without move rewards
    expected_v: Vec<f64>,
    v: &'a [f64],
    moves: Option<(&'a [f64], f64)>,
}

impl<'a> Expectations<'a> {
    fn new(params: &ModelParams, v: &'a ValueTable, moves: Option<&MoveRewards<'a>>) -> Self {
        let ns = params.num_states();
        assert_eq!(v.len(), ns, "value table does not match the model");
        let probs = params.prob_table();
        let expected_v: Vec<f64> = probs.chunks(ns).map(|row| math::dot(row, v.as_slice())).collect();
        let moves = moves.map(|m| {
            assert_eq!(m.rewards.len(), ns * ns, "move rewards do not match the model");
            (m.rewards, 1.0 / m.gamma)
        });
        let expected = match moves {
            None => expected_v.clone(),
            Some((r, inv_gamma)) => probs
                .chunks(ns)
                .zip(&expected_v)
                .enumerate()
                .map(|(row_index, (row, ev))| {
                    let s = row_index / params.num_actions();
                    ev + inv_gamma * math::dot(row, &r[s * ns..(s + 1) * ns])
                })
                .collect(),
        };
        Expectations {
            num_states: ns,
            num_actions: params.num_actions(),
            probs,
            expected,
            expected_v,
            v: v.as_slice(),
            moves,
        }
    }

    #[inline]
    fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.probs[base..base + self.num_states]
    }

    #[inline]
    fn e(&self, s: usize, a: usize) -> f64 {
        self.expected[s * self.num_actions + a]
    }

    #[inline]
    fn e_v(&self, s: usize, a: usize) -> f64 {
        self.expected_v[s * self.num_actions + a]
    }

    #[inline]
    fn target(&self, s: usize, k: usize) -> f64 {
        match self.moves {
            None => self.v[k],
            Some((r, inv_gamma)) => self.v[k] + inv_gamma * r[s * self.num_states + k],
        }
    }

    #[inline]
    fn gap(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.target(s, s_next) - self.e(s, a)
    }

    /// VPS residual `(E_{s2_hat} V - E_{s1_hat} V) - (V(s_{t+2}) - V(s_{t+1}))`
    /// and the two-step expectation. Always on plain values.
    fn vps_residual(&self, s: usize, a: usize, s1: usize, a1: usize, s2: usize) -> (f64, f64) {
        let p1 = self.row(s, a);
        let e2: f64 = p1
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.e_v(k, a1))
            .sum();
        let u = (e2 - self.e_v(s, a)) - (self.v[s2] - self.v[s1]);
        (u, e2)
    }
}

/// `gamma^t * delta` for every step, in batch order, plus the trajectory count.
fn discounted_gaps(ex: &Expectations<'_>, batch: &TransitionBatch) -> Result<(Vec<f64>, usize)> {
    let trajectories = batch.trajectories()?;
    let terms = batch
        .transitions
        .iter()
        .map(|tr| math::pow(batch.gamma, tr.t as f64) * ex.gap(tr.state, tr.action, tr.next_state))
        .collect();
    Ok((terms, trajectories.len()))
}

fn direct_sum(ex: &Expectations<'_>, batch: &TransitionBatch) -> Result<f64> {
    let (terms, m) = discounted_gaps(ex, batch)?;
    if m == 0 {
        return Ok(0.0);
    }
    Ok(terms.iter().sum::<f64>() / m as f64)
}

fn direct(ex: &Expectations<'_>, batch: &TransitionBatch, norm: Norm) -> Result<f64> {
    let total = direct_sum(ex, batch)?;
    Ok(match norm {
        Norm::L1 => total.abs(),
        Norm::L2 => total * total,
    })
}

/// Trajectory-level objective: `|(1/m) sum_traj sum_t gamma^t delta_t|` for
/// [`Norm::L1`], its square for [`Norm::L2`].
pub fn loss_ma_direct(params: &ModelParams, batch: &TransitionBatch, v: &ValueTable, norm: Norm) -> Result<f64> {
    direct(&Expectations::new(params, v, None), batch, norm)
}

/// `(1/m) sum_traj sum_t gamma^t |delta_t|`: the triangle-inequality bound on
/// [`loss_ma_direct`] with L1, summed in the same order.
pub fn direct_upper_bound_l1(params: &ModelParams, batch: &TransitionBatch, v: &ValueTable) -> Result<f64> {
    let ex = Expectations::new(params, v, None);
    let (terms, m) = discounted_gaps(&ex, batch)?;
    if m == 0 {
        return Ok(0.0);
    }
    Ok(terms.iter().map(|x| x.abs()).sum::<f64>() / m as f64)
}

/// Per-transition upper bound `(1/n) sum |delta_i|`.
pub fn loss_ma_ub_l1(params: &ModelParams, batch: &TransitionBatch, v: &ValueTable) -> f64 {
    mean_of(&Expectations::new(params, v, None), batch, f64::abs)
}

/// Squared value-aware objective `(1/n) sum delta_i^2`.
pub fn loss_vaml(params: &ModelParams, batch: &TransitionBatch, v: &ValueTable) -> f64 {
    mean_of(&Expectations::new(params, v, None), batch, |d| d * d)
}

fn mean_of(ex: &Expectations<'_>, batch: &TransitionBatch, f: impl Fn(f64) -> f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .transitions
        .iter()
        .map(|tr| f(ex.gap(tr.state, tr.action, tr.next_state)))
        .sum();
    total / batch.len() as f64
}

/// Mean negative log-likelihood of the observed next states.
pub fn loss_mle(params: &ModelParams, batch: &TransitionBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .transitions
        .iter()
        .map(|tr| -math::log_softmax_at(params.row_logits(tr.state, tr.action), tr.next_state))
        .sum();
    total / batch.len() as f64
}

/// Value predictive smoothness, `(1/n) sum |u_i|` over the batch's two-step
/// triples. The second predicted state follows the logged `a_{t+1}` from
/// each possible first predicted state.
pub fn loss_vps(params: &ModelParams, batch: &TransitionBatch, v: &ValueTable) -> Result<f64> {
    vps(&Expectations::new(params, v, None), batch)
}

fn vps(ex: &Expectations<'_>, batch: &TransitionBatch) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for tr in &batch.transitions {
        if let Some(f) = tr.followup {
            total += ex
                .vps_residual(tr.state, tr.action, tr.next_state, f.action, f.next_state)
                .0
                .abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::MissingTriples);
    }
    Ok(total / count as f64)
}

fn composite(params: &ModelParams, ex: &Expectations<'_>, kind: &ObjectiveKind, batch: &TransitionBatch) -> Result<f64> {
    let main = match kind.variant {
        Objective::Mle => loss_mle(params, batch),
        Objective::MaDirectL1 => direct(ex, batch, Norm::L1)?,
        Objective::MaDirectL2 => direct(ex, batch, Norm::L2)?,
        Objective::MaUbL1 => mean_of(ex, batch, f64::abs),
        Objective::VamlL2 => mean_of(ex, batch, |d| d * d),
    };
    let mut total = kind.alpha * main;
    if kind.vps_lambda > 0.0 {
        total += kind.vps_lambda * vps(ex, batch)?;
    }
    Ok(total)
}

/// Composite loss `alpha * L_main + vps_lambda * L_VPS`.
pub fn loss(params: &ModelParams, kind: &ObjectiveKind, batch: &TransitionBatch, v: &ValueTable) -> Result<f64> {
    loss_with_moves(params, kind, batch, v, None)
}

/// [`loss`] with move rewards folded into the value-aware targets (VPS stays
/// on plain values).
pub fn loss_with_moves(
    params: &ModelParams,
    kind: &ObjectiveKind,
    batch: &TransitionBatch,
    v: &ValueTable,
    moves: Option<&MoveRewards<'_>>,
) -> Result<f64> {
    composite(params, &Expectations::new(params, v, moves), kind, batch)
}

/// Analytic gradient of [`loss`] with respect to the model logits, using
/// `sign(0) = 0` at every absolute-value kink.
pub fn grad(params: &ModelParams, kind: &ObjectiveKind, batch: &TransitionBatch, v: &ValueTable) -> Result<Vec<f64>> {
    grad_with_moves(params, kind, batch, v, None)
}

/// Gradient of [`loss_with_moves`].
pub fn grad_with_moves(
    params: &ModelParams,
    kind: &ObjectiveKind,
    batch: &TransitionBatch,
    v: &ValueTable,
    moves: Option<&MoveRewards<'_>>,
) -> Result<Vec<f64>> {
    let ex = Expectations::new(params, v, moves);
    let (ns, na) = (params.num_states(), params.num_actions());
    let mut out = alloc::vec![0.0; ns * na * ns];
    // coefficients on d E_{P(s,a)}[target_s] and d E_{P(s,a)}[V] per row
    let mut coef = alloc::vec![0.0; ns * na];
    let mut coef_v = alloc::vec![0.0; ns * na];
    let n = batch.len() as f64;
    let alpha = kind.alpha;

    match kind.variant {
        Objective::Mle => {
            if !batch.is_empty() {
                let w = alpha / n;
                for tr in &batch.transitions {
                    let range = params.row_range(tr.state, tr.action);
                    let row = ex.row(tr.state, tr.action);
                    for (o, p) in out[range.clone()].iter_mut().zip(row) {
                        *o += w * p;
                    }
                    out[range.start + tr.next_state] -= w;
                }
            }
        }
        Objective::MaUbL1 | Objective::VamlL2 => {
            if !batch.is_empty() {
                for tr in &batch.transitions {
                    let d = ex.gap(tr.state, tr.action, tr.next_state);
                    let outer = match kind.variant {
                        Objective::MaUbL1 => math::sign(d),
                        _ => 2.0 * d,
                    };
                    coef[tr.state * na + tr.action] -= alpha * outer / n;
                }
            }
        }
        Objective::MaDirectL1 | Objective::MaDirectL2 => {
            let (terms, m) = discounted_gaps(&ex, batch)?;
            if m > 0 {
                let total = terms.iter().sum::<f64>() / m as f64;
                let outer = match kind.variant {
                    Objective::MaDirectL1 => math::sign(total),
                    _ => 2.0 * total,
                };
                if outer != 0.0 {
                    for tr in &batch.transitions {
                        let w = math::pow(batch.gamma, tr.t as f64);
                        coef[tr.state * na + tr.action] -= alpha * outer * w / m as f64;
                    }
                }
            }
        }
    }

    if kind.vps_lambda > 0.0 {
        let triples = batch.num_triples();
        if triples == 0 {
            return Err(Error::MissingTriples);
        }
        let scale = kind.vps_lambda / triples as f64;
        for tr in &batch.transitions {
            let Some(f) = tr.followup else { continue };
            let (u, e2) = ex.vps_residual(tr.state, tr.action, tr.next_state, f.action, f.next_state);
            let c = scale * math::sign(u);
            if c == 0.0 {
                continue;
            }
            // -E_{s1_hat}[V]
            coef_v[tr.state * na + tr.action] -= c;
            // E_{s2_hat}[V] = sum_k p1(k) e(k, a1): through p1 ...
            let range = params.row_range(tr.state, tr.action);
            let p1 = ex.row(tr.state, tr.action);
            for (k, (o, p)) in out[range].iter_mut().zip(p1).enumerate() {
                *o += c * p * (ex.e_v(k, f.action) - e2);
            }
            // ... and through each second-step row e(k, a1)
            for (k, p) in p1.iter().enumerate() {
                coef_v[k * na + f.action] += c * p;
            }
        }
    }

    for s in 0..ns {
        for a in 0..na {
            let (c, cv) = (coef[s * na + a], coef_v[s * na + a]);
            if c == 0.0 && cv == 0.0 {
                continue;
            }
            let (e, ev) = (ex.e(s, a), ex.e_v(s, a));
            let range = params.row_range(s, a);
            for (k, (o, p)) in out[range].iter_mut().zip(ex.row(s, a)).enumerate() {
                *o += p * (c * (ex.target(s, k) - e) + cv * (ex.v[k] - ev));
            }
        }
    }
    Ok(out)
}

/// Smallest magnitude among the arguments of the absolute values in the
/// objective (`f64::INFINITY` for smooth objectives). Finite differences are
/// only meaningful when this is well away from zero.
pub fn kink_distance(params: &ModelParams, kind: &ObjectiveKind, batch: &TransitionBatch, v: &ValueTable) -> Result<f64> {
    kink_distance_with_moves(params, kind, batch, v, None)
}

pub fn kink_distance_with_moves(
    params: &ModelParams,
    kind: &ObjectiveKind,
    batch: &TransitionBatch,
    v: &ValueTable,
    moves: Option<&MoveRewards<'_>>,
) -> Result<f64> {
    let ex = Expectations::new(params, v, moves);
    let mut nearest = f64::INFINITY;
    match kind.variant {
        Objective::MaUbL1 => {
            for tr in &batch.transitions {
                nearest = nearest.min(ex.gap(tr.state, tr.action, tr.next_state).abs());
            }
        }
        Objective::MaDirectL1 => nearest = nearest.min(direct_sum(&ex, batch)?.abs()),
        _ => {}
    }
    if kind.vps_lambda > 0.0 {
        for tr in &batch.transitions {
            if let Some(f) = tr.followup {
                let (u, _) = ex.vps_residual(tr.state, tr.action, tr.next_state, f.action, f.next_state);
                nearest = nearest.min(u.abs());
            }
        }
    }
    Ok(nearest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Objective, ObjectiveKind, Transition};
    use crate::random::{random_values, rng_from_seed};
    use alloc::vec;
    use rand::Rng;

    /// Three states, one action. Model rows (as probabilities):
    /// from 0: [0.5, 0.25, 0.25], from 1: [0, 0, 1] (approx.), from 2: [1/3; 3].
    fn toy() -> (ModelParams, ValueTable) {
        let ln = math::ln;
        let logits = vec![
            ln(0.5), ln(0.25), ln(0.25),
            -800.0, -800.0, 0.0,
            0.0, 0.0, 0.0,
        ];
        (ModelParams::from_logits(3, 1, logits).unwrap(), ValueTable(vec![0.0, 4.0, 8.0]))
    }

    #[test]
    fn direct_loss_hand_computed() {
        // E from 0 = 0.5*0 + 0.25*4 + 0.25*8 = 3; from 1 = 8; from 2 = 4.
        // trajectory 0 -> 1 -> 2 -> 0 with gamma = 0.5:
        //   deltas 4-3 = 1, 8-8 = 0, 0-4 = -4; weighted 1 + 0 + 0.25*(-4) = 0
        // trajectory 0 -> 2: delta 8-3 = 5
        let (params, v) = toy();
        let batch = TransitionBatch::from_paths(&[(vec![0, 1, 2, 0], vec![0, 0, 0]), (vec![0, 2], vec![0])], 0.5);
        let l1 = loss_ma_direct(&params, &batch, &v, Norm::L1).unwrap();
        assert!((l1 - 2.5).abs() < 1e-12, "{l1}");
        let l2 = loss_ma_direct(&params, &batch, &v, Norm::L2).unwrap();
        assert!((l2 - 6.25).abs() < 1e-12);
        // per-step: (|1| + |0| + |-4| + |5|) / 4
        assert!((loss_ma_ub_l1(&params, &batch, &v) - 2.5).abs() < 1e-12);
        assert!((loss_vaml(&params, &batch, &v) - (1.0 + 0.0 + 16.0 + 25.0) / 4.0).abs() < 1e-12);
        assert!((direct_upper_bound_l1(&params, &batch, &v).unwrap() - (1.0 + 0.0 + 1.0 + 5.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn vps_hand_computed() {
        // triple (0, a, 1, a, 2): s1_hat ~ [0.5, 0.25, 0.25], E1 = 3;
        // E2 = 0.5*E(0) + 0.25*E(1) + 0.25*E(2) = 1.5 + 2 + 1 = 4.5;
        // u = (4.5 - 3) - (8 - 4) = -2.5
        let (params, v) = toy();
        let batch = TransitionBatch::from_paths(&[(vec![0, 1, 2], vec![0, 0])], 0.9);
        let vps = loss_vps(&params, &batch, &v).unwrap();
        assert!((vps - 2.5).abs() < 1e-12);
        let no_triples = TransitionBatch::from_paths(&[(vec![0, 1], vec![0])], 0.9);
        assert_eq!(loss_vps(&params, &no_triples, &v), Err(Error::MissingTriples));
    }

    #[test]
    fn perfect_deterministic_model_zeroes_value_losses() {
        // 3-state ring 0 -> 1 -> 2 -> 0 learned almost exactly
        let mut logits = vec![-60.0; 9];
        logits[1] = 0.0;
        logits[3 + 2] = 0.0;
        logits[6] = 0.0;
        let params = ModelParams::from_logits(3, 1, logits).unwrap();
        let batch = TransitionBatch::from_paths(&[(vec![0, 1, 2, 0, 1], vec![0; 4])], 0.9);
        let mut rng = rng_from_seed(5);
        let v = random_values(&mut rng, 3, 5.0);
        for variant in Objective::ALL {
            let kind = ObjectiveKind::new(variant).with_vps(0.5);
            let value = loss(&params, &kind, &batch, &v).unwrap();
            assert!(value.abs() < 1e-20 * 1e6, "{variant}: {value}");
            assert!(value >= 0.0);
        }
    }

    #[test]
    fn constant_values_zero_value_aware_losses() {
        let mut rng = rng_from_seed(9);
        let params = ModelParams::random(4, 2, 2.0, &mut rng);
        let v = ValueTable(vec![3.25; 4]);
        let batch = TransitionBatch::from_paths(&[(vec![0, 3, 1, 2, 2], vec![1, 0, 1, 1])], 0.9);
        assert!(loss_ma_direct(&params, &batch, &v, Norm::L1).unwrap() < 1e-14);
        assert!(loss_ma_direct(&params, &batch, &v, Norm::L2).unwrap() < 1e-28);
        assert!(loss_ma_ub_l1(&params, &batch, &v) < 1e-14);
        assert!(loss_vaml(&params, &batch, &v) < 1e-28);
        assert!(loss_vps(&params, &batch, &v).unwrap() < 1e-14);
    }

    #[test]
    fn uniform_model_mle_is_log_num_states() {
        let params = ModelParams::uniform(5, 2);
        let batch = TransitionBatch::from_paths(&[(vec![0, 4, 2], vec![1, 0])], 0.9);
        assert!((loss_mle(&params, &batch) - math::ln(5.0)).abs() < 1e-14);
    }

    #[test]
    fn mle_minimized_by_empirical_frequencies() {
        // (0, 0) -> 1 three times, -> 2 once; (1, 0) -> 0 twice, -> 1 twice
        let mut batch = TransitionBatch::new(0.9);
        for (i, (s, sp)) in [(0, 1), (0, 1), (0, 1), (0, 2), (1, 0), (1, 0), (1, 1), (1, 1)].iter().enumerate() {
            batch.push(Transition::new(*s, 0, *sp, 0, i));
        }
        let freq = [[0.0, 0.75, 0.25], [0.5, 0.5, 0.0], [1.0 / 3.0; 3]];
        let logits: Vec<f64> = freq
            .iter()
            .flat_map(|row| row.iter().map(|p| if *p > 0.0 { math::ln(*p) } else { -40.0 }))
            .collect();
        let optimum = ModelParams::from_logits(3, 1, logits).unwrap();
        // closed-form minimum: -(3 ln .75 + ln .25 + 4 ln .5) / 8
        let closed = -(3.0 * math::ln(0.75) + math::ln(0.25) + 4.0 * math::ln(0.5)) / 8.0;
        let at_opt = loss_mle(&optimum, &batch);
        assert!((at_opt - closed).abs() < 1e-12);
        let g = grad(&optimum, &ObjectiveKind::new(Objective::Mle), &batch, &ValueTable::zeros(3)).unwrap();
        assert!(math::max_abs(&g) <= 1e-8);
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let mut other = optimum.clone();
            for l in other.logits_mut() {
                *l += rng.gen_range(-0.5..0.5);
            }
            assert!(loss_mle(&other, &batch) >= at_opt - 1e-12);
        }
    }

    #[test]
    fn zero_ub_loss_has_zero_gradient() {
        let params = ModelParams::uniform(3, 1);
        let v = ValueTable(vec![1.0, 1.0, 1.0]);
        let batch = TransitionBatch::from_paths(&[(vec![0, 1, 2], vec![0, 0])], 0.9);
        let g = grad(&params, &ObjectiveKind::new(Objective::MaUbL1), &batch, &v).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn one_mle_step_from_uniform_descends() {
        let params = ModelParams::uniform(4, 2);
        let batch = TransitionBatch::from_paths(&[(vec![0, 1, 3, 3, 2], vec![0, 1, 1, 0])], 0.9);
        let kind = ObjectiveKind::new(Objective::Mle);
        let g = grad(&params, &kind, &batch, &ValueTable::zeros(4)).unwrap();
        let stepped = crate::model::sgd_step(params.clone(), &g, 0.1);
        assert!(loss_mle(&stepped, &batch) < loss_mle(&params, &batch));
    }
}
