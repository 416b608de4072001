//! Advantage actor-critic estimator with a terminal reward broadcast to
//! every step of a rollout.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// One sampled headline with its credit assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
    /// One entry per emitted step (end token included).
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct A2cLosses {
    pub policy: Var,
    pub critic: Var,
}

/// `R_k - V` for every rollout.
pub fn advantages(rewards: &[f64], value: f64) -> Vec<f64> {
    rewards.iter().map(|r| r - value).collect()
}

/// Policy loss `-(1/K) sum_k sum_t A_k log p(y_{k,t})` with the critic value
/// held constant, and critic loss `(1/K) sum_k (V - R_k)^2`.
pub fn a2c_losses(
    tape: &mut Tape,
    log_probs: &[Vec<Var>],
    rewards: &[f64],
    value: Var,
) -> Result<A2cLosses> {
    if log_probs.len() != rewards.len() || rewards.is_empty() {
        return Err(Error::shape("a2c_losses", &[log_probs.len()], &[rewards.len()]));
    }
    if tape.value(value).len() != 1 {
        return Err(Error::shape("a2c_losses", tape.shape(value), &[1, 1]));
    }
    let v = tape.value(value).item();
    let k = rewards.len() as f64;
    let mut policy_terms = Vec::new();
    for (lps, adv) in log_probs.iter().zip(advantages(rewards, v)) {
        for &lp in lps {
            policy_terms.push(tape.scale(lp, -adv / k));
        }
    }
    let policy = if policy_terms.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let all = tape.concat(&policy_terms, 1)?;
        tape.sum(all)
    };
    let mut critic_terms = Vec::with_capacity(rewards.len());
    for &r in rewards {
        let target = tape.constant(Tensor::scalar(r));
        let diff = tape.sub(value, target)?;
        let sq = tape.mul(diff, diff)?;
        critic_terms.push(tape.scale(sq, 1.0 / k));
    }
    let all = tape.concat(&critic_terms, 1)?;
    let critic = tape.sum(all);
    Ok(A2cLosses { policy, critic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::sample_index;
    use crate::numeric::{Adam, AdamConfig, Group, ParamId, ParamStore};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two-armed bandit: a softmax policy over logits and a scalar critic.
    struct Bandit {
        store: ParamStore,
        logits: ParamId,
        value: ParamId,
    }

    impl Bandit {
        fn new() -> Self {
            let mut store = ParamStore::new();
            let logits = store.add("policy", Group::Generator, Tensor::row(vec![0.0, 0.0]));
            let value = store.add("value", Group::Critic, Tensor::scalar(0.0));
            Self { store, logits, value }
        }

        fn probs(&self) -> Vec<f64> {
            let l = self.store.get(self.logits).data();
            let m = l[0].max(l[1]);
            let e: Vec<f64> = l.iter().map(|x| libm::exp(x - m)).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        }

        /// Builds the losses for the given actions and per-action rewards.
        fn losses(
            &self,
            tape: &mut Tape,
            actions: &[usize],
            reward: impl Fn(usize) -> f64,
            value_override: Option<f64>,
        ) -> A2cLosses {
            let logits = tape.param(&self.store, self.logits);
            let p = tape.softmax(logits, 1).unwrap();
            let lps: Vec<Vec<Var>> = actions
                .iter()
                .map(|&a| {
                    let pa = tape.element(p, 0, a).unwrap();
                    vec![tape.ln(pa)]
                })
                .collect();
            let rewards: Vec<f64> = actions.iter().map(|&a| reward(a)).collect();
            let value = match value_override {
                Some(v) => tape.constant(Tensor::scalar(v)),
                None => tape.param(&self.store, self.value),
            };
            a2c_losses(tape, &lps, &rewards, value).unwrap()
        }
    }

    fn arm_a(a: usize) -> f64 {
        if a == 0 {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn bandit_converges_to_rewarded_arm() {
        let mut b = Bandit::new();
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &[Group::Generator, Group::Critic]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let p = b.probs();
            let actions: Vec<usize> = (0..16).map(|_| sample_index(&p, &mut rng)).collect();
            let mut tape = Tape::new();
            let l = b.losses(&mut tape, &actions, arm_a, None);
            let total = tape.add(l.policy, l.critic).unwrap();
            let g = tape.param_grads(total).unwrap();
            opt.step(&mut b.store, &g).unwrap();
        }
        assert!(b.probs()[0] > 0.9, "{:?}", b.probs());
    }

    #[test]
    fn constant_reward_gives_zero_policy_gradient() {
        let b = Bandit::new();
        let actions = [0, 1, 1, 0, 1];
        let mut tape = Tape::new();
        // critic trained to the constant
        let l = b.losses(&mut tape, &actions, |_| 0.7, Some(0.7));
        let g = tape.param_grads(l.policy).unwrap();
        assert!(g.get(b.logits).map_or(true, |t| t.data().iter().all(|&x| x == 0.0)));
        let adv = advantages(&[0.7; 5], 0.7);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn mean_critic_equals_mean_baseline_reinforce() {
        let mut b = Bandit::new();
        *b.store.get_mut(b.logits) = Tensor::row(vec![0.4, -0.3]);
        let actions = [0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1];
        let reward = |a: usize| if a == 0 { 0.9 } else { 0.2 };
        let rewards: Vec<f64> = actions.iter().map(|&a| reward(a)).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let mut tape = Tape::new();
        let l = b.losses(&mut tape, &actions, reward, Some(mean));
        let g = tape.param_grads(l.policy).unwrap();
        let g = g.get(b.logits).unwrap().data().to_vec();
        // d log softmax(l)_a / d l = onehot(a) - p
        let p = b.probs();
        let mut expect = [0.0; 2];
        for (&a, &r) in actions.iter().zip(&rewards) {
            for j in 0..2 {
                let onehot = if j == a { 1.0 } else { 0.0 };
                expect[j] -= (r - mean) * (onehot - p[j]) / actions.len() as f64;
            }
        }
        for j in 0..2 {
            assert!((g[j] - expect[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_sign_matches_expected_reward_slope() {
        let mut b = Bandit::new();
        *b.store.get_mut(b.logits) = Tensor::row(vec![-0.5, 0.3]);
        let expected = |l: [f64; 2]| {
            let z = libm::exp(l[0]) + libm::exp(l[1]);
            libm::exp(l[0]) / z
        };
        let l0 = [-0.5, 0.3];
        let eps = 1e-5;
        let fd = [
            (expected([l0[0] + eps, l0[1]]) - expected([l0[0] - eps, l0[1]])) / (2.0 * eps),
            (expected([l0[0], l0[1] + eps]) - expected([l0[0], l0[1] - eps])) / (2.0 * eps),
        ];
        let p = b.probs();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actions: Vec<usize> = (0..4000).map(|_| sample_index(&p, &mut rng)).collect();
        let mut tape = Tape::new();
        let l = b.losses(&mut tape, &actions, arm_a, Some(0.0));
        let g = tape.param_grads(l.policy).unwrap();
        // the loss gradient descends, so ascent direction is its negation
        let ascent: Vec<f64> = g.get(b.logits).unwrap().data().iter().map(|x| -x).collect();
        for j in 0..2 {
            assert_eq!(ascent[j].signum(), fd[j].signum(), "{ascent:?} {fd:?}");
        }
        b.store.get_mut(b.value).data_mut()[0] = 0.0;
    }

    #[test]
    fn critic_regresses_to_mean_reward() {
        let b = Bandit::new();
        let mut tape = Tape::new();
        let l = b.losses(&mut tape, &[0, 1, 0, 0], arm_a, None);
        let g = tape.param_grads(l.critic).unwrap();
        // d/dV mean (V - R)^2 at V = 0 is -2 mean(R)
        assert!((g.get(b.value).unwrap().item() + 1.5).abs() < 1e-15);
        assert!(g.get(b.logits).is_none());
    }
}
