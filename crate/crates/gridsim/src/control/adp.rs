//! Adaptive-dynamic-programming agent: a TD(0) critic with a deterministic
//! tanh-squashed policy improved by positive-TD regression toward the
//! applied action (semi-gradient actor-critic).
//!
//! Edge agents consume the corrupted local observation; cloud agents the
//! delayed clean view. The cloud critic can be pulled down to the edge
//! periodically via [`AdpAgent::adopt_critic`].

use crate::nn::{apply_update, Activation, Mlp, Optimizer};
use crate::rng::Stream;

use super::{ControlAction, Transition};

/// Which observation path feeds the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdpMode {
    Edge,
    Cloud,
}

#[derive(Debug, Clone)]
pub struct AdpConfig {
    /// Discount factor in (0, 1].
    pub gamma: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub hidden: Vec<usize>,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self { gamma: 0.95, lr_critic: 3e-3, lr_actor: 1e-3, hidden: vec![64, 64] }
    }
}

/// Actor-critic pair with its optimizers.
#[derive(Debug, Clone)]
pub struct AdpAgent {
    pub value_net: Mlp,
    pub policy_net: Mlp,
    pub gamma: f64,
    pub mode: AdpMode,
    opt_critic: Optimizer,
    opt_actor: Optimizer,
}

impl AdpAgent {
    pub fn new(
        feature_dim: usize,
        action_dim: usize,
        cfg: &AdpConfig,
        mode: AdpMode,
        rng: &mut Stream,
    ) -> Self {
        assert!(cfg.gamma > 0.0 && cfg.gamma <= 1.0, "gamma must be in (0, 1]");
        let mut value_sizes = vec![feature_dim];
        value_sizes.extend(&cfg.hidden);
        value_sizes.push(1);
        let mut policy_sizes = vec![feature_dim];
        policy_sizes.extend(&cfg.hidden);
        policy_sizes.push(action_dim);
        Self {
            value_net: Mlp::new(&value_sizes, Activation::Tanh, rng).unwrap(),
            policy_net: Mlp::new(&policy_sizes, Activation::Tanh, rng).unwrap(),
            gamma: cfg.gamma,
            mode,
            opt_critic: Optimizer::adam(cfg.lr_critic),
            opt_actor: Optimizer::adam(cfg.lr_actor),
        }
    }

    /// Deterministic policy: tanh of the network output, inside bounds.
    pub fn act(&self, features: &[f64]) -> ControlAction {
        let raw = self.policy_net.forward(features).expect("feature dimension");
        ControlAction { values: raw.iter().map(|z| z.tanh()).collect() }
    }

    /// Critic estimate of the discounted return from `features`.
    pub fn value(&self, features: &[f64]) -> f64 {
        self.value_net.forward(features).expect("feature dimension")[0]
    }

    /// One TD(0) critic step plus the actor improvement. Returns the TD
    /// error `y - V(s)` with `y = r + gamma * V(s')` (zero bootstrap on
    /// terminal transitions).
    pub fn update(&mut self, t: &Transition) -> f64 {
        let v_next = if t.done { 0.0 } else { self.value(&t.next_state) };
        let target = t.reward + self.gamma * v_next;
        let cache = self.value_net.forward_cached(&t.state).expect("feature dimension");
        let v = cache.output()[0];
        let td_error = target - v;
        // d/dv of (v - target)^2
        let grads = self.value_net.backward(&cache, &[2.0 * (v - target)]).unwrap();
        apply_update(&mut self.value_net, &grads, &mut self.opt_critic);

        // Positive TD error means the applied action outperformed the
        // critic's expectation; regress the policy toward it.
        if td_error > 0.0 {
            let cache = self.policy_net.forward_cached(&t.state).unwrap();
            let raw = cache.output().to_vec();
            let upstream: Vec<f64> = raw
                .iter()
                .zip(&t.action)
                .map(|(z, u)| {
                    let a = z.tanh();
                    2.0 * (a - u) * (1.0 - a * a)
                })
                .collect();
            let grads = self.policy_net.backward(&cache, &upstream).unwrap();
            apply_update(&mut self.policy_net, &grads, &mut self.opt_actor);
        }
        td_error
    }

    /// Copies another agent's critic parameters (cloud-to-edge refinement).
    pub fn adopt_critic(&mut self, other: &AdpAgent) {
        self.value_net = other.value_net.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::rng::stream;

    fn agent(mode: AdpMode, seed: u64) -> AdpAgent {
        let mut rng = stream(seed, "adp_test", 0);
        AdpAgent::new(3, 2, &AdpConfig::default(), mode, &mut rng)
    }

    #[test]
    fn zero_policy_net_acts_zero() {
        let mut a = agent(AdpMode::Edge, 1);
        a.policy_net = Mlp::zeros(&a.policy_net.layer_sizes, crate::nn::Activation::Tanh).unwrap();
        assert_eq!(a.act(&[0.3, -0.2, 0.9]).values, vec![0.0, 0.0]);
    }

    #[test]
    fn edge_and_cloud_agree_on_identical_input() {
        // Same seed, same nets; only the observation path differs.
        let edge = agent(AdpMode::Edge, 7);
        let cloud = {
            let mut c = agent(AdpMode::Cloud, 7);
            c.mode = AdpMode::Cloud;
            c
        };
        let x = [0.1, 0.2, -0.3];
        assert_eq!(edge.act(&x).values, cloud.act(&x).values);
    }

    #[test]
    fn action_is_reproducible_through_checkpoint() {
        let a = agent(AdpMode::Edge, 9);
        let text = a.policy_net.save_checkpoint();
        let restored = Mlp::load_checkpoint(&text).unwrap();
        let x = [0.5, -0.5, 0.25];
        let direct = a.act(&x);
        let via_ckpt: Vec<f64> =
            restored.forward(&x).unwrap().iter().map(|z| z.tanh()).collect();
        assert_eq!(direct.values, via_ckpt);
    }

    #[test]
    fn td_error_arithmetic() {
        let mut a = agent(AdpMode::Edge, 2);
        a.value_net = Mlp::zeros(&a.value_net.layer_sizes, crate::nn::Activation::Tanh).unwrap();
        a.gamma = 0.9;
        let t = Transition {
            state: vec![0.0; 3],
            action: vec![0.0; 2],
            reward: -1.0,
            next_state: vec![0.0; 3],
            done: false,
        };
        let delta = a.update(&t);
        // V = 0 everywhere: target = -1 + 0.9 * 0 = -1, error = -1.
        assert!((delta + 1.0).abs() < 1e-12);
    }

    #[test]
    fn critic_converges_on_zero_reward_chain() {
        let mut a = agent(AdpMode::Edge, 3);
        a.gamma = 0.9;
        let t = Transition {
            state: vec![0.2, 0.1, -0.4],
            action: vec![0.0, 0.0],
            reward: 0.0,
            next_state: vec![0.2, 0.1, -0.4],
            done: false,
        };
        for _ in 0..1000 {
            a.update(&t);
        }
        assert!(a.value(&t.state).abs() < 1e-3, "V = {}", a.value(&t.state));
    }

    #[test]
    fn critic_matches_two_state_bellman_solve() {
        // Deterministic chain s0 -> s1 -> s0 with rewards (0, 1), gamma 0.5.
        // Linear solve: V0 = 0 + g V1, V1 = 1 + g V0 => V1 = 1/(1-g^2), V0 = g V1.
        let gamma: f64 = 0.5;
        let v1 = 1.0 / (1.0 - gamma * gamma);
        let v0 = gamma * v1;

        let mut a = agent(AdpMode::Edge, 4);
        a.gamma = gamma;
        let s0 = vec![1.0, 0.0, 0.0];
        let s1 = vec![0.0, 1.0, 0.0];
        for _ in 0..4000 {
            a.update(&Transition {
                state: s0.clone(),
                action: vec![0.0, 0.0],
                reward: 0.0,
                next_state: s1.clone(),
                done: false,
            });
            a.update(&Transition {
                state: s1.clone(),
                action: vec![0.0, 0.0],
                reward: 1.0,
                next_state: s0.clone(),
                done: false,
            });
        }
        assert!((a.value(&s0) - v0).abs() < 5e-2, "V0 = {} vs {v0}", a.value(&s0));
        assert!((a.value(&s1) - v1).abs() < 5e-2, "V1 = {} vs {v1}", a.value(&s1));
    }

    #[test]
    fn positive_td_pulls_policy_toward_action() {
        let mut a = agent(AdpMode::Edge, 5);
        // Make the critic think the applied action was great: reward >> V.
        let s = vec![0.1, -0.2, 0.3];
        let u = vec![0.6, -0.4];
        let before = a.act(&s).values.clone();
        for _ in 0..200 {
            a.update(&Transition {
                state: s.clone(),
                action: u.clone(),
                reward: 10.0,
                next_state: s.clone(),
                done: true,
            });
        }
        let after = a.act(&s).values;
        let d_before: f64 =
            before.iter().zip(&u).map(|(a, b)| (a - b).abs()).sum();
        let d_after: f64 = after.iter().zip(&u).map(|(a, b)| (a - b).abs()).sum();
        assert!(d_after < d_before, "policy moved away: {d_before} -> {d_after}");
    }
}
