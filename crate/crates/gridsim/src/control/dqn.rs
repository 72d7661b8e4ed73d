//! Deep Q-network over a discretized scalar action grid, with experience
//! replay, a periodically synced target network, and epsilon-greedy
//! exploration.
//!
//! The discrete action drives a single control component (battery power
//! fraction by default); the remaining components stay zero.

use std::collections::VecDeque;

use rand::Rng;

use crate::nn::{apply_update, Activation, Mlp, Optimizer};
use crate::rng::Stream;

use super::{action_index, ControlAction};

#[derive(Debug, Clone)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    /// Discrete action values (each maps to one scalar command level).
    pub action_grid: Vec<f64>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which epsilon decays linearly.
    pub epsilon_decay_steps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Target network refresh period, in update calls.
    pub target_sync: usize,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lr: 1e-3,
            action_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 3000,
            replay_capacity: 20_000,
            batch_size: 32,
            target_sync: 200,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone)]
struct ReplayEntry {
    state: Vec<f64>,
    action: usize,
    reward: f64,
    next_state: Vec<f64>,
    done: bool,
}

/// Value-based agent with a bounded FIFO replay buffer.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub q_net: Mlp,
    pub target_net: Mlp,
    pub cfg: DqnConfig,
    opt: Optimizer,
    replay: VecDeque<ReplayEntry>,
    act_calls: usize,
    update_calls: usize,
}

impl DqnAgent {
    pub fn new(feature_dim: usize, cfg: DqnConfig, rng: &mut Stream) -> Self {
        assert!(!cfg.action_grid.is_empty(), "action grid must be non-empty");
        let mut sizes = vec![feature_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.action_grid.len());
        let q_net = Mlp::new(&sizes, Activation::Tanh, rng).unwrap();
        let target_net = q_net.clone();
        let opt = Optimizer::adam(cfg.lr);
        Self { q_net, target_net, cfg, opt, replay: VecDeque::new(), act_calls: 0, update_calls: 0 }
    }

    /// Current exploration probability under the linear decay schedule.
    pub fn epsilon(&self) -> f64 {
        let span = self.cfg.epsilon_decay_steps.max(1) as f64;
        let frac = (self.act_calls as f64 / span).min(1.0);
        self.cfg.epsilon_start + frac * (self.cfg.epsilon_end - self.cfg.epsilon_start)
    }

    pub fn q_values(&self, features: &[f64]) -> Vec<f64> {
        self.q_net.forward(features).expect("feature dimension")
    }

    /// Greedy argmax with ties broken by the lowest index.
    pub fn greedy_index(&self, features: &[f64]) -> usize {
        let q = self.q_values(features);
        let mut best = 0;
        for (i, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = i;
            }
        }
        best
    }

    /// Epsilon-greedy action selection. Both the exploration coin and the
    /// random index are drawn on every call so the stream stays aligned
    /// across configurations.
    pub fn act(&mut self, features: &[f64], rng: &mut Stream) -> (usize, ControlAction) {
        let u: f64 = rng.gen();
        let random_index = rng.gen_range(0..self.cfg.action_grid.len());
        let eps = self.epsilon();
        self.act_calls += 1;
        let index = if u < eps { random_index } else { self.greedy_index(features) };
        (index, self.action_for(index))
    }

    /// Maps a grid index to the full per-bus command vector.
    pub fn action_for(&self, index: usize) -> ControlAction {
        let mut a = ControlAction::zeros(super::ACTION_DIM);
        a.values[action_index::BATTERY] = self.cfg.action_grid[index];
        a
    }

    pub fn push(&mut self, state: Vec<f64>, action: usize, reward: f64, next_state: Vec<f64>, done: bool) {
        if self.replay.len() >= self.cfg.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(ReplayEntry { state, action, reward, next_state, done });
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// One minibatch TD update against the target network; returns the mean
    /// squared TD error, or `None` when the replay is still too small.
    pub fn update(&mut self, rng: &mut Stream) -> Option<f64> {
        if self.replay.len() < self.cfg.batch_size {
            return None;
        }
        let mut grads = self.q_net.zero_gradients();
        let mut loss = 0.0;
        for _ in 0..self.cfg.batch_size {
            let entry = &self.replay[rng.gen_range(0..self.replay.len())];
            let target = if entry.done {
                entry.reward
            } else {
                let tq = self.target_net.forward(&entry.next_state).unwrap();
                entry.reward + self.cfg.gamma * tq.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let cache = self.q_net.forward_cached(&entry.state).unwrap();
            let q = cache.output()[entry.action];
            let mut upstream = vec![0.0; self.cfg.action_grid.len()];
            upstream[entry.action] = 2.0 * (q - target);
            loss += (q - target) * (q - target);
            let g = self.q_net.backward(&cache, &upstream).unwrap();
            grads.add(&g);
        }
        grads.scale(1.0 / self.cfg.batch_size as f64);
        apply_update(&mut self.q_net, &grads, &mut self.opt);

        self.update_calls += 1;
        if self.update_calls % self.cfg.target_sync == 0 {
            self.target_net = self.q_net.clone();
        }
        Some(loss / self.cfg.batch_size as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn greedy_agent(seed: u64) -> DqnAgent {
        let mut rng = stream(seed, "dqn_test", 0);
        let cfg = DqnConfig { epsilon_start: 0.0, epsilon_end: 0.0, ..DqnConfig::default() };
        DqnAgent::new(3, cfg, &mut rng)
    }

    #[test]
    fn greedy_argmax_and_tie_rule() {
        let mut a = greedy_agent(1);
        // Rig the network to produce fixed Q values via zero weights + bias.
        a.q_net = Mlp::zeros(&a.q_net.layer_sizes, Activation::Tanh).unwrap();
        let last = a.q_net.n_layers() - 1;
        a.q_net.biases[last] = vec![0.1, 0.9, 0.3, 0.0, 0.0];
        let mut rng = stream(2, "dqn_test", 0);
        let (idx, action) = a.act(&[0.0; 3], &mut rng);
        assert_eq!(idx, 1);
        assert_eq!(action.values[action_index::BATTERY], -0.5);

        // All-equal Q values: lowest index wins.
        a.q_net.biases[last] = vec![0.4; 5];
        assert_eq!(a.greedy_index(&[0.0; 3]), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = stream(3, "dqn_test", 0);
        let cfg = DqnConfig { epsilon_start: 1.0, epsilon_end: 1.0, ..DqnConfig::default() };
        let mut a = DqnAgent::new(3, cfg, &mut rng);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let (idx, _) = a.act(&[0.1, 0.2, 0.3], &mut rng);
            counts[idx] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let frac = *c as f64 / n as f64;
            assert!((frac - 0.2).abs() < 0.01, "action {i}: {frac}");
        }
    }

    #[test]
    fn terminal_transitions_use_reward_alone() {
        let mut rng = stream(4, "dqn_test", 0);
        let cfg = DqnConfig {
            batch_size: 4,
            hidden: vec![8],
            lr: 1e-2,
            ..DqnConfig::default()
        };
        let mut a = DqnAgent::new(2, cfg, &mut rng);
        for _ in 0..4 {
            a.push(vec![1.0, 0.0], 0, 3.0, vec![0.0, 0.0], true);
        }
        for _ in 0..2000 {
            a.update(&mut rng);
        }
        let q = a.q_values(&[1.0, 0.0]);
        assert!((q[0] - 3.0).abs() < 0.05, "Q = {}", q[0]);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut rng = stream(5, "dqn_test", 0);
        let cfg = DqnConfig { lr: 1e-12, batch_size: 2, ..DqnConfig::default() };
        let mut a = DqnAgent::new(2, cfg, &mut rng);
        let before = a.q_net.weights.clone();
        a.push(vec![0.1, 0.2], 1, -0.5, vec![0.1, 0.2], false);
        a.push(vec![0.3, 0.1], 2, -0.2, vec![0.3, 0.1], false);
        a.update(&mut rng).unwrap();
        // Adam with lr ~ 0 moves parameters by ~1e-12 at most.
        for (w0, w1) in before.iter().zip(&a.q_net.weights) {
            for (x, y) in w0.iter().zip(w1) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn replay_is_bounded_fifo() {
        let mut rng = stream(6, "dqn_test", 0);
        let cfg = DqnConfig { replay_capacity: 10, ..DqnConfig::default() };
        let mut a = DqnAgent::new(1, cfg, &mut rng);
        for k in 0..25 {
            a.push(vec![k as f64], 0, 0.0, vec![k as f64], false);
        }
        assert_eq!(a.replay_len(), 10);
        assert_eq!(a.replay[0].state[0], 15.0);
    }

    #[test]
    fn one_state_mdp_reaches_analytic_q_values() {
        // Two actions with rewards {1, 0} in a single recurring state and
        // gamma 0.9: Q* = {10, 9}.
        let mut rng = stream(7, "dqn_fixedpoint", 0);
        let cfg = DqnConfig {
            gamma: 0.9,
            lr: 5e-3,
            action_grid: vec![0.0, 1.0],
            epsilon_start: 1.0,
            epsilon_end: 0.2,
            epsilon_decay_steps: 2000,
            replay_capacity: 4000,
            batch_size: 16,
            target_sync: 50,
            hidden: vec![16, 16],
        };
        let mut a = DqnAgent::new(1, cfg, &mut rng);
        let s = vec![1.0];
        for _ in 0..6000 {
            let (idx, _) = a.act(&s, &mut rng);
            let r = if idx == 0 { 1.0 } else { 0.0 };
            a.push(s.clone(), idx, r, s.clone(), false);
            a.update(&mut rng);
        }
        let q = a.q_values(&s);
        assert!((q[0] - 10.0).abs() < 1e-2, "Q0 = {}", q[0]);
        assert!((q[1] - 9.0).abs() < 1e-2, "Q1 = {}", q[1]);
    }

    #[test]
    fn target_net_changes_only_at_sync() {
        let mut rng = stream(8, "dqn_test", 0);
        let cfg = DqnConfig { target_sync: 5, batch_size: 2, hidden: vec![8], ..DqnConfig::default() };
        let mut a = DqnAgent::new(2, cfg, &mut rng);
        a.push(vec![0.1, 0.0], 0, 1.0, vec![0.1, 0.0], false);
        a.push(vec![0.0, 0.1], 1, -1.0, vec![0.0, 0.1], false);
        let t0 = a.target_net.weights.clone();
        for k in 1..=4 {
            a.update(&mut rng).unwrap();
            assert_eq!(a.target_net.weights, t0, "target moved early at update {k}");
        }
        a.update(&mut rng).unwrap();
        assert_eq!(a.target_net.weights, a.q_net.weights, "target must sync at period");
    }
}
