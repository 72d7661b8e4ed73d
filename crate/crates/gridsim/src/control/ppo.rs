//! Proximal policy optimization with a diagonal-Gaussian actor, clipped
//! surrogate objective, and generalized advantage estimation.
//!
//! The agent runs one policy across many parallel per-bus chains ("envs").
//! Samples carry the value estimates from acting time; updates happen at
//! rollout boundaries over shuffled minibatches against a frozen old-policy
//! log-density.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{apply_update, Activation, Mlp, Optimizer};
use crate::rng::Stream;

use super::ControlAction;

/// Numeric guard on the log-std head: sigma stays in [e^-5, e^1.5].
const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Clipping threshold for the likelihood ratio.
    pub clip_eps: f64,
    /// Samples collected (across all chains) before an update round.
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden: Vec<usize>,
    /// Initial bias of the log-std head.
    pub log_std_init: f64,
    /// Exploration floor: the policy std never drops below this value
    /// (persistent excitation; set near zero to allow full collapse).
    pub sigma_min: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            rollout_len: 1024,
            epochs: 3,
            minibatch: 64,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            hidden: vec![64, 64],
            log_std_init: 0.0,
            sigma_min: 0.35,
        }
    }
}

/// Exact log-density of a diagonal Gaussian at `x`.
pub fn gaussian_log_density(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // ln(2*pi)/2
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_TAU
        })
        .sum()
}

/// Generalized advantage estimation. `values` holds one more entry than
/// `rewards` (the bootstrap tail value); `dones` marks terminal steps where
/// both the bootstrap and the advantage recursion cut off.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap tail");
    assert_eq!(dones.len(), rewards.len());
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * mask - values[t];
        acc = delta + gamma * lambda * mask * acc;
        adv[t] = acc;
    }
    adv
}

/// One decision from the stochastic policy.
#[derive(Debug, Clone)]
pub struct PpoDecision {
    /// The action to apply: the clamped sample, or zero on an actuation
    /// packet drop.
    pub action: ControlAction,
    /// The pre-clamp Gaussian sample the log-density refers to.
    pub raw_sample: Vec<f64>,
    /// Exact log-density of `raw_sample` under the current policy.
    pub log_prob: f64,
    /// Critic value of the observed features at acting time.
    pub value: f64,
    /// Whether the applied action was zeroed by a packet drop.
    pub zeroed: bool,
}

#[derive(Debug, Clone)]
struct Sample {
    state: Vec<f64>,
    raw_action: Vec<f64>,
    log_prob_old: f64,
    value: f64,
    value_next: f64,
    reward: f64,
    done: bool,
}

/// Diagnostics from one update round.
#[derive(Debug, Clone, Default)]
pub struct PpoUpdateStats {
    pub samples: usize,
    pub minibatches: usize,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// The PPO agent: actor producing `(mu, log sigma)`, critic, and the
/// per-chain rollout buffers.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub cfg: PpoConfig,
    action_dim: usize,
    opt_actor: Optimizer,
    opt_critic: Optimizer,
    chains: Vec<Vec<Sample>>,
    buffered: usize,
}

impl PpoAgent {
    pub fn new(
        feature_dim: usize,
        action_dim: usize,
        n_chains: usize,
        cfg: PpoConfig,
        rng: &mut Stream,
    ) -> Self {
        assert!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0, "clip threshold in (0, 1)");
        let mut actor_sizes = vec![feature_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(2 * action_dim);
        let mut critic_sizes = vec![feature_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let mut actor = Mlp::new(&actor_sizes, Activation::Tanh, rng).unwrap();
        // Bias the log-std head to the configured initial exploration scale.
        let last = actor.n_layers() - 1;
        for i in action_dim..2 * action_dim {
            actor.biases[last][i] = cfg.log_std_init;
        }
        let critic = Mlp::new(&critic_sizes, Activation::Tanh, rng).unwrap();
        let (opt_actor, opt_critic) =
            (Optimizer::adam(cfg.lr_actor), Optimizer::adam(cfg.lr_critic));
        Self {
            actor,
            critic,
            cfg,
            action_dim,
            opt_actor,
            opt_critic,
            chains: vec![Vec::new(); n_chains.max(1)],
            buffered: 0,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Effective clamp range of the log-std head.
    fn log_std_bounds(&self) -> (f64, f64) {
        let lo = self.cfg.sigma_min.max(LOG_STD_MIN.exp()).ln();
        (lo.min(LOG_STD_MAX), LOG_STD_MAX)
    }

    /// Mean and std of the policy at `features`.
    pub fn policy(&self, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.log_std_bounds();
        let out = self.actor.forward(features).expect("feature dimension");
        let (mu, log_std) = out.split_at(self.action_dim);
        let sigma: Vec<f64> = log_std.iter().map(|l| l.clamp(lo, hi).exp()).collect();
        (mu.to_vec(), sigma)
    }

    /// Samples the Gaussian policy. The applied action is the sample
    /// clamped into bounds, zeroed with probability `p_drop` (the logged
    /// sample and its density are retained for training either way).
    pub fn act(&self, features: &[f64], p_drop: f64, rng: &mut Stream) -> PpoDecision {
        let (mu, sigma) = self.policy(features);
        let raw: Vec<f64> = mu
            .iter()
            .zip(&sigma)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect();
        let u_drop: f64 = rng.gen();
        let log_prob = gaussian_log_density(&raw, &mu, &sigma);
        let zeroed = u_drop < p_drop;
        let action = if zeroed {
            ControlAction::zeros(self.action_dim)
        } else {
            ControlAction::from_values(raw.clone())
        };
        let value = self.critic.forward(features).expect("feature dimension")[0];
        PpoDecision { action, raw_sample: raw, log_prob, value, zeroed }
    }

    /// Records a completed step on chain `chain`. `next_features` feeds the
    /// bootstrap value (evaluated with the acting-time critic).
    pub fn push(
        &mut self,
        chain: usize,
        features: &[f64],
        decision: &PpoDecision,
        reward: f64,
        next_features: &[f64],
        done: bool,
    ) {
        let value_next =
            if done { 0.0 } else { self.critic.forward(next_features).expect("feature dimension")[0] };
        self.chains[chain].push(Sample {
            state: features.to_vec(),
            raw_action: decision.raw_sample.clone(),
            log_prob_old: decision.log_prob,
            value: decision.value,
            value_next,
            reward,
            done,
        });
        self.buffered += 1;
    }

    /// Whether the rollout buffer has reached the update threshold.
    pub fn ready(&self) -> bool {
        self.buffered >= self.cfg.rollout_len
    }

    /// Runs one PPO update round over the buffered rollout and clears it.
    pub fn update(&mut self, rng: &mut Stream) -> PpoUpdateStats {
        if self.buffered == 0 {
            return PpoUpdateStats::default();
        }
        // Per-chain GAE with acting-time values, then batch normalization.
        let mut states = Vec::with_capacity(self.buffered);
        let mut raw_actions = Vec::with_capacity(self.buffered);
        let mut log_probs_old = Vec::with_capacity(self.buffered);
        let mut advantages = Vec::with_capacity(self.buffered);
        let mut returns = Vec::with_capacity(self.buffered);
        for chain in &self.chains {
            if chain.is_empty() {
                continue;
            }
            let rewards: Vec<f64> = chain.iter().map(|s| s.reward).collect();
            let dones: Vec<bool> = chain.iter().map(|s| s.done).collect();
            let mut values: Vec<f64> = chain.iter().map(|s| s.value).collect();
            values.push(chain.last().unwrap().value_next);
            let adv = gae(&rewards, &values, &dones, self.cfg.gamma, self.cfg.gae_lambda);
            for (s, a) in chain.iter().zip(adv) {
                states.push(s.state.clone());
                raw_actions.push(s.raw_action.clone());
                log_probs_old.push(s.log_prob_old);
                returns.push(a + s.value);
                advantages.push(a);
            }
        }
        let n = advantages.len();
        let mean = advantages.iter().sum::<f64>() / n as f64;
        let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        for a in &mut advantages {
            *a = (*a - mean) / std;
        }

        let mut stats = PpoUpdateStats { samples: n, ..Default::default() };
        let mut ratio_sum = 0.0;
        let mut ratio_count = 0usize;
        let mut clipped = 0usize;

        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(rng);
            for batch in order.chunks(self.cfg.minibatch) {
                let mut actor_grads = self.actor.zero_gradients();
                let mut critic_grads = self.critic.zero_gradients();
                let (ls_lo, ls_hi) = self.log_std_bounds();
                for &i in batch {
                    let a = advantages[i];
                    let cache = self.actor.forward_cached(&states[i]).unwrap();
                    let out = cache.output();
                    let (mu, log_std_raw) = out.split_at(self.action_dim);
                    let log_prob_new = {
                        let sigma: Vec<f64> =
                            log_std_raw.iter().map(|l| l.clamp(ls_lo, ls_hi).exp()).collect();
                        gaussian_log_density(&raw_actions[i], mu, &sigma)
                    };
                    let ratio = (log_prob_new - log_probs_old[i]).exp();
                    ratio_sum += ratio;
                    ratio_count += 1;

                    let surr1 = ratio * a;
                    let surr2 = ratio.clamp(1.0 - self.cfg.clip_eps, 1.0 + self.cfg.clip_eps) * a;
                    let objective = surr1.min(surr2);
                    debug_assert!(
                        objective
                            <= ((1.0 - self.cfg.clip_eps) * a)
                                .max((1.0 + self.cfg.clip_eps) * a)
                                + 1e-9,
                        "clipped objective escaped its bound"
                    );
                    // d(-objective)/d(log_prob_new): the clipped branch is
                    // constant in the ratio, so its gradient vanishes.
                    let dl_dlp = if surr1 <= surr2 {
                        -ratio * a
                    } else {
                        clipped += 1;
                        0.0
                    };
                    if dl_dlp != 0.0 {
                        let mut upstream = vec![0.0; 2 * self.action_dim];
                        for k in 0..self.action_dim {
                            let l = log_std_raw[k].clamp(ls_lo, ls_hi);
                            let s = l.exp();
                            let z = (raw_actions[i][k] - mu[k]) / s;
                            upstream[k] = dl_dlp * z / s;
                            // No gradient through an active log-std clamp.
                            let at_bound =
                                log_std_raw[k] <= ls_lo || log_std_raw[k] >= ls_hi;
                            upstream[self.action_dim + k] =
                                if at_bound { 0.0 } else { dl_dlp * (z * z - 1.0) };
                        }
                        let g = self.actor.backward(&cache, &upstream).unwrap();
                        actor_grads.add(&g);
                    }

                    let vcache = self.critic.forward_cached(&states[i]).unwrap();
                    let v = vcache.output()[0];
                    let g = self.critic.backward(&vcache, &[2.0 * (v - returns[i])]).unwrap();
                    critic_grads.add(&g);
                }
                let scale = 1.0 / batch.len() as f64;
                actor_grads.scale(scale);
                critic_grads.scale(scale);
                apply_update(&mut self.actor, &actor_grads, &mut self.opt_actor);
                apply_update(&mut self.critic, &critic_grads, &mut self.opt_critic);
                stats.minibatches += 1;
            }
        }

        stats.mean_ratio = if ratio_count > 0 { ratio_sum / ratio_count as f64 } else { 1.0 };
        stats.clip_fraction =
            if ratio_count > 0 { clipped as f64 / ratio_count as f64 } else { 0.0 };
        for chain in &mut self.chains {
            chain.clear();
        }
        self.buffered = 0;
        stats
    }
}
