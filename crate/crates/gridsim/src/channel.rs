//! The observation and actuation corruption pipeline: delay buffer, packet
//! drop, measurement noise, FDI injection, edge actuation noise, and the
//! first-order inverter lag.
//!
//! Each call to [`BusChannel::observe`] consumes a fixed set of draws from
//! its stream so that disabling a mechanism (probability zero) never shifts
//! the remaining randomness.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::Stream;
use crate::state::BusState;

/// Measurement-channel parameters.
#[derive(Debug, Clone)]
pub struct ChannelConfig {
    /// Mean of the truncated-Gaussian delay draw, steps.
    pub delay_mean: f64,
    /// Standard deviation of the delay draw, steps.
    pub delay_sigma: f64,
    /// Upper delay bound, steps (support is `{0..=max_delay}`).
    pub max_delay: usize,
    /// Packet-drop probability.
    pub p_drop: f64,
    /// Voltage measurement noise, per-unit.
    pub sigma_v_voltage: f64,
    /// Frequency measurement noise, Hz.
    pub sigma_v_freq: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            delay_mean: 1.0,
            delay_sigma: 1.0,
            max_delay: 3,
            p_drop: 0.05,
            sigma_v_voltage: 0.005,
            sigma_v_freq: 0.02,
        }
    }
}

impl ChannelConfig {
    /// Identity channel: no delay, no drops, no noise.
    pub fn identity() -> Self {
        Self {
            delay_mean: 0.0,
            delay_sigma: 0.0,
            max_delay: 0,
            p_drop: 0.0,
            sigma_v_voltage: 0.0,
            sigma_v_freq: 0.0,
        }
    }

    /// Probability mass of each delay value under round-then-clamp of the
    /// Gaussian draw.
    pub fn delay_probabilities(&self) -> Vec<f64> {
        let n = self.max_delay;
        if self.delay_sigma == 0.0 {
            let fixed = (self.delay_mean.round().max(0.0) as usize).min(n);
            let mut p = vec![0.0; n + 1];
            p[fixed] = 1.0;
            return p;
        }
        let z = |x: f64| (x - self.delay_mean) / self.delay_sigma;
        (0..=n)
            .map(|k| {
                let hi = if k == n { 1.0 } else { normal_cdf(z(k as f64 + 0.5)) };
                let lo = if k == 0 { 0.0 } else { normal_cdf(z(k as f64 - 0.5)) };
                hi - lo
            })
            .collect()
    }
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (absolute error below 1.5e-7, ample for distribution checks).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// False-data-injection parameters.
#[derive(Debug, Clone)]
pub struct FdiConfig {
    /// Per-step injection probability inside an attack window.
    pub p_fdi: f64,
    /// Voltage attack magnitude range, per-unit.
    pub a_v_range: (f64, f64),
    /// Frequency attack magnitude range, Hz.
    pub a_f_range: (f64, f64),
    /// Non-overlapping attack windows as `[start, end)` step intervals.
    pub attack_windows: Vec<(usize, usize)>,
    /// Scale applied to drawn magnitudes (result clamped back into range).
    pub severity: f64,
}

impl Default for FdiConfig {
    fn default() -> Self {
        Self {
            p_fdi: 0.04,
            a_v_range: (-0.03, 0.03),
            a_f_range: (-0.15, 0.18),
            attack_windows: Vec::new(),
            severity: 1.0,
        }
    }
}

impl FdiConfig {
    pub fn disabled() -> Self {
        Self { p_fdi: 0.0, attack_windows: Vec::new(), ..Self::default() }
    }

    pub fn window_active(&self, step: usize) -> bool {
        self.attack_windows.iter().any(|&(s, e)| step >= s && step < e)
    }

    /// Draws `count` non-overlapping windows of `length` steps inside
    /// `[0, horizon)` by rejection, spaced at least one window apart.
    pub fn random_windows(
        horizon: usize,
        count: usize,
        length: usize,
        rng: &mut Stream,
    ) -> Vec<(usize, usize)> {
        let mut windows: Vec<(usize, usize)> = Vec::new();
        let mut attempts = 0;
        while windows.len() < count && attempts < 10_000 {
            attempts += 1;
            if horizon <= length {
                break;
            }
            let start = rng.gen_range(0..horizon - length);
            let end = start + length;
            let clashes = windows
                .iter()
                .any(|&(s, e)| start < e + length && s < end + length);
            if !clashes {
                windows.push((start, end));
            }
        }
        windows.sort_unstable();
        windows
    }
}

/// A delivered observation: the state as received plus channel metadata.
#[derive(Debug, Clone)]
pub struct Observation {
    pub state: BusState,
    /// Delay applied to the delivered state, steps.
    pub delay_applied: usize,
    pub dropped: bool,
    pub fdi_active: bool,
    /// Severity multiplier when an injection fired, else zero.
    pub fdi_severity: f64,
    /// The voltage measurement-noise draw that was applied, per-unit.
    pub measurement_error: f64,
}

/// Per-bus channel state: the true-state ring and the last delivered
/// observation (replayed verbatim on packet drops).
#[derive(Debug, Clone)]
pub struct BusChannel {
    history: VecDeque<BusState>,
    depth: usize,
    last_delivered: Observation,
}

impl BusChannel {
    /// Pre-fills the ring with the initial state so early observations with
    /// maximal delay are well-defined.
    pub fn new(initial: BusState, max_delay: usize) -> Self {
        let depth = max_delay + 1;
        let mut history = VecDeque::with_capacity(depth);
        for _ in 0..depth {
            history.push_back(initial.clone());
        }
        let last_delivered = Observation {
            state: initial,
            delay_applied: 0,
            dropped: false,
            fdi_active: false,
            fdi_severity: 0.0,
            measurement_error: 0.0,
        };
        Self { history, depth, last_delivered }
    }

    /// Pushes the true state for the current step (newest first).
    pub fn push_state(&mut self, state: BusState) {
        self.history.push_front(state);
        while self.history.len() > self.depth {
            self.history.pop_back();
        }
    }

    /// Runs the corruption pipeline for the current step and returns the
    /// delivered observation.
    pub fn observe(
        &mut self,
        cfg: &ChannelConfig,
        fdi: &FdiConfig,
        step: usize,
        rng: &mut Stream,
    ) -> Observation {
        // Fixed draw schedule, independent of configuration.
        let delay_draw: f64 = Normal::new(cfg.delay_mean, cfg.delay_sigma.max(0.0))
            .map(|d| d.sample(rng))
            .unwrap_or(cfg.delay_mean);
        let u_drop: f64 = rng.gen();
        let v_noise: f64 = Normal::new(0.0, cfg.sigma_v_voltage).unwrap().sample(rng);
        let f_noise: f64 = Normal::new(0.0, cfg.sigma_v_freq).unwrap().sample(rng);
        let u_fdi: f64 = rng.gen();
        let a_v_raw: f64 = rng.gen_range(fdi.a_v_range.0..=fdi.a_v_range.1);
        let a_f_raw: f64 = rng.gen_range(fdi.a_f_range.0..=fdi.a_f_range.1);

        if u_drop < cfg.p_drop {
            let mut obs = self.last_delivered.clone();
            obs.dropped = true;
            self.last_delivered = obs.clone();
            return obs;
        }

        let tau = (delay_draw.round().max(0.0) as usize).min(cfg.max_delay);
        let idx = tau.min(self.history.len() - 1);
        let mut state = self.history[idx].clone();
        state.voltage += v_noise;
        state.frequency += f_noise;

        let fdi_fires = fdi.window_active(step) && u_fdi < fdi.p_fdi;
        if fdi_fires {
            let a_v = (a_v_raw * fdi.severity).clamp(fdi.a_v_range.0, fdi.a_v_range.1);
            let a_f = (a_f_raw * fdi.severity).clamp(fdi.a_f_range.0, fdi.a_f_range.1);
            state.voltage += a_v;
            state.frequency += a_f;
        }

        let obs = Observation {
            state,
            delay_applied: tau,
            dropped: false,
            fdi_active: fdi_fires,
            fdi_severity: if fdi_fires { fdi.severity } else { 0.0 },
            measurement_error: v_noise,
        };
        self.last_delivered = obs.clone();
        obs
    }

    pub fn last_delivered(&self) -> &Observation {
        &self.last_delivered
    }
}

/// Actuation-path parameters: edge noise and the inverter lag constant.
#[derive(Debug, Clone)]
pub struct ActuationConfig {
    /// Edge control-noise standard deviation, action units.
    pub sigma_edge: f64,
    /// Inverter first-order time constant, seconds.
    pub tau_inv: f64,
}

impl Default for ActuationConfig {
    fn default() -> Self {
        Self { sigma_edge: 0.01, tau_inv: 0.040 }
    }
}

/// Applies edge noise and the discrete first-order inverter lag to a
/// commanded action vector. The filter coefficient `dt/tau` is capped at 1
/// so the discretization stays stable for any `dt`.
pub fn actuate(
    cfg: &ActuationConfig,
    commanded: &[f64],
    prev_applied: &[f64],
    dt: f64,
    rng: &mut Stream,
) -> Vec<f64> {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(commanded.len(), prev_applied.len(), "action dimension mismatch");
    let alpha = (dt / cfg.tau_inv).min(1.0);
    let noise = Normal::new(0.0, cfg.sigma_edge).unwrap();
    commanded
        .iter()
        .zip(prev_applied)
        .map(|(c, p)| {
            let noisy = c + noise.sample(rng);
            p + alpha * (noisy - p)
        })
        .collect()
}

/// Fixed-latency clean view of the true state, as seen by the cloud tier.
#[derive(Debug, Clone)]
pub struct CloudBuffer {
    history: VecDeque<BusState>,
    latency: usize,
}

impl CloudBuffer {
    pub fn new(initial: BusState, latency: usize) -> Self {
        let mut history = VecDeque::with_capacity(latency + 1);
        for _ in 0..=latency {
            history.push_back(initial.clone());
        }
        Self { history, latency }
    }

    pub fn push_state(&mut self, state: BusState) {
        self.history.push_front(state);
        while self.history.len() > self.latency + 1 {
            self.history.pop_back();
        }
    }

    /// The delayed clean state (no noise, no FDI).
    pub fn view(&self) -> &BusState {
        let idx = self.latency.min(self.history.len() - 1);
        &self.history[idx]
    }
}

/// Splits one step's information into the local corrupted view and the
/// delayed clean cloud view.
pub fn edge_cloud_views<'a>(
    observation: &'a Observation,
    cloud: &'a CloudBuffer,
) -> (&'a BusState, &'a BusState) {
    (&observation.state, cloud.view())
}
