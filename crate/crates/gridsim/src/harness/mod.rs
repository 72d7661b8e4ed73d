//! Scenario orchestration: the sense -> estimate -> act -> learn -> evaluate
//! loop, the disturbance-free nominal companion run, resilience tracking,
//! and record emission.

pub mod record;
pub mod series;

use thiserror::Error;

pub use record::{
    read_records, timestamp_for_step, write_records, write_records_to_path, StepRecord,
};
pub use series::{export_series, export_series_to_path, SERIES_NAMES};

use crate::channel::{
    actuate, ActuationConfig, BusChannel, ChannelConfig, CloudBuffer, FdiConfig, Observation,
};
use crate::config::{ConfigError, LoadedNetwork, ScenarioConfig};
use crate::control::adp::{AdpAgent, AdpConfig, AdpMode};
use crate::control::dqn::{DqnAgent, DqnConfig};
use crate::control::ppo::{PpoAgent, PpoConfig, PpoDecision};
use crate::control::{
    hybrid_select, unified_cost, ActionSet, ControlAction, ControllerKind, Transition, ACTION_DIM,
};
use crate::devices::{
    battery_step, ev_demand, pv_power, sample_load, wind_power, Battery, EvCharger, LoadProfile,
    SolarUnit, WindUnit,
};
use crate::dynamics::{
    bus_frequency_hz, dae_step, DaeState, DynamicsError, GeneratorState, Machine,
};
use crate::grid::{
    check_voltage_limits, power_injection, solve_power_flow, GridError, NetworkModel,
    PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
};
use crate::rng::{stream, Stream};
use crate::state::{rated, BusState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("scenario must have at least one step")]
    NoSteps,
    #[error("{diverged} of {steps} steps failed to converge (> 1% budget); first failures: {sample}")]
    ExcessiveDivergence { diverged: usize, steps: usize, sample: String },
}

/// Everything a completed run produces.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub records: Vec<StepRecord>,
    /// Sum of the three per-controller instantaneous costs.
    pub cost_total: Vec<f64>,
    pub cost_adp: Vec<f64>,
    pub cost_ppo: Vec<f64>,
    pub cost_dqn: Vec<f64>,
    /// Global trailing-window resilience index per step.
    pub resilience: Vec<f64>,
    pub feeder_kw: Vec<f64>,
    pub solar_kw: Vec<f64>,
    pub wind_kw: Vec<f64>,
    pub load_kw: Vec<f64>,
    pub bus5_voltage: Vec<f64>,
    pub bus5_load_pu: Vec<f64>,
    pub bus5_pv_pu: Vec<f64>,
    pub bus5_wind_pu: Vec<f64>,
    /// Supervisor choice per step (`None` when every candidate failed or
    /// the hybrid was off).
    pub hybrid_selected: Vec<Option<ControllerKind>>,
    pub diverged_steps: usize,
    pub violation_log: Vec<String>,
}

/// Per-step data handed from a world to the coordinator.
struct StepOutcome {
    true_states: Vec<BusState>,
    observations: Vec<Observation>,
    cloud_views: Vec<BusState>,
    adp_values: Vec<f64>,
    adp_candidates: ActionSet,
    ppo_decisions: Vec<PpoDecision>,
    dqn_indices: Vec<usize>,
    dqn_q_values: Vec<f64>,
    applied: ActionSet,
    chosen: Option<ControllerKind>,
    cost_adp: f64,
    cost_ppo: f64,
    cost_dqn: f64,
    feeder_kw: f64,
    comm_ms: Vec<f64>,
    drop_rates: Vec<f64>,
    cloud_updated: bool,
    voltage_violations: usize,
}

/// Carry-over between steps: the decisions taken at step k, rewarded once
/// the step-(k+1) state is known.
struct Pending {
    features_edge: Vec<Vec<f64>>,
    features_cloud: Vec<Vec<f64>>,
    ppo_decisions: Vec<PpoDecision>,
    dqn_indices: Vec<usize>,
    dqn_actions: ActionSet,
    applied: ActionSet,
}

struct Agents {
    adp_edge: AdpAgent,
    adp_cloud: AdpAgent,
    ppo: PpoAgent,
    dqn: DqnAgent,
}

/// One simulated grid (the actual run and the nominal companion each own
/// a `World`).
struct World {
    cfg: ScenarioConfig,
    net: NetworkModel,
    machines: Vec<Machine>,
    dae: DaeState,
    profiles: Vec<LoadProfile>,
    pv_units: Vec<Option<SolarUnit>>,
    wind_units: Vec<Option<WindUnit>>,
    batteries: Vec<Option<Battery>>,
    evs: Vec<Option<EvCharger>>,
    channels: Vec<BusChannel>,
    clouds: Vec<CloudBuffer>,
    channel_cfg: ChannelConfig,
    fdi_cfg: FdiConfig,
    act_cfg: ActuationConfig,
    agents: Agents,
    enabled: (bool, bool, bool), // (adp, ppo, dqn)
    prev_applied: ActionSet,
    pending: Option<Pending>,
    // streams
    rng_load: Vec<Stream>,
    rng_pv: Vec<Stream>,
    rng_wind: Vec<Stream>,
    rng_ev: Vec<Stream>,
    rng_chan: Vec<Stream>,
    rng_chan_ms: Vec<Stream>,
    rng_act: Vec<Stream>,
    rng_ppo_act: Stream,
    rng_ppo_update: Stream,
    rng_dqn_act: Stream,
    rng_dqn_update: Stream,
    // bookkeeping
    drop_history: Vec<Vec<u32>>, // cumulative drop counts per bus
    diverged_steps: usize,
    divergence_notes: Vec<String>,
}

fn placement(list: &[usize], net: &NetworkModel) -> Vec<bool> {
    if list.is_empty() {
        return vec![true; net.n_buses()];
    }
    let mut mask = vec![false; net.n_buses()];
    for (i, bus) in net.buses.iter().enumerate() {
        if list.contains(&bus.id) {
            mask[i] = true;
        }
    }
    mask
}

impl World {
    fn new(cfg: &ScenarioConfig, loaded: &LoadedNetwork, seed: u64) -> Result<Self, SimError> {
        let net = loaded.net.clone();
        let n = net.n_buses();
        let dt_s = cfg.scenario.dt_s;
        let step_hours = dt_s / 3600.0;

        // Device roster.
        let mut profiles = Vec::with_capacity(n);
        for (p_base, q_base) in &loaded.base_loads_kw {
            let mut p = LoadProfile::new(*p_base, *q_base, cfg.devices.load_variability);
            p.noise_sigma = if *p_base > 0.0 { cfg.devices.load_noise_sigma_kw } else { 0.0 };
            p.step_jump_prob = cfg.devices.load_jump_prob;
            p.max_jump = cfg.devices.load_max_jump;
            p.step_hours = step_hours;
            p.start_hour = cfg.scenario.start_hour;
            profiles.push(p);
        }
        let pv_mask = placement(&cfg.devices.pv_buses, &net);
        let wind_mask = placement(&cfg.devices.wind_buses, &net);
        let batt_mask = placement(&cfg.devices.battery_buses, &net);
        let ev_mask = placement(&cfg.devices.ev_buses, &net);
        let pv_units: Vec<Option<SolarUnit>> = (0..n)
            .map(|b| {
                pv_mask[b].then(|| {
                    let mut u = SolarUnit::new(cfg.devices.pv_rated_kw);
                    u.dip_prob = cfg.devices.pv_dip_prob;
                    u.step_hours = step_hours;
                    u.start_hour = cfg.scenario.start_hour;
                    u
                })
            })
            .collect();
        let wind_units: Vec<Option<WindUnit>> = (0..n)
            .map(|b| wind_mask[b].then(|| WindUnit::new(cfg.devices.wind_rated_kw)))
            .collect();
        let mut rng_soc = stream(seed, "soc_init", 0);
        let batteries: Vec<Option<Battery>> = (0..n)
            .map(|b| {
                use rand::Rng;
                let soc0 = rng_soc.gen_range(cfg.devices.soc_init[0]..=cfg.devices.soc_init[1]);
                batt_mask[b].then(|| {
                    Battery::new(cfg.devices.battery_e_max_kwh, cfg.devices.battery_p_max_kw, soc0)
                })
            })
            .collect();
        let evs: Vec<Option<EvCharger>> = (0..n)
            .map(|b| {
                ev_mask[b].then(|| EvCharger {
                    demand_range: (40.0, 110.0),
                    efficiency: cfg.devices.ev_efficiency,
                })
            })
            .collect();

        // Cyber layer.
        let channel_cfg = ChannelConfig {
            delay_mean: cfg.channel.delay_mean,
            delay_sigma: cfg.channel.delay_sigma,
            max_delay: cfg.channel.max_delay,
            p_drop: cfg.channel.p_drop,
            sigma_v_voltage: cfg.channel.sigma_v_voltage,
            sigma_v_freq: cfg.channel.sigma_v_freq,
        };
        let mut fdi_cfg = FdiConfig {
            p_fdi: cfg.fdi.p_fdi,
            a_v_range: (cfg.fdi.a_v_min, cfg.fdi.a_v_max),
            a_f_range: (cfg.fdi.a_f_min, cfg.fdi.a_f_max),
            attack_windows: cfg.fdi.windows.iter().map(|w| (w[0], w[1])).collect(),
            severity: cfg.fdi.severity,
        };
        if !cfg.flags.attacks {
            fdi_cfg.attack_windows.clear();
            fdi_cfg.p_fdi = 0.0;
        } else if fdi_cfg.attack_windows.is_empty() {
            let count = ((cfg.fdi.bursts_per_2000_steps * cfg.scenario.steps as f64 / 2000.0)
                .round() as usize)
                .max(1);
            let mut rng = stream(seed, "fdi_windows", 0);
            fdi_cfg.attack_windows = FdiConfig::random_windows(
                cfg.scenario.steps,
                count,
                cfg.fdi.burst_len,
                &mut rng,
            );
        }
        let act_cfg = ActuationConfig { sigma_edge: cfg.actuation.sigma_edge, tau_inv: cfg.actuation.tau_inv_s };

        // Initial operating point: shaped base loads, no stochastic draws.
        let mut init_net = net.clone();
        for (b, (p_base, q_base)) in loaded.base_loads_kw.iter().enumerate() {
            let shape = profiles[b].shape(0);
            init_net.buses[b].p_load = init_net.kw_to_pu(p_base * shape);
            init_net.buses[b].q_load = init_net.kw_to_pu(q_base * shape);
        }
        let y0 = solve_power_flow(&init_net, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
        if !y0.converged {
            return Err(SimError::Grid(GridError::SingularJacobian(0)));
        }

        // Machines at equilibrium with auto-resolved setpoints.
        let mut machines = loaded.machines.clone();
        let (p_calc, _) = power_injection(&y0.v_mag, &y0.v_ang, &net.ybus)?;
        let mut machine_states = Vec::with_capacity(machines.len());
        for (m, bias) in machines.iter_mut().zip(&loaded.p_ref_bias) {
            let p_e = if m.bus == net.slack {
                p_calc[net.slack] - init_net.buses[net.slack].p_spec()
            } else {
                0.0
            };
            if let Some(bias) = bias {
                m.params.p_ref = p_e + bias;
            }
            let v_term = y0.v_mag[m.bus];
            machine_states.push(GeneratorState {
                delta: 0.0,
                omega: m.params.omega_nominal,
                e_fd: m.params.avr_gain * (m.params.v_ref - v_term),
                p_m: p_e,
            });
        }
        let dae = DaeState { x: machine_states, y: y0.clone() };

        // Initial observable state per bus.
        let init_states: Vec<BusState> = (0..n)
            .map(|b| BusState {
                voltage: y0.v_mag[b],
                angle: y0.v_ang[b],
                p_load: loaded.base_loads_kw[b].0 * profiles[b].shape(0),
                q_load: loaded.base_loads_kw[b].1 * profiles[b].shape(0),
                solar: 0.0,
                wind: 0.0,
                soc: batteries[b].as_ref().map_or(0.0, |bt| bt.soc),
                ev_load: 0.0,
                frequency: loaded.frequency_hz,
            })
            .collect();
        let channels: Vec<BusChannel> = init_states
            .iter()
            .map(|s| BusChannel::new(s.clone(), channel_cfg.max_delay))
            .collect();
        let clouds: Vec<CloudBuffer> = init_states
            .iter()
            .map(|s| CloudBuffer::new(s.clone(), cfg.channel.cloud_latency))
            .collect();

        // Agents.
        let feature_dim = 9;
        let adp_cfg = AdpConfig {
            gamma: cfg.adp.gamma,
            lr_critic: cfg.adp.lr_critic,
            lr_actor: cfg.adp.lr_actor,
            hidden: cfg.adp.hidden.clone(),
        };
        let ppo_cfg = PpoConfig {
            gamma: cfg.ppo.gamma,
            gae_lambda: cfg.ppo.gae_lambda,
            clip_eps: cfg.ppo.clip_eps,
            rollout_len: cfg.ppo.rollout_len,
            epochs: cfg.ppo.epochs,
            minibatch: cfg.ppo.minibatch,
            lr_actor: cfg.ppo.lr_actor,
            lr_critic: cfg.ppo.lr_critic,
            hidden: cfg.ppo.hidden.clone(),
            log_std_init: cfg.ppo.log_std_init,
            sigma_min: cfg.ppo.sigma_min,
        };
        let dqn_cfg = DqnConfig {
            gamma: cfg.dqn.gamma,
            lr: cfg.dqn.lr,
            action_grid: cfg.dqn.action_grid.clone(),
            epsilon_start: cfg.dqn.epsilon_start,
            epsilon_end: cfg.dqn.epsilon_end,
            epsilon_decay_steps: cfg.dqn.epsilon_decay_steps * n,
            replay_capacity: cfg.dqn.replay_capacity,
            batch_size: cfg.dqn.batch_size,
            target_sync: cfg.dqn.target_sync,
            hidden: cfg.dqn.hidden.clone(),
        };
        let agents = Agents {
            adp_edge: AdpAgent::new(
                feature_dim,
                ACTION_DIM,
                &adp_cfg,
                AdpMode::Edge,
                &mut stream(seed, "adp_edge_init", 0),
            ),
            adp_cloud: AdpAgent::new(
                feature_dim,
                ACTION_DIM,
                &adp_cfg,
                AdpMode::Cloud,
                &mut stream(seed, "adp_cloud_init", 0),
            ),
            ppo: PpoAgent::new(feature_dim, ACTION_DIM, n, ppo_cfg, &mut stream(seed, "ppo_init", 0)),
            dqn: DqnAgent::new(feature_dim, dqn_cfg, &mut stream(seed, "dqn_init", 0)),
        };
        let enabled = (
            cfg.flags.controllers.iter().any(|c| c == "adp"),
            cfg.flags.controllers.iter().any(|c| c == "ppo"),
            cfg.flags.controllers.iter().any(|c| c == "dqn"),
        );

        Ok(Self {
            cfg: cfg.clone(),
            machines,
            dae,
            profiles,
            pv_units,
            wind_units,
            batteries,
            evs,
            channels,
            clouds,
            channel_cfg,
            fdi_cfg,
            act_cfg,
            agents,
            enabled,
            prev_applied: vec![ControlAction::zeros(ACTION_DIM); n],
            pending: None,
            rng_load: (0..n).map(|b| stream(seed, "load", b as u64)).collect(),
            rng_pv: (0..n).map(|b| stream(seed, "pv", b as u64)).collect(),
            rng_wind: (0..n).map(|b| stream(seed, "wind", b as u64)).collect(),
            rng_ev: (0..n).map(|b| stream(seed, "ev", b as u64)).collect(),
            rng_chan: (0..n).map(|b| stream(seed, "chan", b as u64)).collect(),
            rng_chan_ms: (0..n).map(|b| stream(seed, "chan_ms", b as u64)).collect(),
            rng_act: (0..n).map(|b| stream(seed, "act", b as u64)).collect(),
            rng_ppo_act: stream(seed, "ppo_act", 0),
            rng_ppo_update: stream(seed, "ppo_update", 0),
            rng_dqn_act: stream(seed, "dqn_act", 0),
            rng_dqn_update: stream(seed, "dqn_update", 0),
            drop_history: vec![vec![0]; n],
            diverged_steps: 0,
            divergence_notes: Vec::new(),
            net,
        })
    }

    fn n(&self) -> usize {
        self.net.n_buses()
    }

    fn hour_of_day(&self, step: usize) -> f64 {
        (self.cfg.scenario.start_hour + step as f64 * self.cfg.scenario.dt_s / 3600.0)
            .rem_euclid(24.0)
    }

    /// Builds the injected-network model for the given device samples and
    /// the action in effect, plus the battery outcomes.
    #[allow(clippy::too_many_arguments)]
    fn injected_network(
        &self,
        loads: &[(f64, f64)],
        pv: &[f64],
        wind: &[f64],
        ev: &[f64],
        actions: &[ControlAction],
        batteries: &mut [Option<Battery>],
    ) -> (NetworkModel, Vec<f64>, Vec<(f64, f64)>) {
        use crate::control::action_index as ai;
        let mut work = self.net.clone();
        let dt_h = self.cfg.scenario.dt_s / 3600.0;
        let mut battery_kw = vec![0.0; self.n()];
        let mut served = vec![(0.0, 0.0); self.n()];
        for b in 0..self.n() {
            let a = &actions[b];
            let shed = a.values[ai::CURTAIL].clamp(0.0, 1.0) * self.cfg.action.shed_max_frac;
            let (p_srv, q_srv) = (loads[b].0 * (1.0 - shed), loads[b].1 * (1.0 - shed));
            served[b] = (p_srv, q_srv);
            if let Some(batt) = batteries[b].as_mut() {
                let cmd = a.values[ai::BATTERY]
                    * self.cfg.action.battery_scale
                    * self.cfg.devices.battery_p_max_kw;
                let (next, applied) = battery_step(batt, cmd, dt_h);
                *batt = next;
                battery_kw[b] = applied;
            }
            let q_cmd_kvar = a.values[ai::REACTIVE] * self.cfg.action.q_max_kvar;
            let charge = battery_kw[b].max(0.0);
            let discharge = (-battery_kw[b]).max(0.0);
            work.buses[b].p_load = work.kw_to_pu(p_srv + ev[b] + charge);
            work.buses[b].q_load = work.kw_to_pu(q_srv);
            work.buses[b].p_gen = work.kw_to_pu(pv[b] + wind[b] + discharge);
            work.buses[b].q_gen = work.kw_to_pu(q_cmd_kvar);
        }
        (work, battery_kw, served)
    }

    /// Advances the physical layer one step; on network failure keeps the
    /// previous algebraic state and reports `false`.
    fn advance_physics(&mut self, work: &NetworkModel) -> bool {
        if self.cfg.flags.dynamics {
            match dae_step(
                &self.dae,
                work,
                &self.machines,
                self.cfg.scenario.dt_s,
                DEFAULT_TOLERANCE,
                DEFAULT_MAX_ITER,
            ) {
                Ok(next) => {
                    self.dae = next;
                    true
                }
                Err(_) => false,
            }
        } else {
            match solve_power_flow(work, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER) {
                Ok(y) if y.converged => {
                    self.dae.y = y;
                    true
                }
                _ => false,
            }
        }
    }

    /// One-step disturbance-free rollout of a candidate action set on a
    /// copy of the grid; returns the summed next-state cost, or `None` if
    /// the shadow network fails.
    fn shadow_cost(
        &self,
        loads: &[(f64, f64)],
        pv: &[f64],
        wind: &[f64],
        ev: &[f64],
        candidate: &ActionSet,
    ) -> Option<f64> {
        let mut shadow_batteries = self.batteries.clone();
        let (work, _, served) =
            self.injected_network(loads, pv, wind, ev, candidate, &mut shadow_batteries);
        let next = if self.cfg.flags.dynamics {
            dae_step(
                &self.dae,
                &work,
                &self.machines,
                self.cfg.scenario.dt_s,
                DEFAULT_TOLERANCE,
                DEFAULT_MAX_ITER,
            )
            .ok()?
        } else {
            let y = solve_power_flow(&work, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).ok()?;
            if !y.converged {
                return None;
            }
            DaeState { x: self.dae.x.clone(), y }
        };
        let alpha = self.cfg.cost.alpha;
        let mut total = 0.0;
        for b in 0..self.n() {
            let f = if self.cfg.flags.dynamics {
                bus_frequency_hz(&self.net, &self.machines, &next.x, b)
            } else {
                50.0
            };
            let s = BusState {
                voltage: next.y.v_mag[b],
                angle: next.y.v_ang[b],
                p_load: served[b].0,
                q_load: served[b].1,
                solar: pv[b],
                wind: wind[b],
                soc: shadow_batteries[b].as_ref().map_or(0.0, |bt| bt.soc),
                ev_load: ev[b],
                frequency: f,
            };
            total += unified_cost(&s, &candidate[b], alpha);
        }
        Some(total)
    }

    fn step(&mut self, k: usize) -> Result<StepOutcome, SimError> {
        use crate::control::action_index as ai;
        use rand::Rng;
        let n = self.n();
        let alpha = self.cfg.cost.alpha;
        let hour = self.hour_of_day(k);

        // 1. exogenous device draws
        let mut loads = vec![(0.0, 0.0); n];
        let mut pv = vec![0.0; n];
        let mut wind = vec![0.0; n];
        let mut ev = vec![0.0; n];
        for b in 0..n {
            loads[b] = sample_load(&self.profiles[b], k, &mut self.rng_load[b]);
            if let Some(unit) = &self.pv_units[b] {
                pv[b] = pv_power(unit, k, &mut self.rng_pv[b]);
            }
            if let Some(unit) = &self.wind_units[b] {
                wind[b] = wind_power(unit, k, &mut self.rng_wind[b]);
            }
            if let Some(charger) = &self.evs[b] {
                let available =
                    hour >= self.cfg.devices.ev_window[0] && hour < self.cfg.devices.ev_window[1];
                let modulation = if available {
                    (self.prev_applied[b].values[ai::EV_MODULATION] + 1.0) / 2.0
                } else {
                    0.0
                };
                ev[b] = ev_demand(charger, k, modulation.clamp(0.0, 1.0), &mut self.rng_ev[b]);
            }
        }

        // 2-5. apply the in-effect action, update batteries, solve physics
        let actions_in_effect = self.prev_applied.clone();
        let mut batteries = self.batteries.clone();
        let (work, _battery_kw, served) =
            self.injected_network(&loads, &pv, &wind, &ev, &actions_in_effect, &mut batteries);
        let converged = self.advance_physics(&work);
        if converged {
            self.batteries = batteries;
        } else {
            self.diverged_steps += 1;
            if self.divergence_notes.len() < 50 {
                self.divergence_notes.push(format!("step {k}: network failed to converge"));
            }
            // Safe fallback: zero commands, batteries untouched, stale state.
            for a in &mut self.prev_applied {
                *a = ControlAction::zeros(ACTION_DIM);
            }
        }
        let y: PowerFlowSolution = self.dae.y.clone();
        let (p_calc, _) = power_injection(&y.v_mag, &y.v_ang, &self.net.ybus)?;
        let feeder_kw = self.net.pu_to_kw(p_calc[self.net.slack]);

        // 6. true per-bus states
        let true_states: Vec<BusState> = (0..n)
            .map(|b| BusState {
                voltage: y.v_mag[b],
                angle: y.v_ang[b],
                p_load: served[b].0,
                q_load: served[b].1,
                solar: pv[b],
                wind: wind[b],
                soc: self.batteries[b].as_ref().map_or(0.0, |bt| bt.soc),
                ev_load: ev[b],
                frequency: if self.cfg.flags.dynamics {
                    bus_frequency_hz(&self.net, &self.machines, &self.dae.x, b)
                } else {
                    50.0
                },
            })
            .collect();
        let voltage_violations = check_voltage_limits(&y, &self.net.buses).len();

        // 7. cyber layer: observe and cloud views
        let mut observations = Vec::with_capacity(n);
        let mut comm_ms = Vec::with_capacity(n);
        let mut drop_rates = Vec::with_capacity(n);
        for b in 0..n {
            self.channels[b].push_state(true_states[b].clone());
            self.clouds[b].push_state(true_states[b].clone());
            let obs = self.channels[b].observe(&self.channel_cfg, &self.fdi_cfg, k, &mut self.rng_chan[b]);
            let jitter: f64 = self.rng_chan_ms[b].gen_range(-5.0..=5.0);
            comm_ms.push((20.0 + obs.delay_applied as f64 * 100.0 / 3.0 + jitter).max(0.0));
            let prev = *self.drop_history[b].last().unwrap();
            self.drop_history[b].push(prev + u32::from(obs.dropped));
            let hist = &self.drop_history[b];
            let w = 100.min(hist.len() - 1);
            let rate = if w == 0 {
                0.0
            } else {
                (hist[hist.len() - 1] - hist[hist.len() - 1 - w]) as f64 / w as f64
            };
            drop_rates.push(rate);
            observations.push(obs);
        }
        let cloud_views: Vec<BusState> =
            (0..n).map(|b| self.clouds[b].view().clone()).collect();
        let features_edge: Vec<Vec<f64>> =
            observations.iter().map(|o| o.state.normalized().to_vec()).collect();
        let features_cloud: Vec<Vec<f64>> =
            cloud_views.iter().map(|s| s.normalized().to_vec()).collect();

        // 8. learn from the previous step's decisions
        let (adp_on, ppo_on, dqn_on) = self.enabled;
        if let Some(pending) = self.pending.take() {
            for b in 0..n {
                let applied_reward = -unified_cost(&true_states[b], &pending.applied[b], alpha);
                if adp_on {
                    let t = Transition {
                        state: pending.features_edge[b].clone(),
                        action: pending.applied[b].values.clone(),
                        reward: applied_reward,
                        next_state: features_edge[b].clone(),
                        done: false,
                    };
                    self.agents.adp_edge.update(&t);
                    let tc = Transition {
                        state: pending.features_cloud[b].clone(),
                        action: pending.applied[b].values.clone(),
                        reward: applied_reward,
                        next_state: features_cloud[b].clone(),
                        done: false,
                    };
                    self.agents.adp_cloud.update(&tc);
                }
                if ppo_on {
                    let r = -unified_cost(&true_states[b], &pending.ppo_decisions[b].action, alpha);
                    self.agents.ppo.push(
                        b,
                        &pending.features_edge[b],
                        &pending.ppo_decisions[b],
                        r,
                        &features_edge[b],
                        false,
                    );
                }
                if dqn_on {
                    let mut r = -unified_cost(&true_states[b], &pending.dqn_actions[b], alpha);
                    if self.cfg.cost.dqn_violation_penalty > 0.0 {
                        let v = true_states[b].voltage;
                        let bus = &self.net.buses[b];
                        if v < bus.v_min || v > bus.v_max {
                            r -= self.cfg.cost.dqn_violation_penalty;
                        }
                    }
                    self.agents.dqn.push(
                        pending.features_edge[b].clone(),
                        pending.dqn_indices[b],
                        r,
                        features_edge[b].clone(),
                        false,
                    );
                }
            }
            if ppo_on && self.agents.ppo.ready() {
                self.agents.ppo.update(&mut self.rng_ppo_update);
            }
            if dqn_on && (self.cfg.dqn.update_every == 0 || k % self.cfg.dqn.update_every.max(1) == 0)
            {
                self.agents.dqn.update(&mut self.rng_dqn_update);
            }
        }
        let cloud_updated = adp_on
            && self.cfg.channel.cloud_sync_period > 0
            && k > 0
            && k % self.cfg.channel.cloud_sync_period == 0;
        if cloud_updated {
            let cloud = self.agents.adp_cloud.clone();
            self.agents.adp_edge.adopt_critic(&cloud);
        }

        // 9. act
        let mut adp_candidates: ActionSet = Vec::with_capacity(n);
        let mut adp_values = Vec::with_capacity(n);
        let mut ppo_decisions: Vec<PpoDecision> = Vec::with_capacity(n);
        let mut dqn_indices = Vec::with_capacity(n);
        let mut dqn_q_values = Vec::with_capacity(n);
        let mut dqn_actions: ActionSet = Vec::with_capacity(n);
        for b in 0..n {
            if adp_on {
                adp_candidates.push(self.agents.adp_edge.act(&features_edge[b]));
                adp_values.push(self.agents.adp_edge.value(&features_edge[b]));
            } else {
                adp_candidates.push(ControlAction::zeros(ACTION_DIM));
                adp_values.push(0.0);
            }
            if ppo_on {
                let d = self.agents.ppo.act(&features_edge[b], self.channel_cfg.p_drop, &mut self.rng_ppo_act);
                ppo_decisions.push(d);
            } else {
                ppo_decisions.push(PpoDecision {
                    action: ControlAction::zeros(ACTION_DIM),
                    raw_sample: vec![0.0; ACTION_DIM],
                    log_prob: 0.0,
                    value: 0.0,
                    zeroed: false,
                });
            }
            if dqn_on {
                let (idx, act) = self.agents.dqn.act(&features_edge[b], &mut self.rng_dqn_act);
                let q = self.agents.dqn.q_values(&features_edge[b]);
                dqn_q_values.push(q.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                dqn_indices.push(idx);
                dqn_actions.push(act);
            } else {
                dqn_q_values.push(0.0);
                dqn_indices.push(0);
                dqn_actions.push(ControlAction::zeros(ACTION_DIM));
            }
        }
        let ppo_actions: ActionSet = ppo_decisions.iter().map(|d| d.action.clone()).collect();

        // 10. per-controller instantaneous costs on the true state
        let sum_cost = |actions: &ActionSet| -> f64 {
            true_states
                .iter()
                .zip(actions)
                .map(|(s, a)| unified_cost(s, a, alpha))
                .sum()
        };
        let cost_adp = if adp_on { sum_cost(&adp_candidates) } else { 0.0 };
        let cost_ppo = if ppo_on { sum_cost(&ppo_actions) } else { 0.0 };
        let cost_dqn = if dqn_on { sum_cost(&dqn_actions) } else { 0.0 };

        // 11. supervisor
        let mut candidates: Vec<(ControllerKind, ActionSet)> = Vec::new();
        if adp_on {
            candidates.push((ControllerKind::Adp, adp_candidates.clone()));
        }
        if ppo_on {
            candidates.push((ControllerKind::Ppo, ppo_actions.clone()));
        }
        if dqn_on {
            candidates.push((ControllerKind::Dqn, dqn_actions.clone()));
        }
        let (chosen, chosen_actions) = if candidates.is_empty() {
            (None, vec![ControlAction::zeros(ACTION_DIM); n])
        } else if self.cfg.flags.hybrid && candidates.len() > 1 {
            let choice = hybrid_select(&candidates, |cand| {
                self.shadow_cost(&loads, &pv, &wind, &ev, cand)
            });
            (choice.chosen, choice.actions)
        } else {
            (Some(candidates[0].0), candidates[0].1.clone())
        };

        // 12. actuation path: edge noise plus inverter lag
        let mut applied: ActionSet = Vec::with_capacity(n);
        for b in 0..n {
            let noisy = actuate(
                &self.act_cfg,
                &chosen_actions[b].values,
                &self.prev_applied[b].values,
                self.cfg.scenario.dt_s,
                &mut self.rng_act[b],
            );
            applied.push(ControlAction::from_values(noisy));
        }
        self.prev_applied = applied.clone();

        self.pending = Some(Pending {
            features_edge,
            features_cloud,
            ppo_decisions: ppo_decisions.clone(),
            dqn_indices: dqn_indices.clone(),
            dqn_actions,
            applied: applied.clone(),
        });

        Ok(StepOutcome {
            true_states,
            observations,
            cloud_views,
            adp_values,
            adp_candidates,
            ppo_decisions,
            dqn_indices,
            dqn_q_values,
            applied,
            chosen,
            cost_adp,
            cost_ppo,
            cost_dqn,
            feeder_kw,
            comm_ms,
            drop_rates,
            cloud_updated,
            voltage_violations,
        })
    }
}

/// The nominal companion configuration: identical seeds and base draws,
/// with measurement noise, packet drops, FDI, jump/dip events, and edge
/// actuation noise disabled.
fn nominal_variant(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut nominal = cfg.clone();
    nominal.flags.attacks = false;
    nominal.channel.p_drop = 0.0;
    nominal.channel.sigma_v_voltage = 0.0;
    nominal.channel.sigma_v_freq = 0.0;
    nominal.devices.load_jump_prob = 0.0;
    nominal.devices.pv_dip_prob = 0.0;
    nominal.actuation.sigma_edge = 0.0;
    nominal.fdi.windows.clear();
    nominal
}

/// Runs the full scenario: the actual world and its nominal companion in
/// lockstep, producing records, series, and resilience trajectories.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationResult, SimError> {
    let steps = cfg.scenario.steps;
    if steps == 0 {
        return Err(SimError::NoSteps);
    }
    let seed = cfg.scenario.seed;
    let loaded = crate::config::load_network(&cfg.network.file)?;
    let n = loaded.net.n_buses();

    let mut actual = World::new(cfg, &loaded, seed)?;
    let mut nominal = World::new(&nominal_variant(cfg), &loaded, seed)?;

    if cfg.flags.pretrain_steps > 0 {
        let mut pre_cfg = nominal_variant(cfg);
        pre_cfg.scenario.steps = cfg.flags.pretrain_steps;
        let mut pre = World::new(&pre_cfg, &loaded, seed)?;
        for k in 0..cfg.flags.pretrain_steps {
            let _ = pre.step(k)?;
        }
        actual.agents = Agents {
            adp_edge: pre.agents.adp_edge.clone(),
            adp_cloud: pre.agents.adp_cloud.clone(),
            ppo: pre.agents.ppo.clone(),
            dqn: pre.agents.dqn.clone(),
        };
        nominal.agents = Agents {
            adp_edge: pre.agents.adp_edge.clone(),
            adp_cloud: pre.agents.adp_cloud.clone(),
            ppo: pre.agents.ppo.clone(),
            dqn: pre.agents.dqn.clone(),
        };
    }

    let window = cfg.output.resilience_window.max(1);
    // Trailing-window deviation energy via prefix sums, per bus.
    let mut num_prefix: Vec<Vec<f64>> = vec![vec![0.0]; n];
    let mut den_prefix: Vec<Vec<f64>> = vec![vec![0.0]; n];

    let mut result = SimulationResult {
        records: Vec::with_capacity(steps * n),
        cost_total: Vec::with_capacity(steps),
        cost_adp: Vec::with_capacity(steps),
        cost_ppo: Vec::with_capacity(steps),
        cost_dqn: Vec::with_capacity(steps),
        resilience: Vec::with_capacity(steps),
        feeder_kw: Vec::with_capacity(steps),
        solar_kw: Vec::with_capacity(steps),
        wind_kw: Vec::with_capacity(steps),
        load_kw: Vec::with_capacity(steps),
        bus5_voltage: Vec::with_capacity(steps),
        bus5_load_pu: Vec::with_capacity(steps),
        bus5_pv_pu: Vec::with_capacity(steps),
        bus5_wind_pu: Vec::with_capacity(steps),
        hybrid_selected: Vec::with_capacity(steps),
        diverged_steps: 0,
        violation_log: Vec::new(),
    };
    let bus5 = loaded
        .net
        .buses
        .iter()
        .position(|b| b.id == 5)
        .unwrap_or(usize::min(4, n - 1));
    let mut violation_steps = 0usize;
    let mut violation_total = 0usize;
    let mut violation_peak = 0usize;

    for k in 0..steps {
        let out_a = actual.step(k)?;
        let out_n = nominal.step(k)?;

        // Resilience bookkeeping on normalized true states.
        for b in 0..n {
            let xa = out_a.true_states[b].normalized();
            let xn = out_n.true_states[b].normalized();
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, m) in xa.iter().zip(&xn) {
                num += (a - m) * (a - m);
                den += m * m;
            }
            let np = &mut num_prefix[b];
            let dp = &mut den_prefix[b];
            np.push(np.last().unwrap() + num);
            dp.push(dp.last().unwrap() + den);
        }
        let w = window.min(k + 1);
        let mut g_num = 0.0;
        let mut g_den = 0.0;
        let mut bus_r = vec![1.0; n];
        for b in 0..n {
            let np = &num_prefix[b];
            let dp = &den_prefix[b];
            let num = np[k + 1] - np[k + 1 - w];
            let den = dp[k + 1] - dp[k + 1 - w];
            g_num += num;
            g_den += den;
            bus_r[b] = if den > 1e-12 { 1.0 - num / den } else { 1.0 };
        }
        let global_r = if g_den > 1e-12 { 1.0 - g_num / g_den } else { 1.0 };

        // Series.
        result.cost_adp.push(out_a.cost_adp);
        result.cost_ppo.push(out_a.cost_ppo);
        result.cost_dqn.push(out_a.cost_dqn);
        result.cost_total.push(out_a.cost_adp + out_a.cost_ppo + out_a.cost_dqn);
        result.resilience.push(global_r);
        result.feeder_kw.push(out_a.feeder_kw);
        result.solar_kw.push(out_a.true_states.iter().map(|s| s.solar).sum());
        result.wind_kw.push(out_a.true_states.iter().map(|s| s.wind).sum());
        result.load_kw.push(out_a.true_states.iter().map(|s| s.p_load).sum());
        result.bus5_voltage.push(out_a.true_states[bus5].voltage);
        result.bus5_load_pu.push(out_a.true_states[bus5].p_load / rated::P_LOAD_KW);
        result.bus5_pv_pu.push(out_a.true_states[bus5].solar / rated::SOLAR_KW);
        result.bus5_wind_pu.push(out_a.true_states[bus5].wind / rated::WIND_KW);
        result.hybrid_selected.push(out_a.chosen);
        if out_a.voltage_violations > 0 {
            violation_steps += 1;
            violation_total += out_a.voltage_violations;
            violation_peak = violation_peak.max(out_a.voltage_violations);
        }

        // Records.
        let timestamp = timestamp_for_step(
            &cfg.scenario.start_date,
            cfg.scenario.start_hour,
            cfg.scenario.dt_s,
            k,
        );
        let alpha = cfg.cost.alpha;
        for b in 0..n {
            let obs = &out_a.observations[b].state;
            let cloud = &out_a.cloud_views[b];
            let ppo_first = out_a.ppo_decisions[b].action.values.first().copied().unwrap_or(0.0);
            let ppo_bin = (((ppo_first + 1.0) / 2.0 * 4.0).floor() as i64).clamp(0, 3) as usize;
            let ppo_reward =
                -unified_cost(&out_a.true_states[b], &out_a.ppo_decisions[b].action, alpha);
            result.records.push(StepRecord {
                timestamp: timestamp.clone(),
                bus_id: actual.net.buses[b].id,
                voltage: obs.voltage,
                angle: obs.angle,
                load_p: obs.p_load,
                load_q: obs.q_load,
                solar: obs.solar,
                wind: obs.wind,
                soc_pct: obs.soc * 100.0,
                ev_load: obs.ev_load,
                frequency: obs.frequency,
                feeder_kw: out_a.feeder_kw,
                comm_delay_ms: out_a.comm_ms[b],
                packet_loss_rate: out_a.drop_rates[b],
                fdi_attack: u8::from(out_a.observations[b].fdi_active),
                fdi_severity: out_a.observations[b].fdi_severity,
                measurement_error: out_a.observations[b].measurement_error,
                adp_value: out_a.adp_values[b],
                adp_action: out_a.adp_candidates[b].rms(),
                ppo_action_bin: ppo_bin,
                ppo_reward,
                dqn_q: out_a.dqn_q_values[b],
                dqn_action: out_a.dqn_indices[b],
                resilience: bus_r[b],
                edge_state: record::state_cell(obs.voltage, obs.angle),
                cloud_state: record::state_cell(cloud.voltage, cloud.angle),
                edge_action: out_a.applied[b].rms(),
                cloud_update: u8::from(out_a.cloud_updated),
                ppo_action_value: ppo_first,
            });
        }
    }

    result.diverged_steps = actual.diverged_steps;
    if violation_steps > 0 {
        result.violation_log.push(format!(
            "voltage-limit violations on {violation_steps} of {steps} steps ({violation_total} bus-steps, peak {violation_peak} buses)"
        ));
    }
    result.violation_log.extend(actual.divergence_notes.iter().cloned());
    if actual.diverged_steps * 100 > steps {
        return Err(SimError::ExcessiveDivergence {
            diverged: actual.diverged_steps,
            steps,
            sample: actual.divergence_notes.join("; "),
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg(steps: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::bundled_default();
        cfg.scenario.steps = steps;
        cfg.scenario.seed = 7;
        cfg
    }

    #[test]
    fn zero_steps_is_rejected() {
        let cfg = quick_cfg(0);
        assert!(matches!(run_scenario(&cfg), Err(SimError::NoSteps)));
    }

    #[test]
    fn record_count_is_steps_times_buses() {
        let cfg = quick_cfg(12);
        let result = run_scenario(&cfg).unwrap();
        assert_eq!(result.records.len(), 12 * 33);
        assert_eq!(result.cost_total.len(), 12);
        assert_eq!(result.resilience.len(), 12);
        for (i, r) in result.records.iter().take(33).enumerate() {
            assert_eq!(r.bus_id, i + 1);
            assert_eq!(r.timestamp, "11/1/2025 0:00");
        }
    }

    #[test]
    fn disturbance_free_run_scores_unit_resilience() {
        let mut cfg = quick_cfg(20);
        // Match the nominal variant exactly: no stochastic disturbances.
        cfg.flags.attacks = false;
        cfg.channel.p_drop = 0.0;
        cfg.channel.sigma_v_voltage = 0.0;
        cfg.channel.sigma_v_freq = 0.0;
        cfg.devices.load_jump_prob = 0.0;
        cfg.devices.pv_dip_prob = 0.0;
        cfg.actuation.sigma_edge = 0.0;
        let result = run_scenario(&cfg).unwrap();
        for (k, r) in result.resilience.iter().enumerate() {
            assert_eq!(*r, 1.0, "resilience at step {k}");
        }
        for rec in &result.records {
            assert_eq!(rec.resilience, 1.0);
        }
    }

    #[test]
    fn total_cost_is_sum_of_parts() {
        let cfg = quick_cfg(10);
        let result = run_scenario(&cfg).unwrap();
        for k in 0..10 {
            let sum = result.cost_adp[k] + result.cost_ppo[k] + result.cost_dqn[k];
            assert!((result.cost_total[k] - sum).abs() < 1e-12);
            assert!(result.cost_total[k] >= result.cost_ppo[k]);
            assert!(result.cost_total[k] >= result.cost_adp[k]);
            assert!(result.cost_total[k] >= result.cost_dqn[k]);
        }
    }

    #[test]
    fn controller_subset_runs_without_hybrid() {
        let mut cfg = quick_cfg(8);
        cfg.flags.controllers = vec!["dqn".into()];
        cfg.flags.hybrid = false;
        let result = run_scenario(&cfg).unwrap();
        assert_eq!(result.hybrid_selected[0], Some(ControllerKind::Dqn));
        for k in 0..8 {
            assert_eq!(result.cost_adp[k], 0.0);
            assert_eq!(result.cost_ppo[k], 0.0);
        }
    }
}
