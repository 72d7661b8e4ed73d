//! Network and scenario configuration files (TOML), with bundled defaults
//! for the 33-bus feeder and the reference experiment.

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{GeneratorParams, Machine};
use crate::grid::{Bus, BusKind, GridError, Line, NetworkModel};

/// The bundled 33-bus network definition.
pub const IEEE33_TOML: &str = include_str!("../data/ieee33.toml");
/// The bundled default scenario.
pub const DEFAULT_SCENARIO_TOML: &str = include_str!("../data/scenario_default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("network definition invalid: {0}")]
    Network(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Network definition file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
pub struct NetworkFile {
    pub system: SystemSection,
    #[serde(default)]
    pub generator: Vec<GeneratorSection>,
    pub bus: Vec<BusSection>,
    pub line: Vec<LineSection>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SystemSection {
    pub base_mva: f64,
    pub base_kv: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    /// Substation transformer impedance, folded into the first line.
    #[serde(default)]
    pub transformer_r_pu: f64,
    #[serde(default)]
    pub transformer_x_pu: f64,
}

fn default_frequency() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct GeneratorSection {
    /// Bus id (1-based, as in the file).
    pub bus: usize,
    pub inertia: f64,
    pub damping: f64,
    pub avr_gain: f64,
    pub avr_time_s: f64,
    pub gov_time_s: f64,
    pub droop: f64,
    pub v_ref_pu: f64,
    /// Fixed mechanical setpoint; when omitted the harness resolves it from
    /// the initial solve plus `p_ref_bias_pu`.
    pub p_ref_pu: Option<f64>,
    #[serde(default)]
    pub p_ref_bias_pu: f64,
    pub omega_nominal: f64,
    pub x_internal_pu: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BusSection {
    pub id: usize,
    pub kind: String,
    #[serde(default)]
    pub p_load_kw: f64,
    #[serde(default)]
    pub q_load_kvar: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

#[derive(Debug, Clone, Deserialize)]
pub struct LineSection {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default = "default_length")]
    pub length_km: f64,
}

fn default_length() -> f64 {
    1.0
}

/// A parsed network: the solver model, machine placements, and the base
/// load profile in kW taken from the bus table.
#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub net: NetworkModel,
    pub machines: Vec<Machine>,
    /// Per-machine `p_ref` bias for auto-resolved setpoints (`None` when the
    /// file pins `p_ref_pu` explicitly).
    pub p_ref_bias: Vec<Option<f64>>,
    /// Base (P kW, Q kVAr) load per bus, in bus order.
    pub base_loads_kw: Vec<(f64, f64)>,
    pub frequency_hz: f64,
}

/// Parses a network definition document.
pub fn parse_network(text: &str) -> Result<LoadedNetwork, ConfigError> {
    let file: NetworkFile = toml::from_str(text)?;
    let z_base = file.system.base_kv * file.system.base_kv / file.system.base_mva;

    let mut id_to_index = std::collections::BTreeMap::new();
    let mut buses = Vec::with_capacity(file.bus.len());
    let mut base_loads_kw = Vec::with_capacity(file.bus.len());
    for (i, b) in file.bus.iter().enumerate() {
        let kind = match b.kind.as_str() {
            "slack" => BusKind::Slack,
            "pq" => BusKind::Pq,
            other => {
                return Err(ConfigError::Network(format!(
                    "bus {}: unknown kind {other:?} (expected \"slack\" or \"pq\")",
                    b.id
                )))
            }
        };
        if id_to_index.insert(b.id, i).is_some() {
            return Err(ConfigError::Network(format!("duplicate bus id {}", b.id)));
        }
        let mut bus = Bus::new(b.id, kind);
        bus.p_load = b.p_load_kw / (file.system.base_mva * 1000.0);
        bus.q_load = b.q_load_kvar / (file.system.base_mva * 1000.0);
        bus.v_min = b.v_min;
        bus.v_max = b.v_max;
        if bus.v_min >= bus.v_max {
            return Err(ConfigError::Network(format!("bus {}: v_min >= v_max", b.id)));
        }
        buses.push(bus);
        base_loads_kw.push((b.p_load_kw, b.q_load_kvar));
    }

    let lookup = |id: usize| -> Result<usize, ConfigError> {
        id_to_index
            .get(&id)
            .copied()
            .ok_or_else(|| ConfigError::Network(format!("line references unknown bus id {id}")))
    };

    let mut lines = Vec::with_capacity(file.line.len());
    for (i, l) in file.line.iter().enumerate() {
        let mut r = l.r_ohm / z_base;
        let mut x = l.x_ohm / z_base;
        if i == 0 {
            r += file.system.transformer_r_pu;
            x += file.system.transformer_x_pu;
        }
        lines.push(Line {
            from: lookup(l.from)?,
            to: lookup(l.to)?,
            resistance: r,
            reactance: x,
            length_km: l.length_km,
        });
    }

    let mut machines = Vec::new();
    let mut p_ref_bias = Vec::new();
    for g in &file.generator {
        let params = GeneratorParams {
            inertia: g.inertia,
            damping: g.damping,
            avr_gain: g.avr_gain,
            avr_time: g.avr_time_s,
            gov_time: g.gov_time_s,
            droop: g.droop,
            v_ref: g.v_ref_pu,
            p_ref: g.p_ref_pu.unwrap_or(0.0),
            omega_nominal: g.omega_nominal,
            x_internal: g.x_internal_pu,
        };
        if !params.validate() {
            return Err(ConfigError::Network(format!("generator at bus {}: bad constants", g.bus)));
        }
        machines.push(Machine { bus: lookup(g.bus)?, params });
        p_ref_bias.push(if g.p_ref_pu.is_some() { None } else { Some(g.p_ref_bias_pu) });
    }

    let net = NetworkModel::new(buses, lines, file.system.base_mva, file.system.base_kv)?;
    Ok(LoadedNetwork {
        net,
        machines,
        p_ref_bias,
        base_loads_kw,
        frequency_hz: file.system.frequency_hz,
    })
}

/// Loads a network from a file path, or the bundled feeder when `path` is
/// empty.
pub fn load_network(path: &str) -> Result<LoadedNetwork, ConfigError> {
    if path.is_empty() {
        return parse_network(IEEE33_TOML);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_string(), source })?;
    parse_network(&text)
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Default)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub flags: FlagsSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub fdi: FdiSection,
    #[serde(default)]
    pub actuation: ActuationSection,
    #[serde(default)]
    pub devices: DevicesSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub action: ActionSection,
    #[serde(default)]
    pub adp: AdpSection,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub dqn: DqnSection,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// The bundled default scenario.
    pub fn bundled_default() -> Self {
        Self::from_toml(DEFAULT_SCENARIO_TOML).expect("bundled scenario parses")
    }

    pub fn from_path(path: &str) -> Result<Self, ConfigError> {
        if path.is_empty() {
            return Ok(Self::bundled_default());
        }
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_string(), source })?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub steps: usize,
    pub seed: u64,
    pub dt_s: f64,
    /// Calendar date prefix for record timestamps (M/D/YYYY).
    pub start_date: String,
    /// Hour of day at step 0.
    pub start_hour: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            steps: 6000,
            seed: 42,
            dt_s: 1.0,
            start_date: "11/1/2025".to_string(),
            start_hour: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FlagsSection {
    /// Run machine dynamics inside the main loop (frequency evolves).
    pub dynamics: bool,
    /// Enable FDI attack windows.
    pub attacks: bool,
    /// Enable the hybrid supervisor (otherwise the first enabled controller
    /// in ADP > PPO > DQN priority order acts alone).
    pub hybrid: bool,
    /// Enabled controllers, any of "adp", "ppo", "dqn".
    pub controllers: Vec<String>,
    /// Steps of disturbance-free pre-training before the main run.
    pub pretrain_steps: usize,
}

impl Default for FlagsSection {
    fn default() -> Self {
        Self {
            dynamics: true,
            attacks: true,
            hybrid: true,
            controllers: vec!["adp".into(), "ppo".into(), "dqn".into()],
            pretrain_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default)]
pub struct NetworkSection {
    /// Path to a network definition file; empty selects the bundled feeder.
    pub file: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ChannelSection {
    pub p_drop: f64,
    pub delay_mean: f64,
    pub delay_sigma: f64,
    pub max_delay: usize,
    pub sigma_v_voltage: f64,
    pub sigma_v_freq: f64,
    /// Cloud view latency, steps.
    pub cloud_latency: usize,
    /// Cloud-to-edge parameter pull period, steps.
    pub cloud_sync_period: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            p_drop: 0.05,
            delay_mean: 1.0,
            delay_sigma: 1.0,
            max_delay: 3,
            sigma_v_voltage: 0.005,
            sigma_v_freq: 0.02,
            cloud_latency: 2,
            cloud_sync_period: 50,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FdiSection {
    pub p_fdi: f64,
    pub a_v_min: f64,
    pub a_v_max: f64,
    pub a_f_min: f64,
    pub a_f_max: f64,
    pub severity: f64,
    /// Expected attack windows per 2000 steps when drawn randomly.
    pub bursts_per_2000_steps: f64,
    pub burst_len: usize,
    /// Explicit windows `[start, end)`; overrides random bursts when set.
    pub windows: Vec<[usize; 2]>,
}

impl Default for FdiSection {
    fn default() -> Self {
        Self {
            p_fdi: 0.04,
            a_v_min: -0.03,
            a_v_max: 0.03,
            a_f_min: -0.15,
            a_f_max: 0.18,
            severity: 1.0,
            bursts_per_2000_steps: 1.0,
            burst_len: 50,
            windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ActuationSection {
    pub sigma_edge: f64,
    pub tau_inv_s: f64,
}

impl Default for ActuationSection {
    fn default() -> Self {
        Self { sigma_edge: 0.01, tau_inv_s: 0.040 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DevicesSection {
    pub load_variability: f64,
    pub load_noise_sigma_kw: f64,
    pub load_jump_prob: f64,
    pub load_max_jump: f64,
    /// Buses hosting PV units (1-based ids).
    pub pv_buses: Vec<usize>,
    pub pv_rated_kw: f64,
    pub pv_dip_prob: f64,
    pub wind_buses: Vec<usize>,
    pub wind_rated_kw: f64,
    /// Battery placement: empty means every non-slack bus.
    pub battery_buses: Vec<usize>,
    pub battery_e_max_kwh: f64,
    pub battery_p_max_kw: f64,
    /// Initial SOC draw range.
    pub soc_init: [f64; 2],
    /// EV placement: empty means every non-slack bus.
    pub ev_buses: Vec<usize>,
    pub ev_efficiency: f64,
    /// Hours of day during which EV charging is available.
    pub ev_window: [f64; 2],
}

impl Default for DevicesSection {
    fn default() -> Self {
        Self {
            load_variability: 0.25,
            load_noise_sigma_kw: 30.0,
            load_jump_prob: 0.001,
            load_max_jump: 0.20,
            pv_buses: vec![5, 14, 25],
            pv_rated_kw: 500.0,
            pv_dip_prob: 0.002,
            wind_buses: vec![5, 18, 29],
            wind_rated_kw: 300.0,
            battery_buses: Vec::new(),
            battery_e_max_kwh: 300.0,
            battery_p_max_kw: 150.0,
            soc_init: [0.25, 0.80],
            ev_buses: Vec::new(),
            ev_efficiency: 0.92,
            ev_window: [7.0, 23.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CostSection {
    /// Control-effort weight in the unified cost.
    pub alpha: f64,
    /// Additive penalty on the DQN reward when the bus voltage violates its
    /// limits (0 keeps the exact reward/cost duality).
    pub dqn_violation_penalty: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { alpha: 0.5, dqn_violation_penalty: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ActionSection {
    /// Reactive command scale: u = 1 maps to this many kVAr.
    pub q_max_kvar: f64,
    /// Battery command scale as a fraction of the battery power rating.
    pub battery_scale: f64,
    /// Maximum load-shed fraction at u = 1.
    pub shed_max_frac: f64,
}

impl Default for ActionSection {
    fn default() -> Self {
        Self { q_max_kvar: 50.0, battery_scale: 0.5, shed_max_frac: 0.2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct AdpSection {
    pub gamma: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub hidden: Vec<usize>,
}

impl Default for AdpSection {
    fn default() -> Self {
        Self { gamma: 0.95, lr_critic: 3e-3, lr_actor: 1e-3, hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PpoSection {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub sigma_min: f64,
}

impl Default for PpoSection {
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

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DqnSection {
    pub gamma: f64,
    pub lr: f64,
    pub action_grid: Vec<f64>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    pub hidden: Vec<usize>,
    /// Run a replay update every N steps.
    pub update_every: usize,
}

impl Default for DqnSection {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lr: 1e-3,
            action_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            epsilon_start: 1.0,
            epsilon_end: 0.10,
            epsilon_decay_steps: 4000,
            replay_capacity: 20_000,
            batch_size: 32,
            target_sync: 200,
            hidden: vec![64, 64],
            update_every: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct MarketSection {
    pub agents: usize,
    pub disutility: f64,
    pub strategy_min: f64,
    pub strategy_max: f64,
    pub price_base: f64,
    pub price_slope: f64,
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            agents: 4,
            disutility: 1.0,
            strategy_min: -10.0,
            strategy_max: 10.0,
            price_base: 2.0,
            price_slope: 0.5,
            tolerance: 1e-8,
            max_rounds: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub moving_average_window: usize,
    pub resilience_window: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { moving_average_window: 50, resilience_window: 100 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_network_parses_and_validates() {
        let loaded = parse_network(IEEE33_TOML).unwrap();
        assert_eq!(loaded.net.n_buses(), 33);
        assert_eq!(loaded.net.lines.len(), 32);
        assert_eq!(loaded.machines.len(), 1);
        assert_eq!(loaded.machines[0].bus, loaded.net.slack);
        let p_total: f64 = loaded.base_loads_kw.iter().map(|(p, _)| p).sum();
        let q_total: f64 = loaded.base_loads_kw.iter().map(|(_, q)| q).sum();
        assert_eq!(p_total, 3715.0);
        assert_eq!(q_total, 2300.0);
        // transformer folded into line 1
        let z_base = 12.66 * 12.66 / 10.0;
        assert!((loaded.net.lines[0].resistance - (0.0922 / z_base + 0.01)).abs() < 1e-12);
        assert!((loaded.net.lines[0].reactance - (0.0470 / z_base + 0.04)).abs() < 1e-12);
        // A 33-bus tree: symmetric Y-bus with exactly 32 off-diagonal pairs.
        let y = &loaded.net.ybus;
        let mut pairs = 0;
        for i in 0..33 {
            for j in (i + 1)..33 {
                assert_eq!(y.b[(i, j)], y.b[(j, i)]);
                if y.b[(i, j)] != 0.0 || y.g[(i, j)] != 0.0 {
                    pairs += 1;
                }
            }
        }
        assert_eq!(pairs, 32);
    }

    #[test]
    fn bundled_scenario_parses() {
        let cfg = ScenarioConfig::bundled_default();
        assert_eq!(cfg.scenario.steps, 6000);
        assert!(cfg.flags.hybrid);
        assert_eq!(cfg.channel.p_drop, 0.05);
    }

    #[test]
    fn partial_scenario_overrides_defaults() {
        let cfg = ScenarioConfig::from_toml(
            "[scenario]\nsteps = 10\n[channel]\np_drop = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.steps, 10);
        assert_eq!(cfg.scenario.seed, 42);
        assert_eq!(cfg.channel.p_drop, 0.5);
        assert_eq!(cfg.channel.cloud_latency, 2);
    }

    #[test]
    fn bad_bus_kind_is_rejected() {
        let text = r#"
[system]
base_mva = 10.0
base_kv = 12.66
[[bus]]
id = 1
kind = "pv"
[[bus]]
id = 2
kind = "pq"
[[line]]
from = 1
to = 2
r_ohm = 0.1
x_ohm = 0.1
"#;
        assert!(matches!(parse_network(text), Err(ConfigError::Network(_))));
    }
}
