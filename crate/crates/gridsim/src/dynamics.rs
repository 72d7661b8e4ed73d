//! Synchronous-machine differential states (swing, exciter, governor) and
//! the partitioned DAE stepper that couples them to the algebraic network.
//!
//! The partitioned scheme per step: (1) integrate the machine states one
//! explicit RK4 substep with the algebraic values frozen, (2) re-solve the
//! network with the updated machine injections, (3) recompute electrical
//! power from the new voltages. Machines at non-slack buses inject through
//! a simplified EMF-behind-reactance model; a machine at the slack bus
//! represents the upstream grid equivalent and sees the slack residual as
//! its electrical power.

use thiserror::Error;

use crate::grid::{power_injection, solve_power_flow_from, NetworkModel, PowerFlowSolution};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("network failed to converge inside a DAE step (mismatch {0:.3e})")]
    StepRejected(f64),
    #[error("grid error inside a DAE step: {0}")]
    Grid(#[from] crate::grid::GridError),
    #[error("machine list and state list differ in length ({machines} vs {states})")]
    Mismatch { machines: usize, states: usize },
}

/// Machine constants. `droop` relates speed deviation in rad/s to a
/// per-unit governor power correction.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    /// Inertia constant M, s^2 * p.u.
    pub inertia: f64,
    /// Damping coefficient D, p.u. (acts on per-unit speed deviation).
    pub damping: f64,
    /// AVR gain K_A.
    pub avr_gain: f64,
    /// AVR time constant T_A, s.
    pub avr_time: f64,
    /// Governor time constant T_g, s.
    pub gov_time: f64,
    /// Droop R.
    pub droop: f64,
    /// Terminal-voltage reference, p.u.
    pub v_ref: f64,
    /// Mechanical power setpoint, p.u.
    pub p_ref: f64,
    /// Nominal speed, rad/s.
    pub omega_nominal: f64,
    /// Internal reactance of the EMF-behind-reactance injection model, p.u.
    pub x_internal: f64,
}

impl GeneratorParams {
    pub fn validate(&self) -> bool {
        self.inertia > 0.0
            && self.avr_time > 0.0
            && self.gov_time > 0.0
            && self.droop > 0.0
            && self.avr_gain > 0.0
            && self.x_internal > 0.0
    }
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            inertia: 10.0,
            damping: 5.0,
            avr_gain: 50.0,
            avr_time: 0.5,
            gov_time: 4.0,
            droop: 2.0,
            v_ref: 1.02,
            p_ref: 0.4,
            omega_nominal: 100.0 * std::f64::consts::PI,
            x_internal: 0.05,
        }
    }
}

/// Machine differential state.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    /// Rotor angle, rad.
    pub delta: f64,
    /// Rotor speed, rad/s.
    pub omega: f64,
    /// Field voltage, p.u.
    pub e_fd: f64,
    /// Mechanical power, p.u.
    pub p_m: f64,
}

impl GeneratorState {
    /// Frequency seen at the machine, Hz.
    pub fn frequency_hz(&self) -> f64 {
        self.omega / std::f64::consts::TAU
    }
}

/// A machine placed at a network bus.
#[derive(Debug, Clone)]
pub struct Machine {
    /// Bus index (0-based, into the network bus list).
    pub bus: usize,
    pub params: GeneratorParams,
}

/// Combined differential + algebraic state; `y` always satisfies the
/// network equations after an accepted step.
#[derive(Debug, Clone)]
pub struct DaeState {
    pub x: Vec<GeneratorState>,
    pub y: PowerFlowSolution,
}

/// Right-hand side of the machine equations with frozen algebraic values:
/// returns `(d delta, d omega, d e_fd, d p_m)`.
pub fn generator_derivatives(
    state: &GeneratorState,
    params: &GeneratorParams,
    p_e: f64,
    v_term: f64,
) -> [f64; 4] {
    let dw = state.omega - params.omega_nominal;
    [
        dw,
        (state.p_m - p_e - params.damping * dw / params.omega_nominal) / params.inertia,
        (-state.e_fd + params.avr_gain * (params.v_ref - v_term)) / params.avr_time,
        (-state.p_m + params.p_ref - dw / params.droop) / params.gov_time,
    ]
}

/// One classical RK4 substep of the machine equations with `(p_e, v_term)`
/// held constant.
pub fn rk4_machine_step(
    state: &GeneratorState,
    params: &GeneratorParams,
    p_e: f64,
    v_term: f64,
    dt: f64,
) -> GeneratorState {
    let eval = |s: &GeneratorState| generator_derivatives(s, params, p_e, v_term);
    let advance = |s: &GeneratorState, k: &[f64; 4], h: f64| GeneratorState {
        delta: s.delta + h * k[0],
        omega: s.omega + h * k[1],
        e_fd: s.e_fd + h * k[2],
        p_m: s.p_m + h * k[3],
    };
    let k1 = eval(state);
    let k2 = eval(&advance(state, &k1, dt / 2.0));
    let k3 = eval(&advance(state, &k2, dt / 2.0));
    let k4 = eval(&advance(state, &k3, dt));
    GeneratorState {
        delta: state.delta + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        omega: state.omega + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        e_fd: state.e_fd + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        p_m: state.p_m + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    }
}

/// Active/reactive injection of a non-slack machine through its internal
/// reactance, given the terminal voltage phasor.
fn machine_injection(state: &GeneratorState, params: &GeneratorParams, v: f64, theta: f64) -> (f64, f64) {
    let angle = state.delta - theta;
    let p = state.e_fd * v * angle.sin() / params.x_internal;
    let q = (state.e_fd * v * angle.cos() - v * v) / params.x_internal;
    (p, q)
}

/// Electrical power of each machine under the given algebraic solution.
pub fn electrical_power(
    net: &NetworkModel,
    machines: &[Machine],
    x: &[GeneratorState],
    y: &PowerFlowSolution,
) -> Result<Vec<f64>, DynamicsError> {
    let (p_calc, _) = power_injection(&y.v_mag, &y.v_ang, &net.ybus)?;
    Ok(machines
        .iter()
        .zip(x)
        .map(|(m, s)| {
            if m.bus == net.slack {
                // The slack machine supplies the residual beyond the bus's
                // specified injections.
                p_calc[net.slack] - net.buses[net.slack].p_spec()
            } else {
                machine_injection(s, &m.params, y.v_mag[m.bus], y.v_ang[m.bus]).0
            }
        })
        .collect())
}

/// Advances the coupled machine/network state one partitioned step.
pub fn dae_step(
    state: &DaeState,
    net: &NetworkModel,
    machines: &[Machine],
    dt: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<DaeState, DynamicsError> {
    assert!(dt > 0.0, "dt must be positive");
    if machines.len() != state.x.len() {
        return Err(DynamicsError::Mismatch { machines: machines.len(), states: state.x.len() });
    }

    // (1) integrate machine states with frozen algebraic values
    let p_e = electrical_power(net, machines, &state.x, &state.y)?;
    let next_x: Vec<GeneratorState> = machines
        .iter()
        .zip(&state.x)
        .zip(&p_e)
        .map(|((m, s), &pe)| rk4_machine_step(s, &m.params, pe, state.y.v_mag[m.bus], dt))
        .collect();

    // (2) re-solve the network with the updated machine injections. The
    // injection of a non-slack machine depends on its own terminal voltage,
    // so the solve is iterated (damped) until injections and voltages agree;
    // interfacing through stale voltages alone is marginally unstable for
    // small internal reactances. Slack-bus machines never modify the
    // injections and exit after the first pass.
    let slack_v = state.y.v_mag[net.slack];
    let mut inj: Vec<(f64, f64)> = machines
        .iter()
        .zip(&next_x)
        .map(|(m, s)| machine_injection(s, &m.params, state.y.v_mag[m.bus], state.y.v_ang[m.bus]))
        .collect();
    let mut y = state.y.clone();
    let mut consistent = false;
    for _ in 0..60 {
        let mut work = net.clone();
        for (m, &(p, q)) in machines.iter().zip(&inj) {
            if m.bus != net.slack {
                work.buses[m.bus].p_gen = p;
                work.buses[m.bus].q_gen = q;
            }
        }
        y = solve_power_flow_from(&work, tolerance, max_iter, slack_v)?;
        if !y.converged {
            return Err(DynamicsError::StepRejected(y.max_mismatch));
        }
        let mut change: f64 = 0.0;
        for (i, (m, s)) in machines.iter().zip(&next_x).enumerate() {
            if m.bus == net.slack {
                continue;
            }
            let fresh = machine_injection(s, &m.params, y.v_mag[m.bus], y.v_ang[m.bus]);
            change = change.max((fresh.0 - inj[i].0).abs()).max((fresh.1 - inj[i].1).abs());
            inj[i] = (0.5 * inj[i].0 + 0.5 * fresh.0, 0.5 * inj[i].1 + 0.5 * fresh.1);
        }
        if change <= tolerance.max(1e-12) {
            consistent = true;
            break;
        }
    }
    if !consistent {
        return Err(DynamicsError::StepRejected(f64::INFINITY));
    }

    Ok(DaeState { x: next_x, y })
}

/// Frequency reported for a bus: its own machine if one is placed there,
/// otherwise the slack machine, otherwise nominal.
pub fn bus_frequency_hz(net: &NetworkModel, machines: &[Machine], x: &[GeneratorState], bus: usize) -> f64 {
    if let Some(i) = machines.iter().position(|m| m.bus == bus) {
        return x[i].frequency_hz();
    }
    if let Some(i) = machines.iter().position(|m| m.bus == net.slack) {
        return x[i].frequency_hz();
    }
    if let Some(s) = x.first() {
        return s.frequency_hz();
    }
    50.0
}
