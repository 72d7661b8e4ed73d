//! EMS dispatch cost accounting and the prosumer game layer: best
//! response, MPC scheduling, and Nash equilibrium via best-response
//! dynamics.
//!
//! The EMS layer runs offline over logged trajectories (cost accounting and
//! feasibility audit); the learning controllers are the live loop.

use thiserror::Error;

use crate::devices::{battery_step, Battery};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("projected gradient did not reach stationarity in {0} iterations")]
    MpcNotConverged(usize),
    #[error("series lengths are inconsistent: {0}")]
    BadSeries(String),
}

/// Quadratic cost curve `a p^2 + b p + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCost {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadCost {
    pub fn eval(&self, p: f64) -> f64 {
        self.a * p * p + self.b * p + self.c
    }
}

/// Cost coefficients of the EMS objective terms.
#[derive(Debug, Clone)]
pub struct EmsCostParams {
    /// Generation cost per dispatchable source.
    pub gen_cost: Vec<QuadCost>,
    /// Linear penalty per kW of shed load.
    pub curtail_cost: f64,
    /// Quadratic penalty on storage throughput (|charge| + |discharge|).
    pub storage_cost: f64,
    /// Quadratic penalty on control-action deltas between steps.
    pub switch_cost: f64,
}

impl EmsCostParams {
    pub fn validate(&self) -> bool {
        self.gen_cost.iter().all(|c| c.a >= 0.0 && c.c >= 0.0)
            && self.curtail_cost >= 0.0
            && self.storage_cost >= 0.0
            && self.switch_cost >= 0.0
    }
}

/// One step of a logged dispatch trajectory.
#[derive(Debug, Clone)]
pub struct DispatchStep {
    /// Power of each dispatchable generator, kW.
    pub p_gen: Vec<f64>,
    /// Shed load, kW.
    pub p_shed: f64,
    /// Load served at the step, kW (bounds the shed).
    pub p_load: f64,
    /// Storage throughput |charge| + |discharge|, kW.
    pub storage_throughput: f64,
    /// Battery power commands per unit, kW (positive = charge).
    pub battery_commands: Vec<f64>,
    /// Control action vector at the step.
    pub control: Vec<f64>,
}

/// Rectangle-rule discretization of the EMS objective over the series.
pub fn ems_cost(dispatch: &[DispatchStep], params: &EmsCostParams, dt_h: f64) -> f64 {
    let mut total = 0.0;
    let mut prev_control: Option<&[f64]> = None;
    for step in dispatch {
        let mut c = 0.0;
        for (i, p) in step.p_gen.iter().enumerate() {
            if let Some(q) = params.gen_cost.get(i) {
                c += q.eval(*p);
            }
        }
        c += params.curtail_cost * step.p_shed;
        c += params.storage_cost * step.storage_throughput * step.storage_throughput;
        if let Some(prev) = prev_control {
            let delta2: f64 = step
                .control
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            c += params.switch_cost * delta2;
        }
        prev_control = Some(&step.control);
        total += c * dt_h;
    }
    total
}

/// Generator limits and storage data backing the feasibility audit.
#[derive(Debug, Clone)]
pub struct DispatchConstraints {
    /// Per-generator (min, max) kW.
    pub p_gen_limits: Vec<(f64, f64)>,
    /// Battery models re-simulated against the logged commands.
    pub batteries: Vec<Battery>,
    /// Step length, hours.
    pub dt_h: f64,
}

/// One reported feasibility breach.
#[derive(Debug, Clone, PartialEq)]
pub enum DispatchViolation {
    GenLimit { gen: usize, step: usize, value: f64, bound: f64 },
    ShedBeyondLoad { step: usize, shed: f64, load: f64 },
    /// The commanded battery power was infeasible and had to be clamped.
    BatteryClamped { battery: usize, step: usize, commanded: f64, applied: f64 },
}

/// Checks generator bounds, shed bounds, and the battery SOC trajectory
/// (re-simulated through the same SOC model the devices use). The AC
/// feasibility residual is the power-flow solver's concern, not replicated
/// here.
pub fn check_constraints(
    dispatch: &[DispatchStep],
    cons: &DispatchConstraints,
) -> Vec<DispatchViolation> {
    let mut violations = Vec::new();
    let mut batteries = cons.batteries.clone();
    for (k, step) in dispatch.iter().enumerate() {
        for (g, p) in step.p_gen.iter().enumerate() {
            if let Some(&(lo, hi)) = cons.p_gen_limits.get(g) {
                if *p < lo - 1e-9 || *p > hi + 1e-9 {
                    let bound = if *p < lo { lo } else { hi };
                    violations.push(DispatchViolation::GenLimit { gen: g, step: k, value: *p, bound });
                }
            }
        }
        if step.p_shed < -1e-9 || step.p_shed > step.p_load + 1e-9 {
            violations.push(DispatchViolation::ShedBeyondLoad {
                step: k,
                shed: step.p_shed,
                load: step.p_load,
            });
        }
        for (b, batt) in batteries.iter_mut().enumerate() {
            let command = step.battery_commands.get(b).copied().unwrap_or(0.0);
            let (next, applied) = battery_step(batt, command, cons.dt_h);
            if (applied - command).abs() > 1e-9 {
                violations.push(DispatchViolation::BatteryClamped {
                    battery: b,
                    step: k,
                    commanded: command,
                    applied,
                });
            }
            *batt = next;
        }
    }
    violations
}

/// A price-taking prosumer with quadratic disutility `a p^2` over a bounded
/// strategy interval.
#[derive(Debug, Clone)]
pub struct ProsumerAgent {
    /// Strictly positive disutility curvature.
    pub disutility: f64,
    /// Strategy bounds (net export, kW): `[min, max]`.
    pub bounds: (f64, f64),
    /// Optional linked battery for the MPC horizon coupling.
    pub battery: Option<Battery>,
}

impl ProsumerAgent {
    pub fn new(disutility: f64, bounds: (f64, f64)) -> Self {
        assert!(disutility > 0.0, "disutility must be strictly convex");
        assert!(bounds.0 <= bounds.1, "bounds must be ordered");
        Self { disutility, bounds, battery: None }
    }

    /// Price-taking utility at a broadcast price.
    pub fn utility(&self, p: f64, price: f64) -> f64 {
        price * p - self.disutility * p * p
    }
}

/// Exact projected minimizer of `a p^2 - price p` over the agent's bounds:
/// the unconstrained optimum `price / 2a` clipped into the interval.
pub fn prosumer_best_response(agent: &ProsumerAgent, price: f64) -> f64 {
    (price / (2.0 * agent.disutility)).clamp(agent.bounds.0, agent.bounds.1)
}

/// Affine decreasing price in the aggregate net export.
#[derive(Debug, Clone, Copy)]
pub struct PriceFn {
    pub base: f64,
    pub slope: f64,
}

impl PriceFn {
    pub fn price(&self, aggregate: f64) -> f64 {
        self.base - self.slope * aggregate
    }
}

/// MPC schedule over a price horizon. Without a battery the problem is
/// separable and reduces to per-step best responses. A linked battery adds
/// the energy-neutrality coupling `sum_k p_k = 0`, solved by projected
/// gradient descent with an exact Dykstra projection onto the intersection
/// of the box and the hyperplane.
pub fn mpc_schedule(
    agent: &ProsumerAgent,
    prices: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, MarketError> {
    assert!(horizon >= 1, "horizon must be at least 1");
    let n = horizon.min(prices.len());
    let prices = &prices[..n];
    if agent.battery.is_none() {
        return Ok(prices.iter().map(|&l| prosumer_best_response(agent, l)).collect());
    }
    let batt = agent.battery.as_ref().unwrap();
    let bounds = (agent.bounds.0.max(-batt.p_max), agent.bounds.1.min(batt.p_max));

    // Projected gradient on f(p) = sum a p_k^2 - lambda_k p_k.
    let mut p = vec![0.0; n];
    let lr = 1.0 / (4.0 * agent.disutility);
    let max_iter = 20_000;
    for it in 0..max_iter {
        let grad: Vec<f64> =
            p.iter().zip(prices).map(|(pk, l)| 2.0 * agent.disutility * pk - l).collect();
        let stepped: Vec<f64> = p.iter().zip(&grad).map(|(pk, g)| pk - lr * g).collect();
        let next = project_box_hyperplane(&stepped, bounds, 0.0);
        let movement = p
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        p = next;
        if movement / lr <= 1e-6 {
            return Ok(p);
        }
        if it == max_iter - 1 {
            return Err(MarketError::MpcNotConverged(max_iter));
        }
    }
    Ok(p)
}

/// Dykstra's alternating projection onto `{x in box} ∩ {sum x = target}`.
fn project_box_hyperplane(x: &[f64], bounds: (f64, f64), target: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mut y = x.to_vec();
    let mut p_inc = vec![0.0; x.len()];
    let mut q_inc = vec![0.0; x.len()];
    for _ in 0..500 {
        // hyperplane step
        let v: Vec<f64> = y.iter().zip(&p_inc).map(|(a, b)| a + b).collect();
        let shift = (v.iter().sum::<f64>() - target) / n;
        let y1: Vec<f64> = v.iter().map(|a| a - shift).collect();
        for i in 0..y.len() {
            p_inc[i] = v[i] - y1[i];
        }
        // box step
        let w: Vec<f64> = y1.iter().zip(&q_inc).map(|(a, b)| a + b).collect();
        let y2: Vec<f64> = w.iter().map(|a| a.clamp(bounds.0, bounds.1)).collect();
        for i in 0..y.len() {
            q_inc[i] = w[i] - y2[i];
        }
        let moved = y
            .iter()
            .zip(&y2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        y = y2;
        if moved < 1e-12 {
            break;
        }
    }
    y
}

/// State of the best-response iteration.
#[derive(Debug, Clone)]
pub struct GameState {
    /// Per-agent strategies (net export, kW).
    pub strategies: Vec<f64>,
    /// Broadcast price at the aggregate of `strategies`.
    pub price: f64,
    pub price_fn: PriceFn,
    pub rounds: usize,
    pub converged: bool,
}

/// Update order within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOrder {
    /// Sequential Gauss-Seidel sweeps (default; converges for the affine
    /// price where simultaneous updates can cycle).
    Sequential,
    /// Simultaneous Jacobi updates.
    Simultaneous,
}

/// Round-robin price-taking best responses until the largest strategy
/// change in a round falls below `tol`. At the fixed point each agent is
/// optimal against the broadcast price of the aggregate, so no unilateral
/// deviation under that price improves its utility.
pub fn best_response_dynamics(
    agents: &[ProsumerAgent],
    price_fn: PriceFn,
    order: UpdateOrder,
    tol: f64,
    max_rounds: usize,
) -> GameState {
    let mut strategies = vec![0.0; agents.len()];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < max_rounds {
        rounds += 1;
        let mut max_change: f64 = 0.0;
        match order {
            UpdateOrder::Sequential => {
                for (i, agent) in agents.iter().enumerate() {
                    let aggregate: f64 = strategies.iter().sum();
                    let price = price_fn.price(aggregate);
                    let next = prosumer_best_response(agent, price);
                    max_change = max_change.max((next - strategies[i]).abs());
                    strategies[i] = next;
                }
            }
            UpdateOrder::Simultaneous => {
                let aggregate: f64 = strategies.iter().sum();
                let price = price_fn.price(aggregate);
                for (i, agent) in agents.iter().enumerate() {
                    let next = prosumer_best_response(agent, price);
                    max_change = max_change.max((next - strategies[i]).abs());
                    strategies[i] = next;
                }
            }
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }
    let aggregate: f64 = strategies.iter().sum();
    GameState { price: price_fn.price(aggregate), strategies, price_fn, rounds, converged }
}
