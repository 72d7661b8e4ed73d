//! Cyber-physical distribution-grid co-simulation engine.
//!
//! The crate couples a nonlinear AC power-flow model of a radial feeder with
//! a lossy, delayed, attackable measurement channel and closes the loop with
//! three learning controllers (ADP, PPO, DQN) coordinated by a cost-argmin
//! hybrid supervisor. A scenario harness drives the step loop, logs one
//! record per bus per step, and computes resilience metrics against a
//! disturbance-free companion run.
//!
//! Module map:
//! - [`grid`]: network model, Y-bus construction, Newton-Raphson power flow
//! - [`dynamics`]: machine swing/exciter/governor states and the partitioned
//!   DAE stepper
//! - [`devices`]: stochastic load, PV, wind, battery and EV models
//! - [`channel`]: delay/drop/noise/FDI observation pipeline and actuation
//! - [`nn`]: the minimal feed-forward approximator shared by all agents
//! - [`control`]: the agents, unified cost, and hybrid supervisor
//! - [`market`]: EMS cost accounting and the prosumer game layer
//! - [`metrics`]: resilience index and series statistics
//! - [`harness`]: scenario configuration, the main loop, and file outputs

pub mod channel;
pub mod config;
pub mod control;
pub mod devices;
pub mod dynamics;
pub mod grid;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod state;
