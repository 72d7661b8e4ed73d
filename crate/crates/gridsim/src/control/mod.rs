//! Control agents, the unified cost, and the hybrid supervisor.
//!
//! All three agents optimize the same quadratic cost
//! `c = (V - 1)^2 + (f - 50)^2 + alpha * sum(u^2)` through its negation as
//! the reward. Actions are normalized per-bus command vectors in [-1, 1]:
//! reactive injection, battery power fraction, load curtailment, and EV
//! modulation.

pub mod adp;
pub mod dqn;
pub mod ppo;

use crate::state::BusState;

/// Number of per-bus control components.
pub const ACTION_DIM: usize = 4;

/// Indices into a per-bus action vector.
pub mod action_index {
    pub const REACTIVE: usize = 0;
    pub const BATTERY: usize = 1;
    pub const CURTAIL: usize = 2;
    pub const EV_MODULATION: usize = 3;
}

/// A per-bus continuous command vector, each component in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub values: Vec<f64>,
}

impl ControlAction {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let mut a = Self { values };
        a.clamp_in_place();
        a
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.values {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    /// Squared Euclidean norm of the command vector.
    pub fn effort(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// RMS magnitude, used as the scalar "control action" log column.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.effort() / self.values.len() as f64).sqrt()
    }
}

/// The quadratic cost every controller minimizes.
pub fn unified_cost(state: &BusState, action: &ControlAction, alpha: f64) -> f64 {
    assert!(alpha > 0.0, "alpha must be positive");
    let dv = state.voltage - 1.0;
    let df = state.frequency - 50.0;
    dv * dv + df * df + alpha * action.effort()
}

/// Reward is the exact negation of the unified cost.
pub fn reward(state: &BusState, action: &ControlAction, alpha: f64) -> f64 {
    -unified_cost(state, action, alpha)
}

/// One experience tuple.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// The three controller families coordinated by the supervisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Adp,
    Ppo,
    Dqn,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::Adp => write!(f, "adp"),
            ControllerKind::Ppo => write!(f, "ppo"),
            ControllerKind::Dqn => write!(f, "dqn"),
        }
    }
}

/// A full per-bus action set proposed by one controller.
pub type ActionSet = Vec<ControlAction>;

/// Outcome of one supervisor decision.
#[derive(Debug, Clone)]
pub struct HybridChoice {
    /// `None` when every candidate was excluded (all shadow rolls failed).
    pub chosen: Option<ControllerKind>,
    pub actions: ActionSet,
    /// Shadow cost per evaluated candidate, in candidate order.
    pub costs: Vec<(ControllerKind, Option<f64>)>,
}

/// Evaluates each candidate action set through the one-step shadow
/// evaluator and returns the cost argmin. Candidates whose shadow roll
/// fails (`None`) are excluded; ties keep the earliest candidate, so pass
/// candidates in fixed ADP, PPO, DQN priority order. If every candidate is
/// excluded the choice is a zero action set.
pub fn hybrid_select<F>(candidates: &[(ControllerKind, ActionSet)], mut shadow: F) -> HybridChoice
where
    F: FnMut(&ActionSet) -> Option<f64>,
{
    assert!(!candidates.is_empty(), "need at least one candidate");
    let mut costs = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (kind, actions)) in candidates.iter().enumerate() {
        let cost = shadow(actions);
        costs.push((*kind, cost));
        if let Some(c) = cost {
            let better = match best {
                None => true,
                Some((_, b)) => c < b,
            };
            if better {
                best = Some((i, c));
            }
        }
    }
    match best {
        Some((i, _)) => HybridChoice {
            chosen: Some(candidates[i].0),
            actions: candidates[i].1.clone(),
            costs,
        },
        None => {
            let dim = candidates[0].1.first().map_or(ACTION_DIM, |a| a.values.len());
            let buses = candidates[0].1.len();
            HybridChoice {
                chosen: None,
                actions: vec![ControlAction::zeros(dim); buses],
                costs,
            }
        }
    }
}
