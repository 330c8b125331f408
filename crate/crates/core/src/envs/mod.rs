//! Communication-essential gridworlds behind a common interface.
//!
//! Both environments are fully cooperative: one scalar reward per step is
//! shared by every agent.

mod predator_prey;
mod traffic_junction;

pub use predator_prey::{PredatorPrey, PreyMove, PP_ACTIONS};
pub use traffic_junction::{Car, TrafficJunction, BRAKE, GAS, TJ_ACTIONS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PredatorPrey,
    TrafficJunction,
}

/// Parameters for either environment. Fields that do not apply to the
/// selected kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid_size: usize,
    pub n_agents: usize,
    /// Half-width of the square view: 1 gives a 3×3 window.
    pub view_radius: usize,
    pub max_steps: usize,
    // predator-prey
    pub n_preys: usize,
    pub capture_reward: f64,
    pub failed_attempt_penalty: f64,
    pub step_penalty: f64,
    /// LEFT, RIGHT, UP, DOWN, NO-OP.
    pub prey_move_probs: [f64; 5],
    // traffic junction
    pub arrival_rate_min: f64,
    pub arrival_rate_max: f64,
    pub collision_penalty: f64,
    pub time_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::predator_prey()
    }
}

impl EnvConfig {
    /// 7×7 grid, 4 predators, 2 preys, 3×3 view, 200 steps.
    pub fn predator_prey() -> Self {
        EnvConfig {
            kind: EnvKind::PredatorPrey,
            grid_size: 7,
            n_agents: 4,
            view_radius: 1,
            max_steps: 200,
            n_preys: 2,
            capture_reward: 10.0,
            failed_attempt_penalty: -0.5,
            step_penalty: -0.01,
            prey_move_probs: [0.175, 0.175, 0.175, 0.175, 0.3],
            arrival_rate_min: 0.1,
            arrival_rate_max: 0.3,
            collision_penalty: -10.0,
            time_penalty: -0.01,
        }
    }

    /// Reduced predator-prey: 5×5 grid, 2 predators, 1 prey.
    pub fn predator_prey_small() -> Self {
        EnvConfig { grid_size: 5, n_agents: 2, n_preys: 1, ..EnvConfig::predator_prey() }
    }

    /// 8×8 grid, one junction, two arrival points, 5 cars, vision 1, 20 steps.
    pub fn traffic_junction() -> Self {
        EnvConfig {
            kind: EnvKind::TrafficJunction,
            grid_size: 8,
            n_agents: 5,
            view_radius: 1,
            max_steps: 20,
            n_preys: 0,
            ..EnvConfig::predator_prey()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid_size == 0 || self.n_agents == 0 || self.max_steps == 0 {
            return bad("grid_size, n_agents and max_steps must be positive".into());
        }
        match self.kind {
            EnvKind::PredatorPrey => {
                let cells = self.grid_size * self.grid_size;
                if self.n_agents + self.n_preys > cells {
                    return bad(format!(
                        "{} predators + {} preys do not fit on {cells} cells",
                        self.n_agents, self.n_preys
                    ));
                }
                let total: f64 = self.prey_move_probs.iter().sum();
                if self.prey_move_probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return bad(format!("prey_move_probs must be a distribution, sum is {total}"));
                }
            }
            EnvKind::TrafficJunction => {
                if self.grid_size < 3 {
                    return bad("traffic junction needs grid_size >= 3".into());
                }
                if !(0.0..=1.0).contains(&self.arrival_rate_min)
                    || !(0.0..=1.0).contains(&self.arrival_rate_max)
                    || self.arrival_rate_min > self.arrival_rate_max
                {
                    return bad("arrival rates must satisfy 0 <= min <= max <= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Extra per-step bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub captures: usize,
    pub failed_attempts: usize,
    pub collisions: usize,
    /// Traffic junction: no collision so far this episode.
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    /// Shared by every agent.
    pub reward: f64,
    pub done: bool,
    /// Which agents are in play for the returned observations.
    pub active: Vec<bool>,
    pub info: StepInfo,
}

impl StepResult {
    pub fn agent_rewards(&self) -> Vec<f64> {
        vec![self.reward; self.observations.len()]
    }
}

pub trait Environment {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;
    fn observe(&self, agent: usize) -> Vec<f64>;
    fn active(&self) -> Vec<bool>;
    fn steps(&self) -> usize;
}

/// Either environment, as a concrete serializable value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Env {
    PredatorPrey(PredatorPrey),
    TrafficJunction(TrafficJunction),
}

impl Env {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        Ok(match config.kind {
            EnvKind::PredatorPrey => Env::PredatorPrey(PredatorPrey::new(config.clone())?),
            EnvKind::TrafficJunction => Env::TrafficJunction(TrafficJunction::new(config.clone())?),
        })
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Env::PredatorPrey(e) => e,
            Env::TrafficJunction(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::PredatorPrey(e) => e,
            Env::TrafficJunction(e) => e,
        }
    }

    /// Sets the traffic arrival rate; a no-op for predator-prey.
    pub fn set_arrival_rate(&mut self, rate: f64) {
        if let Env::TrafficJunction(e) = self {
            e.set_arrival_rate(rate);
        }
    }
}

impl Environment for Env {
    fn n_agents(&self) -> usize {
        self.inner().n_agents()
    }
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }
    fn n_actions(&self) -> usize {
        self.inner().n_actions()
    }
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.inner_mut().reset(seed)
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        self.inner_mut().step(actions)
    }
    fn observe(&self, agent: usize) -> Vec<f64> {
        self.inner().observe(agent)
    }
    fn active(&self) -> Vec<bool> {
        self.inner().active()
    }
    fn steps(&self) -> usize {
        self.inner().steps()
    }
}

pub(crate) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::Contract(format!("expected {n_agents} actions, got {}", actions.len())));
    }
    if let Some((i, a)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
        return Err(Error::Contract(format!("agent {i}: action {a} out of range 0..{n_actions}")));
    }
    Ok(())
}
