use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EnvConfig, Environment, StepInfo, StepResult};
use crate::error::{Error, Result};

/// Number of predator actions: LEFT, RIGHT, UP, DOWN, NO-OP.
pub const PP_ACTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreyMove {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
    NoOp = 4,
}

type Cell = (i64, i64);

fn delta(action: usize) -> Cell {
    match action {
        0 => (0, -1),
        1 => (0, 1),
        2 => (-1, 0),
        3 => (1, 0),
        _ => (0, 0),
    }
}

const NEIGHBORS: [Cell; 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Fully-cooperative predator-prey.
///
/// A prey is captured once none of its four orthogonal moves is possible:
/// each neighbor is either a predator or off the grid. Predators never see
/// each other, only preys and the grid boundary inside their window.
///
/// Step order: predators move in index order (a predator cannot enter a
/// cell already holding a predator or a prey), captures and failed
/// attempts are scored, then the surviving preys move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredatorPrey {
    config: EnvConfig,
    predators: Vec<Cell>,
    /// `None` once captured.
    preys: Vec<Option<Cell>>,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl PredatorPrey {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut env = PredatorPrey {
            predators: Vec::new(),
            preys: Vec::new(),
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    /// Builds an environment in an explicit layout, for scripted scenarios.
    pub fn from_layout(config: EnvConfig, predators: &[(usize, usize)], preys: &[(usize, usize)], seed: u64) -> Result<Self> {
        let mut env = PredatorPrey::new(EnvConfig { n_agents: predators.len(), n_preys: preys.len(), ..config })?;
        let size = env.config.grid_size;
        let mut seen = std::collections::BTreeSet::new();
        for &(r, c) in predators.iter().chain(preys) {
            if r >= size || c >= size || !seen.insert((r, c)) {
                return Err(Error::Config(format!("invalid or duplicate cell ({r}, {c})")));
            }
        }
        env.predators = predators.iter().map(|&(r, c)| (r as i64, c as i64)).collect();
        env.preys = preys.iter().map(|&(r, c)| Some((r as i64, c as i64))).collect();
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn predators(&self) -> Vec<(usize, usize)> {
        self.predators.iter().map(|&(r, c)| (r as usize, c as usize)).collect()
    }

    /// Positions of preys not yet captured.
    pub fn preys(&self) -> Vec<(usize, usize)> {
        self.preys.iter().flatten().map(|&(r, c)| (r as usize, c as usize)).collect()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn in_grid(&self, (r, c): Cell) -> bool {
        let n = self.config.grid_size as i64;
        (0..n).contains(&r) && (0..n).contains(&c)
    }

    fn has_predator(&self, cell: Cell) -> bool {
        self.predators.contains(&cell)
    }

    fn has_prey(&self, cell: Cell) -> bool {
        self.preys.iter().flatten().any(|&p| p == cell)
    }

    fn blocked_for_prey(&self, cell: Cell) -> bool {
        !self.in_grid(cell) || self.has_predator(cell)
    }

    fn is_surrounded(&self, prey: Cell) -> bool {
        NEIGHBORS.iter().all(|&(dr, dc)| self.blocked_for_prey((prey.0 + dr, prey.1 + dc)))
    }

    fn has_adjacent_predator(&self, prey: Cell) -> bool {
        NEIGHBORS.iter().any(|&(dr, dc)| self.has_predator((prey.0 + dr, prey.1 + dc)))
    }
}

impl PreyMove {
    /// Draws a prey move from `probs` (LEFT, RIGHT, UP, DOWN, NO-OP).
    pub fn sample<R: Rng + ?Sized>(probs: &[f64; 5], rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        PreyMove::NoOp as usize
    }
}

impl Environment for PredatorPrey {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.config.view_radius + 1;
        2 * w * w + 2
    }

    fn n_actions(&self) -> usize {
        PP_ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.config.grid_size;
        let count = self.config.n_agents + self.config.n_preys;
        let cells = index::sample(&mut self.rng, n * n, count).into_vec();
        let to_cell = |i: usize| ((i / n) as i64, (i % n) as i64);
        self.predators = cells[..self.config.n_agents].iter().map(|&i| to_cell(i)).collect();
        self.preys = cells[self.config.n_agents..].iter().map(|&i| Some(to_cell(i))).collect();
        self.steps = 0;
        self.done = false;
        (0..self.config.n_agents).map(|a| self.observe(a)).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        check_actions(actions, self.config.n_agents, PP_ACTIONS)?;
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        for (i, &a) in actions.iter().enumerate() {
            let (dr, dc) = delta(a);
            let from = self.predators[i];
            let to = (from.0 + dr, from.1 + dc);
            if to != from && self.in_grid(to) && !self.has_predator(to) && !self.has_prey(to) {
                self.predators[i] = to;
            }
        }

        let mut info = StepInfo::default();
        let mut reward = 0.0;
        for k in 0..self.preys.len() {
            let Some(prey) = self.preys[k] else { continue };
            if self.is_surrounded(prey) {
                self.preys[k] = None;
                info.captures += 1;
                reward += self.config.capture_reward;
            } else if self.has_adjacent_predator(prey) {
                info.failed_attempts += 1;
                reward += self.config.failed_attempt_penalty;
            }
        }

        for k in 0..self.preys.len() {
            let Some(prey) = self.preys[k] else { continue };
            let mv = PreyMove::sample(&self.config.prey_move_probs, &mut self.rng);
            let (dr, dc) = delta(mv);
            let to = (prey.0 + dr, prey.1 + dc);
            if to != prey && !self.blocked_for_prey(to) && !self.has_prey(to) {
                self.preys[k] = Some(to);
            }
        }

        reward += self.config.step_penalty;
        self.steps += 1;
        self.done = self.preys.iter().all(Option::is_none) || self.steps >= self.config.max_steps;
        info.success = self.preys.iter().all(Option::is_none);
        Ok(StepResult {
            observations: (0..self.config.n_agents).map(|a| self.observe(a)).collect(),
            reward,
            done: self.done,
            active: self.active(),
            info,
        })
    }

    /// Prey channel and out-of-bounds channel over the view window, then own
    /// `(row, col) / grid_size`. Other predators are never visible.
    fn observe(&self, agent: usize) -> Vec<f64> {
        let r = self.config.view_radius as i64;
        let w = (2 * r + 1) as usize;
        let mut obs = vec![0.0; self.obs_dim()];
        let (pr, pc) = self.predators[agent];
        for dr in -r..=r {
            for dc in -r..=r {
                let cell = (pr + dr, pc + dc);
                let k = ((dr + r) as usize) * w + (dc + r) as usize;
                if !self.in_grid(cell) {
                    obs[w * w + k] = 1.0;
                } else if self.has_prey(cell) {
                    obs[k] = 1.0;
                }
            }
        }
        let n = self.config.grid_size as f64;
        obs[2 * w * w] = pr as f64 / n;
        obs[2 * w * w + 1] = pc as f64 / n;
        obs
    }

    fn active(&self) -> Vec<bool> {
        vec![true; self.config.n_agents]
    }

    fn steps(&self) -> usize {
        self.steps
    }
}
