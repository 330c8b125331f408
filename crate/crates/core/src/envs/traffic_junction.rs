use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EnvConfig, Environment, StepInfo, StepResult};
use crate::error::{Error, Result};

/// Number of car actions: GAS, BRAKE.
pub const TJ_ACTIONS: usize = 2;
pub const GAS: usize = 0;
pub const BRAKE: usize = 1;

/// Two routes cross at one junction: route 0 runs west→east along the middle
/// row, route 1 runs north→south along the middle column.
const N_ROUTES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Car {
    pub route: usize,
    /// Cells travelled along the route; 0 is the arrival point.
    pub progress: usize,
    /// Steps since arrival.
    pub age: usize,
}

/// Single-junction traffic crossing (easy variant).
///
/// Each step: active cars apply gas (advance one cell) or brake (hold);
/// cars leaving the grid become inactive; every car sharing a cell with
/// another car is charged the collision penalty; each active car pays
/// `time_penalty · age`; finally each arrival point spawns a car with
/// probability equal to the current arrival rate, provided an agent is
/// free and the arrival cell is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficJunction {
    config: EnvConfig,
    cars: Vec<Option<Car>>,
    arrival_rate: f64,
    steps: usize,
    collided: bool,
    done: bool,
    rng: ChaCha8Rng,
}

impl TrafficJunction {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut env = TrafficJunction {
            cars: Vec::new(),
            arrival_rate: config.arrival_rate_min,
            steps: 0,
            collided: false,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    /// Scripted layout: `cars[i]` is agent i's car, if any.
    pub fn from_layout(config: EnvConfig, cars: Vec<Option<Car>>, seed: u64) -> Result<Self> {
        let mut env = TrafficJunction::new(EnvConfig { n_agents: cars.len(), ..config })?;
        if let Some(c) = cars.iter().flatten().find(|c| c.route >= N_ROUTES || c.progress >= env.config.grid_size) {
            return Err(Error::Config(format!("car off the route network: {c:?}")));
        }
        env.cars = cars;
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(env)
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    /// Clamped to the configured `[min, max]` range.
    pub fn set_arrival_rate(&mut self, rate: f64) {
        self.arrival_rate = rate.clamp(self.config.arrival_rate_min, self.config.arrival_rate_max);
    }

    pub fn cars(&self) -> &[Option<Car>] {
        &self.cars
    }

    pub fn junction(&self) -> (usize, usize) {
        let m = self.config.grid_size / 2;
        (m, m)
    }

    pub fn cell_of(&self, car: &Car) -> (usize, usize) {
        let m = self.config.grid_size / 2;
        match car.route {
            0 => (m, car.progress),
            _ => (car.progress, m),
        }
    }

    pub fn success(&self) -> bool {
        !self.collided
    }

    fn occupied_by_other(&self, cell: (i64, i64), me: usize) -> bool {
        self.cars.iter().enumerate().any(|(i, c)| {
            i != me && c.is_some_and(|c| {
                let (r, col) = self.cell_of(&c);
                (r as i64, col as i64) == cell
            })
        })
    }
}

impl Environment for TrafficJunction {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.config.view_radius + 1;
        w * w + N_ROUTES + 2 + 1
    }

    fn n_actions(&self) -> usize {
        TJ_ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.cars = vec![None; self.config.n_agents];
        self.steps = 0;
        self.collided = false;
        self.done = false;
        (0..self.config.n_agents).map(|a| self.observe(a)).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        check_actions(actions, self.config.n_agents, TJ_ACTIONS)?;
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let size = self.config.grid_size;
        for (car, &a) in self.cars.iter_mut().zip(actions) {
            if let Some(c) = car {
                c.age += 1;
                if a == GAS {
                    c.progress += 1;
                    if c.progress >= size {
                        *car = None;
                    }
                }
            }
        }

        let mut info = StepInfo::default();
        let mut reward = 0.0;
        let cells: Vec<Option<(usize, usize)>> = self.cars.iter().map(|c| c.map(|c| self.cell_of(&c))).collect();
        for (i, cell) in cells.iter().enumerate() {
            let Some(cell) = cell else { continue };
            if cells.iter().enumerate().any(|(j, other)| j != i && other.as_ref() == Some(cell)) {
                info.collisions += 1;
                reward += self.config.collision_penalty;
            }
        }
        if info.collisions > 0 {
            self.collided = true;
        }
        for c in self.cars.iter().flatten() {
            reward += self.config.time_penalty * c.age as f64;
        }

        for route in 0..N_ROUTES {
            let draw: f64 = self.rng.gen();
            if draw >= self.arrival_rate {
                continue;
            }
            let entry = Car { route, progress: 0, age: 0 };
            let entry_cell = self.cell_of(&entry);
            let entry_cell = (entry_cell.0 as i64, entry_cell.1 as i64);
            if self.occupied_by_other(entry_cell, usize::MAX) {
                continue;
            }
            if let Some(slot) = self.cars.iter_mut().find(|c| c.is_none()) {
                *slot = Some(entry);
            }
        }

        self.steps += 1;
        self.done = self.steps >= self.config.max_steps;
        info.success = !self.collided;
        Ok(StepResult {
            observations: (0..self.config.n_agents).map(|a| self.observe(a)).collect(),
            reward,
            done: self.done,
            active: self.active(),
            info,
        })
    }

    /// Occupancy of the vision window by other cars, route one-hot, own
    /// `(row, col) / grid_size`, then an inactive flag. Inactive agents see
    /// zeros with the flag set.
    fn observe(&self, agent: usize) -> Vec<f64> {
        let r = self.config.view_radius as i64;
        let w = (2 * r + 1) as usize;
        let mut obs = vec![0.0; self.obs_dim()];
        let Some(car) = self.cars[agent] else {
            obs[w * w + N_ROUTES + 2] = 1.0;
            return obs;
        };
        let (cr, cc) = self.cell_of(&car);
        for dr in -r..=r {
            for dc in -r..=r {
                let cell = (cr as i64 + dr, cc as i64 + dc);
                if self.occupied_by_other(cell, agent) {
                    obs[((dr + r) as usize) * w + (dc + r) as usize] = 1.0;
                }
            }
        }
        obs[w * w + car.route] = 1.0;
        let n = self.config.grid_size as f64;
        obs[w * w + N_ROUTES] = cr as f64 / n;
        obs[w * w + N_ROUTES + 1] = cc as f64 / n;
        obs
    }

    fn active(&self) -> Vec<bool> {
        self.cars.iter().map(Option::is_some).collect()
    }

    fn steps(&self) -> usize {
        self.steps
    }
}
