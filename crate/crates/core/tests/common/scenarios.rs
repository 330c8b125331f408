//! Scripted environment scenarios with known outcomes.

use emcomm::envs::{Car, EnvConfig, Environment, PredatorPrey, TrafficJunction, BRAKE, GAS};

use super::rng;
use rand::Rng;

const LEFT: usize = 0;
const UP: usize = 2;
const NOOP: usize = 4;

/// One scripted check: what it is, the exact expected value, the observed one.
pub struct Scenario {
    pub name: &'static str,
    pub expected: f64,
    pub observed: f64,
}

impl Scenario {
    pub fn exact(&self) -> bool {
        (self.expected - self.observed).abs() < 1e-12
    }
}

fn frozen_prey() -> EnvConfig {
    EnvConfig { prey_move_probs: [0.0, 0.0, 0.0, 0.0, 1.0], ..EnvConfig::predator_prey() }
}

fn no_arrivals() -> EnvConfig {
    EnvConfig { arrival_rate_min: 0.0, arrival_rate_max: 0.0, ..EnvConfig::traffic_junction() }
}

pub fn predator_prey_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();

    // three sides covered, the fourth predator closes the gap
    let mut env =
        PredatorPrey::from_layout(frozen_prey(), &[(2, 3), (4, 3), (3, 2), (3, 5)], &[(3, 3), (0, 6)], 0).unwrap();
    let r = env.step(&[NOOP, NOOP, NOOP, LEFT]).unwrap();
    out.push(Scenario { name: "capture reward", expected: 10.0, observed: r.reward - env_step_penalty() });
    out.push(Scenario { name: "capture count", expected: 1.0, observed: r.info.captures as f64 });
    out.push(Scenario { name: "captured prey removed", expected: 1.0, observed: env.preys().len() as f64 });

    // corner prey: two walls and two predators
    let mut env = PredatorPrey::from_layout(frozen_prey(), &[(0, 1), (2, 0)], &[(0, 0)], 0).unwrap();
    let r = env.step(&[NOOP, UP]).unwrap();
    out.push(Scenario { name: "corner capture reward", expected: 10.0 - 0.01, observed: r.reward });
    out.push(Scenario { name: "episode ends when all preys are caught", expected: 1.0, observed: r.done as u8 as f64 });

    let mut env = PredatorPrey::from_layout(frozen_prey(), &[(3, 2)], &[(3, 3)], 0).unwrap();
    let r = env.step(&[NOOP]).unwrap();
    out.push(Scenario { name: "failed attempt penalty", expected: -0.5, observed: r.reward - env_step_penalty() });

    let mut env = PredatorPrey::from_layout(frozen_prey(), &[(3, 2), (0, 1)], &[(3, 3), (0, 0)], 0).unwrap();
    let r = env.step(&[NOOP, NOOP]).unwrap();
    out.push(Scenario { name: "failed attempts counted per prey", expected: -1.0 - 0.01, observed: r.reward });

    let mut env = PredatorPrey::from_layout(frozen_prey(), &[(0, 0)], &[(5, 5)], 0).unwrap();
    let r = env.step(&[NOOP]).unwrap();
    out.push(Scenario { name: "step penalty", expected: -0.01, observed: r.reward });
    out
}

fn env_step_penalty() -> f64 {
    EnvConfig::predator_prey().step_penalty
}

fn car(route: usize, progress: usize) -> Option<Car> {
    Some(Car { route, progress, age: 0 })
}

pub fn traffic_junction_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    // both cars one cell short of the junction
    let mut env = TrafficJunction::from_layout(no_arrivals(), vec![car(0, 3), car(1, 3)], 0).unwrap();
    let r = env.step(&[GAS, GAS]).unwrap();
    out.push(Scenario { name: "collision penalty per car", expected: -20.0, observed: r.reward + 0.02 });
    out.push(Scenario { name: "collisions counted per car", expected: 2.0, observed: r.info.collisions as f64 });
    out.push(Scenario { name: "success false on collision", expected: 0.0, observed: r.info.success as u8 as f64 });
    let r = env.step(&[BRAKE, BRAKE]).unwrap();
    out.push(Scenario { name: "success stays false", expected: 0.0, observed: r.info.success as u8 as f64 });

    let mut env = TrafficJunction::from_layout(no_arrivals(), vec![car(0, 3), car(1, 3)], 0).unwrap();
    let r = env.step(&[GAS, BRAKE]).unwrap();
    out.push(Scenario { name: "yielding avoids collision", expected: 0.0, observed: r.info.collisions as f64 });
    out.push(Scenario { name: "time penalty by age", expected: -0.02, observed: r.reward });
    let r = env.step(&[GAS, BRAKE]).unwrap();
    out.push(Scenario { name: "time penalty grows with age", expected: -0.04, observed: r.reward });
    out.push(Scenario { name: "success without collision", expected: 1.0, observed: r.info.success as u8 as f64 });
    out
}

/// Empirical prey move frequencies (LEFT, RIGHT, UP, DOWN, NO-OP) read off
/// an actual environment, counting only steps where every move was open.
pub fn prey_move_frequencies(samples: usize, seed: u64) -> [f64; 5] {
    let config = EnvConfig { max_steps: usize::MAX, ..EnvConfig::predator_prey() };
    let mut env = PredatorPrey::from_layout(config, &[(0, 0)], &[(3, 3)], seed).unwrap();
    let mut counts = [0usize; 5];
    let mut seen = 0;
    while seen < samples {
        let before = env.preys()[0];
        let (r, c) = (before.0 as i64, before.1 as i64);
        let open = [(0, -1), (0, 1), (-1, 0), (1, 0)]
            .iter()
            .all(|(dr, dc)| (0..7).contains(&(r + dr)) && (0..7).contains(&(c + dc)) && (r + dr, c + dc) != (0, 0));
        // the predator never moves, so it cannot affect the prey's draw
        env.step(&[NOOP]).unwrap();
        if !open {
            continue;
        }
        let after = env.preys()[0];
        let d = (after.0 as i64 - r, after.1 as i64 - c);
        let k = match d {
            (0, -1) => 0,
            (0, 1) => 1,
            (-1, 0) => 2,
            (1, 0) => 3,
            _ => 4,
        };
        counts[k] += 1;
        seen += 1;
    }
    counts.map(|n| n as f64 / samples as f64)
}

/// Random-action traffic episodes where each car brakes with probability
/// `brake`; returns the fraction of collision-free episodes.
pub fn traffic_success_rate(brake: f64, episodes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut env = TrafficJunction::new(EnvConfig::traffic_junction()).unwrap();
    let mut ok = 0;
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64));
        env.set_arrival_rate(0.1);
        loop {
            let actions: Vec<usize> = (0..5).map(|_| if r.gen_bool(brake) { BRAKE } else { GAS }).collect();
            let s = env.step(&actions).unwrap();
            if s.done {
                ok += s.info.success as usize;
                break;
            }
        }
    }
    ok as f64 / episodes as f64
}
