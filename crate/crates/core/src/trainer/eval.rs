use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::received_for;
use crate::envs::{Env, EnvConfig, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::nets::{AgentNet, Message, MESSAGE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub reward: f64,
    pub success: bool,
    pub length: usize,
}

/// A message as sent during evaluation, with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentMessage {
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub message: Message,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<EpisodeRow>,
    /// Episodic reward for predator-prey, success rate for traffic junction.
    pub mean: f64,
    pub std_error: f64,
    pub reward_mean: f64,
    pub success_rate: f64,
    pub messages: Vec<SentMessage>,
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    rng
}

/// Runs one episode with the stochastic policy, logging every sent message.
pub fn run_episode(
    agents: &[AgentNet],
    env_config: &EnvConfig,
    seed: u64,
    episode: usize,
    arrival_rate: Option<f64>,
) -> Result<(EpisodeRow, Vec<SentMessage>)> {
    use rand::Rng;
    let mut env = Env::new(env_config)?;
    if agents.len() != env.n_agents() {
        return Err(Error::Contract(format!("{} agents for a {}-agent environment", agents.len(), env.n_agents())));
    }
    if let Some(rate) = arrival_rate {
        env.set_arrival_rate(rate);
    }
    let mut rng = episode_rng(seed, episode);
    let n = agents.len();
    let mut obs = env.reset(rng.gen());
    let mut active = env.active();
    let mut hidden: Vec<Vec<f64>> = agents.iter().map(|a| vec![0.0; a.config.hidden]).collect();
    let mut last = vec![[0.0; MESSAGE_DIM]; n];
    let mut log = Vec::new();
    let mut reward = 0.0;
    loop {
        let mut actions = Vec::with_capacity(n);
        let mut sent = vec![[0.0; MESSAGE_DIM]; n];
        for (i, agent) in agents.iter().enumerate() {
            let a = agent.act(&hidden[i], &obs[i], &received_for(i, &last), &mut rng)?;
            if let (Some(m), true) = (a.message, active[i]) {
                sent[i] = m;
                log.push(SentMessage { episode, step: env.steps(), agent: i, message: m });
            }
            hidden[i] = a.hidden;
            actions.push(a.action);
        }
        let r = env.step(&actions)?;
        reward += r.reward;
        obs = r.observations;
        active = r.active;
        last = sent;
        if r.done {
            let row = EpisodeRow { episode, reward, success: r.info.success, length: env.steps() };
            return Ok((row, log));
        }
    }
}

/// Evaluates `episodes` independent episodes. Episode `k` draws from its own
/// random stream derived from `seed`, so results do not depend on order.
pub fn evaluate(
    agents: &[AgentNet],
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    arrival_rate: Option<f64>,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut rows = Vec::with_capacity(episodes);
    let mut messages = Vec::new();
    for k in 0..episodes {
        let (row, log) = run_episode(agents, env_config, seed, k, arrival_rate)?;
        rows.push(row);
        messages.extend(log);
    }
    let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
    let successes: Vec<f64> = rows.iter().map(|r| if r.success { 1.0 } else { 0.0 }).collect();
    let (reward_mean, reward_se) = mean_and_se(&rewards);
    let (success_rate, success_se) = mean_and_se(&successes);
    let (mean, std_error) = match env_config.kind {
        EnvKind::PredatorPrey => (reward_mean, reward_se),
        EnvKind::TrafficJunction => (success_rate, success_se),
    };
    Ok(EvalSummary { rows, mean, std_error, reward_mean, success_rate, messages })
}
