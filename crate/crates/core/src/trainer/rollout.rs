use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvConfig, Environment};
use crate::error::Result;
use crate::grounding::{TrajectoryRecord, TrajectoryStep};
use crate::nets::{AgentNet, Message, MESSAGE_DIM};

/// One environment step as seen by every agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStep {
    pub observations: Vec<Vec<f64>>,
    /// Per agent: the other agents' previous-step messages, concatenated.
    pub received: Vec<Vec<f64>>,
    pub active: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub values: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// `n_steps` consecutive steps from one worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSegment {
    /// Per agent hidden state before the first step.
    pub initial_hidden: Vec<Vec<f64>>,
    pub steps: Vec<SegmentStep>,
    /// Per agent value estimate after the last step (0 when it was terminal).
    pub bootstrap: Vec<f64>,
}

impl RolloutSegment {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub length: usize,
    pub success: bool,
}

/// Output of one worker round.
#[derive(Debug, Default)]
pub struct RolloutOutput {
    pub segment: Option<RolloutSegment>,
    pub episodes: Vec<EpisodeSummary>,
    /// Finished trajectories, indexed by agent.
    pub trajectories: Vec<Vec<TrajectoryRecord>>,
}

/// One environment copy plus everything needed to keep stepping it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: usize,
    env: Env,
    rng: ChaCha8Rng,
    hidden: Vec<Vec<f64>>,
    observations: Vec<Vec<f64>>,
    active: Vec<bool>,
    /// Messages each agent sent on the previous step (zeros if none).
    last_messages: Vec<Message>,
    last_sent: Vec<bool>,
    records: Vec<TrajectoryRecord>,
    episode_reward: f64,
    episode_index: u64,
}

/// Concatenation of every other agent's message, `4·(N−1)` values.
pub fn received_for(agent: usize, messages: &[Message]) -> Vec<f64> {
    let mut out = Vec::with_capacity(MESSAGE_DIM * messages.len().saturating_sub(1));
    for (j, m) in messages.iter().enumerate() {
        if j != agent {
            out.extend_from_slice(m);
        }
    }
    out
}

impl Worker {
    pub fn new(id: usize, env_config: &EnvConfig, seed: u64, hidden: usize) -> Result<Self> {
        let env = Env::new(env_config)?;
        let n = env.n_agents();
        let mut w = Worker {
            id,
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hidden: vec![vec![0.0; hidden]; n],
            observations: Vec::new(),
            active: Vec::new(),
            last_messages: vec![[0.0; MESSAGE_DIM]; n],
            last_sent: vec![false; n],
            records: Vec::new(),
            episode_reward: 0.0,
            episode_index: 0,
        };
        w.start_episode();
        Ok(w)
    }

    fn trajectory_id(&self) -> u64 {
        ((self.id as u64) << 40) | self.episode_index
    }

    fn start_episode(&mut self) {
        let seed = self.rng.gen();
        self.observations = self.env.reset(seed);
        self.active = self.env.active();
        let n = self.observations.len();
        self.hidden.iter_mut().for_each(|h| h.fill(0.0));
        self.last_messages = vec![[0.0; MESSAGE_DIM]; n];
        self.last_sent = vec![false; n];
        self.episode_reward = 0.0;
        let id = self.trajectory_id();
        self.records = (0..n).map(|_| TrajectoryRecord::new(id)).collect();
    }

    pub fn env_mut(&mut self) -> &mut Env {
        &mut self.env
    }

    /// Steps the environment `n_steps` times with the given (read-only) agents.
    pub fn rollout(&mut self, agents: &[AgentNet], n_steps: usize) -> Result<RolloutOutput> {
        let n = agents.len();
        let mut out = RolloutOutput { trajectories: vec![Vec::new(); n], ..Default::default() };
        let initial_hidden = self.hidden.clone();
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let received: Vec<Vec<f64>> = (0..n).map(|i| received_for(i, &self.last_messages)).collect();
            let mut actions = Vec::with_capacity(n);
            let mut log_probs = Vec::with_capacity(n);
            let mut entropies = Vec::with_capacity(n);
            let mut values = Vec::with_capacity(n);
            let mut messages = vec![[0.0; MESSAGE_DIM]; n];
            let mut sent = vec![false; n];
            for (i, agent) in agents.iter().enumerate() {
                let a = agent.act(&self.hidden[i], &self.observations[i], &received[i], &mut self.rng)?;
                if let (Some(m), true) = (a.message, self.active[i]) {
                    messages[i] = m;
                    sent[i] = true;
                }
                if self.active[i] {
                    let inbox = (0..n)
                        .filter(|&j| j != i && self.last_sent[j])
                        .map(|j| self.last_messages[j])
                        .collect();
                    self.records[i].steps.push(TrajectoryStep {
                        observation: self.observations[i].clone(),
                        own_message: messages[i],
                        received: inbox,
                    });
                }
                self.hidden[i] = a.hidden;
                actions.push(a.action);
                log_probs.push(a.log_prob);
                entropies.push(a.entropy);
                values.push(a.value);
            }
            let result = self.env.step(&actions)?;
            self.episode_reward += result.reward;
            steps.push(SegmentStep {
                observations: std::mem::take(&mut self.observations),
                received,
                active: std::mem::take(&mut self.active),
                actions,
                log_probs,
                entropies,
                values,
                reward: result.reward,
                done: result.done,
            });
            self.observations = result.observations;
            self.active = result.active;
            self.last_messages = messages;
            self.last_sent = sent;
            if result.done {
                out.episodes.push(EpisodeSummary {
                    reward: self.episode_reward,
                    length: self.env.steps(),
                    success: result.info.success,
                });
                for (i, rec) in std::mem::take(&mut self.records).into_iter().enumerate() {
                    if !rec.is_empty() {
                        out.trajectories[i].push(rec);
                    }
                }
                self.episode_index += 1;
                self.start_episode();
            }
        }
        let last_done = steps.last().is_some_and(|s| s.done);
        let bootstrap = if last_done {
            vec![0.0; n]
        } else {
            let received: Vec<Vec<f64>> = (0..n).map(|i| received_for(i, &self.last_messages)).collect();
            agents
                .iter()
                .enumerate()
                .map(|(i, a)| a.value_of(&self.hidden[i], &self.observations[i], &received[i]))
                .collect::<Result<_>>()?
        };
        out.segment = Some(RolloutSegment { initial_hidden, steps, bootstrap });
        Ok(out)
    }
}
