//! Independent actor-critic with n-step returns over parallel environment
//! workers, plus the grounding term of the selected method.
//!
//! Each round every worker steps its own environment copy `n_steps` times
//! against the current (read-only) agents, finished trajectories go into
//! the per-agent buffers, and then every agent is updated from its own loss
//! alone. Workers own their random streams and results are merged in worker
//! order, so a run is reproducible from its seed regardless of scheduling.

mod config;
mod eval;
mod loss;
mod returns;
mod rollout;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Method, TrainConfig};
pub use eval::{evaluate, mean_and_se, run_episode, EpisodeRow, EvalSummary, SentMessage};
pub use loss::{a2c_loss, grounding_loss, total_loss, update_agent, A2cTerms, UpdateStats};
pub use returns::{nstep_returns, segment_returns};
pub use rollout::{received_for, EpisodeSummary, RolloutOutput, RolloutSegment, SegmentStep, Worker};

use crate::autodiff::AdamState;
use crate::envs::{Env, EnvConfig, EnvKind, Environment};
use crate::error::Result;
use crate::grounding::{CaclConfig, MessageBuffer};
use crate::nets::{AgentNet, NetConfig};

const RECENT_EPISODES: usize = 100;

/// Architecture for the given environment and method.
pub fn net_config(env: &EnvConfig, method: Method) -> Result<NetConfig> {
    let probe = Env::new(env)?;
    let mut c = NetConfig::new(probe.obs_dim(), probe.n_actions(), probe.n_agents());
    c.communicate = method.communicates();
    c.decoder = method == Method::AeComm;
    Ok(c)
}

/// Agents for a fresh run, each drawing its initial weights from `rng` in turn.
pub fn build_agents<R: Rng + ?Sized>(env: &EnvConfig, method: Method, rng: &mut R) -> Result<Vec<AgentNet>> {
    let cfg = net_config(env, method)?;
    Ok((0..cfg.n_agents).map(|_| AgentNet::new(cfg.clone(), rng)).collect())
}

/// Seed for the `index`-th evaluation of a run; never collides with the
/// streams used for training.
pub fn eval_seed(run_seed: u64, index: u64) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index) ^ 0xE7A1_5EED_0000_0000
}

/// Summary of one rollout + update round.
#[derive(Clone, Debug, Default)]
pub struct RoundReport {
    pub episodes: Vec<EpisodeSummary>,
    pub stats: Vec<UpdateStats>,
}

/// Complete, serializable training state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub cacl: CaclConfig,
    pub seed: u64,
    pub agents: Vec<AgentNet>,
    pub optimizers: Vec<AdamState>,
    pub buffers: Vec<MessageBuffer>,
    pub workers: Vec<Worker>,
    pub(crate) learner_rngs: Vec<ChaCha8Rng>,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub evaluations: u64,
    pub(crate) next_eval_at: u64,
    pub(crate) next_checkpoint_at: u64,
    pub(crate) recent: VecDeque<EpisodeSummary>,
}

/// Callbacks for the outer training loop.
pub trait TrainingHooks {
    fn on_round(&mut self, _trainer: &Trainer, _report: &RoundReport) -> Result<()> {
        Ok(())
    }
    fn on_eval(&mut self, _trainer: &Trainer, _summary: &EvalSummary) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;
impl TrainingHooks for NoHooks {}

impl Trainer {
    pub fn new(train: TrainConfig, env: EnvConfig, cacl: CaclConfig, seed: u64) -> Result<Self> {
        train.validate()?;
        env.validate()?;
        cacl.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let agents = build_agents(&env, train.method, &mut master)?;
        let optimizers = agents
            .iter()
            .map(|a| AdamState::new(&a.params, train.lr, train.adam_eps))
            .collect();
        let buffers = agents.iter().map(|_| MessageBuffer::new(cacl.buffer_capacity)).collect();
        let hidden = agents[0].config.hidden;
        let workers = (0..train.workers)
            .map(|id| Worker::new(id, &env, master.gen(), hidden))
            .collect::<Result<Vec<_>>>()?;
        let learner_rngs = agents.iter().map(|_| ChaCha8Rng::seed_from_u64(master.gen())).collect();
        let next_eval_at = train.eval_every;
        let next_checkpoint_at = train.checkpoint_every;
        Ok(Trainer {
            train,
            env,
            cacl,
            seed,
            agents,
            optimizers,
            buffers,
            workers,
            learner_rngs,
            env_steps: 0,
            updates: 0,
            episodes: 0,
            evaluations: 0,
            next_eval_at,
            next_checkpoint_at,
            recent: VecDeque::with_capacity(RECENT_EPISODES),
        })
    }

    /// Traffic arrival rate, ramped linearly from min to max over the run.
    pub fn arrival_rate(&self) -> Option<f64> {
        (self.env.kind == EnvKind::TrafficJunction).then(|| {
            let progress = if self.train.total_steps == 0 {
                1.0
            } else {
                (self.env_steps as f64 / self.train.total_steps as f64).min(1.0)
            };
            self.env.arrival_rate_min + (self.env.arrival_rate_max - self.env.arrival_rate_min) * progress
        })
    }

    /// Mean reward of the most recent finished training episodes.
    pub fn recent_reward(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().map(|e| e.reward).sum::<f64>() / self.recent.len() as f64)
    }

    pub fn recent_success(&self) -> Option<f64> {
        (!self.recent.is_empty())
            .then(|| self.recent.iter().filter(|e| e.success).count() as f64 / self.recent.len() as f64)
    }

    /// One rollout on every worker followed by one update of every agent.
    pub fn train_round(&mut self) -> Result<RoundReport> {
        if let Some(rate) = self.arrival_rate() {
            self.workers.iter_mut().for_each(|w| w.env_mut().set_arrival_rate(rate));
        }
        let n_steps = self.train.n_steps;
        let agents = &self.agents;
        let outputs: Vec<RolloutOutput> = self
            .workers
            .par_iter_mut()
            .map(|w| w.rollout(agents, n_steps))
            .collect::<Result<_>>()?;
        self.env_steps += (self.workers.len() * n_steps) as u64;

        let mut report = RoundReport::default();
        let mut segments = Vec::with_capacity(outputs.len());
        for out in outputs {
            for (buffer, records) in self.buffers.iter_mut().zip(out.trajectories) {
                records.into_iter().for_each(|r| buffer.push(r));
            }
            for e in out.episodes {
                if self.recent.len() == RECENT_EPISODES {
                    self.recent.pop_front();
                }
                self.recent.push_back(e.clone());
                report.episodes.push(e);
            }
            segments.extend(out.segment);
        }
        self.episodes += report.episodes.len() as u64;

        let seg_refs: Vec<&RolloutSegment> = segments.iter().collect();
        let (train, cacl) = (&self.train, &self.cacl);
        let buffers = &self.buffers;
        report.stats = self
            .agents
            .par_iter_mut()
            .zip(self.optimizers.par_iter_mut())
            .zip(self.learner_rngs.par_iter_mut())
            .enumerate()
            .map(|(i, ((net, opt), rng))| update_agent(net, opt, &buffers[i], i, &seg_refs, train, cacl, rng))
            .collect::<Result<_>>()?;
        self.updates += 1;
        Ok(report)
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalSummary> {
        evaluate(&self.agents, &self.env, episodes, eval_seed(self.seed, self.evaluations), self.arrival_rate())
    }
}

/// Trains until `until_steps` environment steps (capped by the configured
/// total), evaluating and checkpointing on the configured cadence.
pub fn run_training_until(trainer: &mut Trainer, until_steps: u64, hooks: &mut dyn TrainingHooks) -> Result<()> {
    let until = until_steps.min(trainer.train.total_steps);
    while trainer.env_steps < until {
        let report = trainer.train_round()?;
        hooks.on_round(trainer, &report)?;
        if trainer.train.eval_every > 0 && trainer.env_steps >= trainer.next_eval_at {
            let summary = trainer.evaluate(trainer.train.eval_episodes)?;
            trainer.evaluations += 1;
            while trainer.next_eval_at <= trainer.env_steps {
                trainer.next_eval_at += trainer.train.eval_every;
            }
            hooks.on_eval(trainer, &summary)?;
        }
        if trainer.train.checkpoint_every > 0 && trainer.env_steps >= trainer.next_checkpoint_at {
            while trainer.next_checkpoint_at <= trainer.env_steps {
                trainer.next_checkpoint_at += trainer.train.checkpoint_every;
            }
            hooks.on_checkpoint(trainer)?;
        }
    }
    Ok(())
}

/// Trains for the configured number of environment steps.
pub fn run_training(trainer: &mut Trainer, hooks: &mut dyn TrainingHooks) -> Result<()> {
    let total = trainer.train.total_steps;
    run_training_until(trainer, total, hooks)
}
