use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Trajectory-contrastive grounding.
    Cacl,
    /// Autoencoder reconstruction grounding.
    AeComm,
    /// Message head disabled; agents receive zeros.
    NoComm,
}

impl Method {
    pub fn communicates(self) -> bool {
        !matches!(self, Method::NoComm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cacl => "cacl",
            Method::AeComm => "ae_comm",
            Method::NoComm => "no_comm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cacl" => Ok(Method::Cacl),
            "ae_comm" | "aecomm" | "ae" => Ok(Method::AeComm),
            "no_comm" | "nocomm" | "none" => Ok(Method::NoComm),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Actor-critic hyperparameters and run length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub workers: usize,
    pub n_steps: usize,
    /// Environment steps summed over all workers.
    pub total_steps: u64,
    /// Evaluate every this many environment steps (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Checkpoint every this many environment steps (0 disables).
    pub checkpoint_every: u64,
    /// Power iterations per learner update for spectral normalization.
    pub power_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Cacl,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 3e-4,
            adam_eps: 1e-3,
            grad_clip: 2500.0,
            workers: 12,
            n_steps: 5,
            total_steps: 1_000_000,
            eval_every: 50_000,
            eval_episodes: 12,
            checkpoint_every: 0,
            power_iters: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.workers == 0 || self.n_steps == 0 {
            return bad("workers and n_steps must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if !(self.lr >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("lr must be non-negative and adam_eps positive");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        Ok(())
    }
}
