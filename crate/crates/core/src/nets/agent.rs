use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::GruCell;
use super::layers::{Bound, Head, Linear};
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Length of every message an agent sends.
pub const MESSAGE_DIM: usize = 4;

pub type Message = [f64; MESSAGE_DIM];

/// Architecture sizes for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub hidden: usize,
    pub obs_embed: usize,
    pub msg_embed: usize,
    /// Whether the message head is active. Without it the agent receives zeros.
    pub communicate: bool,
    /// AE-COMM reconstruction decoder.
    pub decoder: bool,
}

impl NetConfig {
    pub fn new(obs_dim: usize, n_actions: usize, n_agents: usize) -> Self {
        NetConfig {
            obs_dim,
            n_actions,
            n_agents,
            hidden: 32,
            obs_embed: 32,
            msg_embed: 16,
            communicate: true,
            decoder: false,
        }
    }

    /// Width of the concatenated messages received from the other agents.
    pub fn received_dim(&self) -> usize {
        MESSAGE_DIM * self.n_agents.saturating_sub(1)
    }
}

/// One agent's full parameter bundle. Nothing here is shared with other agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNet {
    pub config: NetConfig,
    pub params: ParamSet,
    pub obs_encoder: Linear,
    pub msg_encoder: Linear,
    pub gru: GruCell,
    pub policy: Head,
    pub value: Head,
    pub message: Head,
    pub decoder: Option<[Linear; 2]>,
}

struct SingleStep {
    logits: Vec<f64>,
    value: f64,
    hidden: Vec<f64>,
    message: Option<Message>,
}

/// Result of one [`AgentNet::act`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct ActStep {
    pub action: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
    pub hidden: Vec<f64>,
    /// Message produced from this step's observation, when communicating.
    pub message: Option<Message>,
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        let c = &config;
        let obs_encoder = Linear::new(&mut params, "obs_encoder", c.obs_dim, c.obs_embed, rng);
        let msg_encoder = Linear::new(&mut params, "msg_encoder", c.received_dim(), c.msg_embed, rng);
        let gru = GruCell::new(&mut params, "gru", c.obs_embed + c.msg_embed, c.hidden, rng);
        let policy = Head::new(&mut params, "policy", c.hidden, c.hidden, c.n_actions, rng);
        let value = Head::new(&mut params, "value", c.hidden, c.hidden, 1, rng);
        let message = Head::new(&mut params, "message", c.obs_embed, c.hidden, MESSAGE_DIM, rng);
        let decoder = c.decoder.then(|| {
            [
                Linear::new(&mut params, "decoder.0", MESSAGE_DIM, c.hidden, rng),
                Linear::new(&mut params, "decoder.1", c.hidden, c.obs_embed, rng),
            ]
        });
        AgentNet { config, params, obs_encoder, msg_encoder, gru, policy, value, message, decoder }
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, track: bool) -> Bound {
        Bound::new(&self.params, tape, track)
    }

    /// `[B, obs_dim] → [B, 32]`.
    pub fn encode_obs(&self, tape: &mut Tape<'_>, b: &Bound, obs: Var) -> Var {
        let e = self.obs_encoder.forward(tape, b, obs);
        tape.relu(e)
    }

    /// `[B, 4·(N−1)] → [B, 16]`.
    pub fn encode_received(&self, tape: &mut Tape<'_>, b: &Bound, received: Var) -> Var {
        let e = self.msg_encoder.forward(tape, b, received);
        tape.relu(e)
    }

    pub fn gru_step(&self, tape: &mut Tape<'_>, b: &Bound, x: Var, h: Var) -> Var {
        self.gru.step(tape, b, x, h)
    }

    pub fn policy_logits(&self, tape: &mut Tape<'_>, b: &Bound, h: Var) -> Var {
        self.policy.forward(tape, b, h)
    }

    /// `[B, hidden] → [B, 1]`.
    pub fn value_estimate(&self, tape: &mut Tape<'_>, b: &Bound, h: Var) -> Var {
        self.value.forward(tape, b, h)
    }

    /// Message from an observation encoding, each component in (0, 1).
    pub fn message_from_encoding(&self, tape: &mut Tape<'_>, b: &Bound, encoding: Var) -> Var {
        let m = self.message.forward(tape, b, encoding);
        tape.sigmoid(m)
    }

    /// Decoder output for a batch of messages (AE-COMM agents only).
    pub fn reconstruct(&self, tape: &mut Tape<'_>, b: &Bound, message: Var) -> Result<Var> {
        let [l0, l1] = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Contract("reconstruct called on an agent without a decoder".into()))?;
        let h = l0.forward(tape, b, message);
        let h = tape.relu(h);
        Ok(l1.forward(tape, b, h))
    }

    /// The message this agent sends for `obs`. Depends only on the observation.
    pub fn produce_message(&self, obs: &[f64]) -> Message {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let o = tape.constant(Tensor::row_vector(obs.to_vec()));
        let e = self.encode_obs(&mut tape, &b, o);
        let m = self.message_from_encoding(&mut tape, &b, e);
        to_message(tape.value(m).data())
    }

    /// One decision step: encode, recur, then sample from the softmax policy.
    ///
    /// `received` holds the other agents' messages from the previous step,
    /// concatenated (zeros at the first step of an episode).
    pub fn act<R: Rng + ?Sized>(&self, hidden: &[f64], obs: &[f64], received: &[f64], rng: &mut R) -> Result<ActStep> {
        let fwd = self.forward_single(hidden, obs, received, true)?;
        if fwd.logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("policy logits {:?}", fwd.logits)));
        }
        let log_probs = log_softmax(&fwd.logits);
        let action = sample_categorical(&log_probs, rng);
        let entropy = -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        Ok(ActStep {
            action,
            log_prob: log_probs[action],
            entropy,
            value: fwd.value,
            hidden: fwd.hidden,
            message: fwd.message,
        })
    }

    /// Value estimate after one recurrence step, without sampling.
    pub fn value_of(&self, hidden: &[f64], obs: &[f64], received: &[f64]) -> Result<f64> {
        Ok(self.forward_single(hidden, obs, received, false)?.value)
    }

    fn forward_single(&self, hidden: &[f64], obs: &[f64], received: &[f64], with_message: bool) -> Result<SingleStep> {
        let c = &self.config;
        if hidden.len() != c.hidden || obs.len() != c.obs_dim || received.len() != c.received_dim() {
            return Err(Error::Shape(format!(
                "act: hidden {} / obs {} / received {} vs config {} / {} / {}",
                hidden.len(),
                obs.len(),
                received.len(),
                c.hidden,
                c.obs_dim,
                c.received_dim()
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let o = tape.constant(Tensor::row_vector(obs.to_vec()));
        let r = tape.constant(Tensor::row_vector(received.to_vec()));
        let h = tape.constant(Tensor::row_vector(hidden.to_vec()));
        let enc = self.encode_obs(&mut tape, &b, o);
        let message = (with_message && c.communicate).then(|| {
            let m = self.message_from_encoding(&mut tape, &b, enc);
            to_message(tape.value(m).data())
        });
        let renc = self.encode_received(&mut tape, &b, r);
        let x = tape.concat_cols(&[enc, renc]);
        let h2 = self.gru_step(&mut tape, &b, x, h);
        let logits = self.policy_logits(&mut tape, &b, h2);
        let v = self.value_estimate(&mut tape, &b, h2);
        Ok(SingleStep {
            logits: tape.value(logits).data().to_vec(),
            value: tape.value(v).item(),
            hidden: tape.value(h2).data().to_vec(),
            message,
        })
    }

    /// Zeroes the last layer of the message head, making every message 0.5⁴.
    pub fn zero_message_head(&mut self) {
        self.message.zero_output(&mut self.params);
    }

    pub fn zero_value_head(&mut self) {
        self.value.zero_output(&mut self.params);
    }

    /// Re-estimates σ for every head's penultimate layer.
    pub fn refresh_spectral(&mut self, iters: usize) {
        let params = &self.params;
        self.policy.refresh_spectral(params, iters);
        self.value.refresh_spectral(params, iters);
        self.message.refresh_spectral(params, iters);
    }

    /// Overwrites parameter values by name, checking shapes.
    pub fn load_params(&mut self, named: &ParamSet) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "parameter count {} does not match architecture ({})",
                named.len(),
                self.params.len()
            )));
        }
        for p in named.iter() {
            let id = self
                .params
                .id_of(&p.name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {}", p.name)))?;
            let dst = self.params.tensor_mut(id);
            if dst.shape() != p.value.shape() {
                return Err(Error::Shape(format!("parameter {} has shape {:?}", p.name, p.value.shape())));
            }
            *dst = p.value.clone();
        }
        Ok(())
    }
}

pub(crate) fn to_message(v: &[f64]) -> Message {
    let mut m = [0.0; MESSAGE_DIM];
    m.copy_from_slice(&v[..MESSAGE_DIM]);
    m
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = crate::autodiff::log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Inverse-CDF draw from a categorical given log-probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}
