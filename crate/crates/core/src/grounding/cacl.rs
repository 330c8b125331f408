use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::TrajectoryRecord;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{AgentNet, Bound, MESSAGE_DIM};

/// Settings for the trajectory-contrastive message loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaclConfig {
    /// Softmax temperature; must be positive.
    pub temperature: f64,
    /// Scale of the grounding term in the total loss.
    pub weight: f64,
    pub batch_trajectories: usize,
    /// Longer trajectories are subsampled uniformly down to this many messages.
    pub max_messages_per_trajectory: usize,
    pub buffer_capacity: usize,
}

impl Default for CaclConfig {
    fn default() -> Self {
        CaclConfig {
            temperature: 0.1,
            weight: 0.5,
            batch_trajectories: 8,
            max_messages_per_trajectory: 64,
            buffer_capacity: 64,
        }
    }
}

impl CaclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.weight.is_finite() {
            return Err(Error::Config("grounding weight must be finite".into()));
        }
        if self.batch_trajectories == 0 || self.max_messages_per_trajectory == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("grounding batch and buffer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Raw sum over anchors.
    Sum,
    /// Sum divided by the number of anchors that have at least one positive.
    #[default]
    Mean,
}

/// Contrastive loss over messages labelled by trajectory.
///
/// Rows of `messages` are L2-normalized, then for every anchor `i` with at
/// least one positive (another row sharing its label)
///
/// ```text
/// ℓᵢ = −1/|P(i)| · Σ_{p∈P(i)} [ mᵢ·mₚ/τ − log Σ_{a≠i} exp(mᵢ·mₐ/τ) ]
/// ```
///
/// Anchors without positives are skipped. If no anchor qualifies the loss is
/// a constant zero.
pub fn cacl_loss_on_tape(
    tape: &mut Tape<'_>,
    messages: Var,
    labels: &[usize],
    temperature: f64,
    reduction: Reduction,
) -> Result<Var> {
    let [n, _] = tape.value(messages).shape();
    if n == 0 {
        return Err(Error::EmptyBatch("contrastive loss over zero messages".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} messages", labels.len())));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let distinct = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        log::warn!("contrastive batch holds a single trajectory; no negatives");
    }

    let has_anchor = {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    if !has_anchor {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let normed = tape.l2_normalize(messages);
    Ok(tape.contrastive(normed, labels, temperature, reduction == Reduction::Mean))
}

/// Contrastive loss of a batch of message sets, one set per trajectory.
pub fn cacl_loss<M: AsRef<[f64]>>(trajectories: &[Vec<M>], temperature: f64, reduction: Reduction) -> Result<f64> {
    let (rows, labels) = flatten(trajectories)?;
    let mut tape = Tape::new();
    let m = tape.constant(rows);
    let loss = cacl_loss_on_tape(&mut tape, m, &labels, temperature, reduction)?;
    Ok(tape.value(loss).item())
}

fn flatten<M: AsRef<[f64]>>(trajectories: &[Vec<M>]) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (j, t) in trajectories.iter().enumerate() {
        for m in t {
            let m = m.as_ref();
            if *width.get_or_insert(m.len()) != m.len() {
                return Err(Error::Shape("messages of differing length".into()));
            }
            data.extend_from_slice(m);
            labels.push(j);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch("no messages in batch".into()));
    }
    Ok((Tensor::new(labels.len(), width.unwrap_or(0), data), labels))
}

/// Which stored message a row of the contrastive batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Own { step: usize },
    Received { step: usize, k: usize },
}

/// Contrastive loss for one agent over sampled trajectory records.
///
/// The agent's own messages are recomputed from the stored observations with
/// the parameters bound in `bound`, so gradient reaches only its observation
/// encoder and message head. Received messages enter as constants.
pub fn cacl_agent_loss<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    net: &'a AgentNet,
    bound: &Bound,
    batch: &[&TrajectoryRecord],
    config: &CaclConfig,
    rng: &mut R,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("no trajectories for the contrastive loss".into()));
    }
    let obs_dim = net.config.obs_dim;
    let mut own_obs = Vec::new();
    let mut own_labels = Vec::new();
    let mut others = Vec::new();
    let mut other_labels = Vec::new();
    for (label, record) in batch.iter().enumerate() {
        let mut sources: Vec<Source> = Vec::with_capacity(record.message_count());
        for (step, s) in record.steps.iter().enumerate() {
            sources.push(Source::Own { step });
            sources.extend((0..s.received.len()).map(|k| Source::Received { step, k }));
        }
        let cap = config.max_messages_per_trajectory;
        if sources.len() > cap {
            let mut keep = index::sample(rng, sources.len(), cap).into_vec();
            keep.sort_unstable();
            sources = keep.into_iter().map(|i| sources[i]).collect();
        }
        for src in sources {
            match src {
                Source::Own { step } => {
                    let o = &record.steps[step].observation;
                    if o.len() != obs_dim {
                        return Err(Error::Contract(format!(
                            "trajectory {} step {step}: stored observation has {} values, expected {obs_dim}",
                            record.id,
                            o.len()
                        )));
                    }
                    own_obs.extend_from_slice(o);
                    own_labels.push(label);
                }
                Source::Received { step, k } => {
                    others.extend_from_slice(&record.steps[step].received[k]);
                    other_labels.push(label);
                }
            }
        }
    }
    let mut parts = Vec::with_capacity(2);
    if !own_labels.is_empty() {
        let obs = tape.constant(Tensor::new(own_labels.len(), obs_dim, own_obs));
        let enc = net.encode_obs(tape, bound, obs);
        parts.push(net.message_from_encoding(tape, bound, enc));
    }
    if !other_labels.is_empty() {
        parts.push(tape.constant(Tensor::new(other_labels.len(), MESSAGE_DIM, others)));
    }
    if parts.is_empty() {
        return Err(Error::EmptyBatch("sampled trajectories hold no messages".into()));
    }
    let messages = tape.concat_rows(&parts);
    own_labels.extend(other_labels);
    cacl_loss_on_tape(tape, messages, &own_labels, config.temperature, Reduction::Mean)
}
