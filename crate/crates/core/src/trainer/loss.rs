use rand::Rng;

use super::config::{Method, TrainConfig};
use super::returns::segment_returns;
use super::rollout::RolloutSegment;
use crate::autodiff::{clip_gradients, adam_step, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grounding::{ae_agent_loss, cacl_agent_loss, CaclConfig, MessageBuffer, TrajectoryRecord};
use crate::nets::{AgentNet, Bound};

/// Scalar pieces of the actor-critic loss, reported alongside the tape node.
#[derive(Clone, Copy, Debug)]
pub struct A2cTerms {
    pub loss: Var,
    /// `c_v·mean((R − V)²)` on its own.
    pub value_term: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub active_samples: usize,
}

/// Actor-critic loss for `agent` over a batch of equal-length segments:
///
/// ```text
/// L_RL = −mean(A·log π(a)) + c_v·mean((R − V)²) − c_e·mean(H[π])
/// ```
///
/// Advantages `A = R − V` are treated as constants in the policy term.
/// Means run over the steps where the agent was active. The GRU is
/// unrolled from each segment's stored initial hidden state and reset to
/// zero after episode ends.
pub fn a2c_loss(
    tape: &mut Tape<'_>,
    net: &AgentNet,
    bound: &Bound,
    agent: usize,
    segments: &[&RolloutSegment],
    config: &TrainConfig,
) -> Result<A2cTerms> {
    let Some(first) = segments.first() else {
        return Err(Error::EmptyBatch("no rollout segments".into()));
    };
    let t_len = first.len();
    if segments.iter().any(|s| s.len() != t_len) {
        return Err(Error::Shape("segments of unequal length".into()));
    }
    let w = segments.len();
    let hidden = net.config.hidden;
    let stack = |f: &dyn Fn(&RolloutSegment) -> &[f64], cols: usize| {
        let mut data = Vec::with_capacity(w * cols);
        for s in segments {
            data.extend_from_slice(f(s));
        }
        Tensor::new(w, cols, data)
    };

    let mut h = tape.constant(stack(&|s| &s.initial_hidden[agent], hidden));
    let mut log_probs = Vec::with_capacity(t_len);
    let mut values = Vec::with_capacity(t_len);
    let mut neg_entropies = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let obs = tape.constant(stack(&|s| &s.steps[t].observations[agent], net.config.obs_dim));
        let recv = tape.constant(stack(&|s| &s.steps[t].received[agent], net.config.received_dim()));
        let enc = net.encode_obs(tape, bound, obs);
        let renc = net.encode_received(tape, bound, recv);
        let x = tape.concat_cols(&[enc, renc]);
        h = net.gru_step(tape, bound, x, h);
        let logits = net.policy_logits(tape, bound, h);
        let v = net.value_estimate(tape, bound, h);
        let lsm = tape.log_softmax(logits);
        let actions: Vec<usize> = segments.iter().map(|s| s.steps[t].actions[agent]).collect();
        log_probs.push(tape.gather(lsm, &actions));
        let p = tape.exp(lsm);
        let plogp = tape.mul(p, lsm);
        neg_entropies.push(tape.sum_cols(plogp));
        values.push(v);
        if t + 1 < t_len && segments.iter().any(|s| s.steps[t].done) {
            let mut keep = Vec::with_capacity(w * hidden);
            for s in segments {
                let k = if s.steps[t].done { 0.0 } else { 1.0 };
                keep.extend(std::iter::repeat_n(k, hidden));
            }
            let keep = tape.constant(Tensor::new(w, hidden, keep));
            h = tape.mul(h, keep);
        }
    }

    // t-major ordering: row t*w + j is segment j at step t
    let returns_by_segment: Vec<Vec<f64>> = segments
        .iter()
        .map(|s| segment_returns(&s.rewards(), &s.dones(), s.bootstrap[agent], config.gamma))
        .collect();
    let mut returns = Vec::with_capacity(t_len * w);
    let mut mask = Vec::with_capacity(t_len * w);
    for t in 0..t_len {
        for (j, s) in segments.iter().enumerate() {
            returns.push(returns_by_segment[j][t]);
            mask.push(if s.steps[t].active[agent] { 1.0 } else { 0.0 });
        }
    }
    let active = mask.iter().filter(|&&m| m > 0.0).count();
    if active == 0 {
        let zero = tape.constant(Tensor::scalar(0.0));
        return Ok(A2cTerms { loss: zero, value_term: zero, policy: 0.0, value: 0.0, entropy: 0.0, active_samples: 0 });
    }
    let inv_n = 1.0 / active as f64;

    let lp = tape.concat_rows(&log_probs);
    let v = tape.concat_rows(&values);
    let neg_h = tape.concat_rows(&neg_entropies);
    if !tape.value(v).is_finite() || !tape.value(lp).is_finite() {
        return Err(Error::NonFinite(format!("agent {agent}: non-finite policy or value output")));
    }

    let adv_weights: Vec<f64> = returns
        .iter()
        .zip(tape.value(v).data())
        .zip(&mask)
        .map(|((r, v), m)| (r - v) * m * inv_n)
        .collect();
    let adv_weights = tape.constant(Tensor::column(adv_weights));
    let weighted = tape.mul(lp, adv_weights);
    let policy = tape.sum(weighted);
    let policy = tape.scale(policy, -1.0);

    let target = tape.constant(Tensor::column(returns));
    let err = tape.sub(target, v);
    let sq = tape.square(err);
    let scaled_mask = tape.constant(Tensor::column(mask.iter().map(|m| m * inv_n).collect()));
    let sq = tape.mul(sq, scaled_mask);
    let value_mse = tape.sum(sq);
    let value_term = tape.scale(value_mse, config.value_coef);

    let masked_neg_h = tape.mul(neg_h, scaled_mask);
    let mean_neg_h = tape.sum(masked_neg_h);
    let entropy_term = tape.scale(mean_neg_h, config.entropy_coef);

    let pv = tape.add(policy, value_term);
    let loss = tape.add(pv, entropy_term);
    Ok(A2cTerms {
        loss,
        value_term,
        policy: tape.value(policy).item(),
        value: tape.value(value_mse).item(),
        entropy: -tape.value(mean_neg_h).item(),
        active_samples: active,
    })
}

/// Grounding term for one agent, or `None` when the method has none or the
/// buffer is still warming up (fewer than two trajectories).
pub fn grounding_loss<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    net: &'a AgentNet,
    bound: &Bound,
    method: Method,
    buffer: &MessageBuffer,
    cacl: &CaclConfig,
    rng: &mut R,
) -> Result<Option<Var>> {
    if method == Method::NoComm || buffer.len() < 2 {
        return Ok(None);
    }
    let k = cacl.batch_trajectories.min(buffer.len());
    let batch: Vec<&TrajectoryRecord> = buffer.sample(k, rng)?;
    let loss = match method {
        Method::Cacl => cacl_agent_loss(tape, net, bound, &batch, cacl, rng)?,
        Method::AeComm => ae_agent_loss(tape, net, bound, &batch, cacl.max_messages_per_trajectory, rng)?,
        Method::NoComm => unreachable!(),
    };
    Ok(Some(loss))
}

/// `L = L_RL + κ·L_ground`.
pub fn total_loss(tape: &mut Tape<'_>, rl: Var, ground: Option<Var>, kappa: f64) -> Var {
    match ground {
        Some(g) if kappa != 0.0 => {
            let scaled = tape.scale(g, kappa);
            tape.add(rl, scaled)
        }
        _ => rl,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grounding_loss: Option<f64>,
    pub grad_norm: f64,
}

/// Full learner update for one agent: forward, backward, clip, Adam.
/// Touches only this agent's parameters.
#[allow(clippy::too_many_arguments)]
pub fn update_agent<R: Rng + ?Sized>(
    net: &mut AgentNet,
    optimizer: &mut AdamState,
    buffer: &MessageBuffer,
    agent: usize,
    segments: &[&RolloutSegment],
    train: &TrainConfig,
    cacl: &CaclConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    net.refresh_spectral(train.power_iters);
    let (mut grads, mut stats) = {
        let net: &AgentNet = net;
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let rl = a2c_loss(&mut tape, net, &bound, agent, segments, train)?;
        let ground = grounding_loss(&mut tape, net, &bound, train.method, buffer, cacl, rng)?;
        let loss = total_loss(&mut tape, rl.loss, ground, cacl.weight);
        let mut g = tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = bound
            .vars()
            .iter()
            .zip(net.params.iter())
            .map(|(&v, p)| g.take(v).unwrap_or_else(|| vec![0.0; p.value.len()]))
            .collect();
        let stats = UpdateStats {
            loss: tape.value(loss).item(),
            policy_loss: rl.policy,
            value_loss: rl.value,
            entropy: rl.entropy,
            grounding_loss: ground.map(|g| tape.value(g).item()),
            grad_norm: 0.0,
        };
        (grads, stats)
    };
    stats.grad_norm = clip_gradients(&mut grads, train.grad_clip);
    adam_step(&mut net.params, &grads, optimizer)?;
    Ok(stats)
}
