use rand::seq::index;
use rand::Rng;

use super::buffer::TrajectoryRecord;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{AgentNet, Bound};

/// Reconstruction loss: MSE between `decoder(message(obs))` and a
/// stop-gradient copy of the observation encoding. `observations` is
/// `[B, obs_dim]`.
pub fn ae_loss(tape: &mut Tape<'_>, net: &AgentNet, bound: &Bound, observations: Var) -> Result<Var> {
    if net.decoder.is_none() {
        return Err(Error::Contract("reconstruction loss needs an agent with a decoder".into()));
    }
    let enc = net.encode_obs(tape, bound, observations);
    let msg = net.message_from_encoding(tape, bound, enc);
    let recon = net.reconstruct(tape, bound, msg)?;
    let target = tape.detach(enc);
    Ok(tape.mse(recon, target))
}

/// Reconstruction loss over the agent's stored observations from sampled
/// trajectories, subsampled to `cap` per trajectory.
pub fn ae_agent_loss<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    net: &'a AgentNet,
    bound: &Bound,
    batch: &[&TrajectoryRecord],
    cap: usize,
    rng: &mut R,
) -> Result<Var> {
    let obs_dim = net.config.obs_dim;
    let mut rows = Vec::new();
    let mut n = 0;
    for record in batch {
        let mut keep: Vec<usize> = (0..record.steps.len()).collect();
        if keep.len() > cap {
            keep = index::sample(rng, record.steps.len(), cap).into_vec();
            keep.sort_unstable();
        }
        for i in keep {
            let o = &record.steps[i].observation;
            if o.len() != obs_dim {
                return Err(Error::Contract(format!("trajectory {}: stored observation has wrong size", record.id)));
            }
            rows.extend_from_slice(o);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyBatch("no stored observations for reconstruction".into()));
    }
    let obs = tape.constant(Tensor::new(n, obs_dim, rows));
    ae_loss(tape, net, bound, obs)
}
