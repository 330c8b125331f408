/// Discounted n-step returns for one episode fragment:
/// `R_t = Σ_k γ^k r_{t+k} + γ^{len−t} · bootstrap`.
///
/// Pass `bootstrap = 0` when the fragment ends at a terminal state.
pub fn nstep_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Returns for a rollout segment that may contain episode ends. A `done`
/// at step t stops accumulation, so nothing leaks across the boundary.
pub fn segment_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len());
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}
