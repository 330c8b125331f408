//! Small training setups shared by the trainer tests and the acceptance suite.

use emcomm::autodiff::Tape;
use emcomm::envs::EnvConfig;
use emcomm::grounding::{CaclConfig, MessageBuffer};
use emcomm::nets::{AgentNet, Bound};
use emcomm::trainer::{a2c_loss, build_agents, grounding_loss, total_loss, Method, RolloutSegment, TrainConfig, Worker};
use rand::Rng;

use super::rng;

/// Training config sized for tests: two workers, evaluation and
/// checkpoints off.
pub fn tiny_train(method: Method, total_steps: u64) -> TrainConfig {
    TrainConfig { method, workers: 2, total_steps, eval_every: 0, checkpoint_every: 0, ..TrainConfig::default() }
}

/// Predator-prey with short episodes, so trajectories finish quickly.
pub fn short_pp() -> EnvConfig {
    EnvConfig { max_steps: 12, ..EnvConfig::predator_prey_small() }
}

/// Real rollout data: one round of segments from `workers` workers plus
/// per-agent buffers filled over `rounds` rounds.
pub fn collect(
    agents: &[AgentNet],
    env: &EnvConfig,
    workers: usize,
    rounds: usize,
    seed: u64,
) -> (Vec<RolloutSegment>, Vec<MessageBuffer>) {
    let hidden = agents[0].config.hidden;
    let mut ws: Vec<Worker> = (0..workers).map(|i| Worker::new(i, env, seed + i as u64, hidden).unwrap()).collect();
    let mut buffers: Vec<MessageBuffer> = agents.iter().map(|_| MessageBuffer::new(64)).collect();
    let mut segments = Vec::new();
    for round in 0..rounds {
        for w in ws.iter_mut() {
            let out = w.rollout(agents, 5).unwrap();
            for (b, recs) in buffers.iter_mut().zip(out.trajectories) {
                recs.into_iter().for_each(|r| b.push(r));
            }
            if round + 1 == rounds {
                segments.extend(out.segment);
            }
        }
    }
    (segments, buffers)
}

/// Binds every agent on one tape, builds agent `i`'s full loss and returns
/// the largest gradient magnitude found on any other agent's parameters,
/// plus whether agent `i` itself received a nonzero gradient.
pub fn cross_agent_gradient(seed: u64) -> (f64, bool) {
    let mut r = rng(seed);
    let method = if r.gen_bool(0.5) { Method::Cacl } else { Method::AeComm };
    let env = if r.gen_bool(0.5) {
        short_pp()
    } else {
        EnvConfig { max_steps: 8, arrival_rate_min: 0.3, arrival_rate_max: 0.3, ..EnvConfig::traffic_junction() }
    };
    let mut agents = build_agents(&env, method, &mut r).unwrap();
    agents.iter_mut().for_each(|a| a.refresh_spectral(5));
    let (segments, buffers) = collect(&agents, &env, 3, 12, seed);
    let refs: Vec<&RolloutSegment> = segments.iter().collect();
    let train = TrainConfig { method, ..TrainConfig::default() };
    let cacl = CaclConfig::default();
    let warm: Vec<usize> = (0..agents.len()).filter(|&k| buffers[k].len() >= 2).collect();
    let i = warm[r.gen_range(0..warm.len())];

    let mut tape = Tape::new();
    let bounds: Vec<Bound> = agents.iter().map(|a| a.bind(&mut tape, true)).collect();
    let rl = a2c_loss(&mut tape, &agents[i], &bounds[i], i, &refs, &train).unwrap();
    let ground = grounding_loss(&mut tape, &agents[i], &bounds[i], method, &buffers[i], &cacl, &mut r).unwrap();
    assert!(ground.is_some(), "buffer should be warm");
    let loss = total_loss(&mut tape, rl.loss, ground, cacl.weight);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let mut own = false;
    for (j, b) in bounds.iter().enumerate() {
        for &v in b.vars() {
            let m = grads.get(v).map_or(0.0, |g| g.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            if j == i {
                own |= m > 0.0;
            } else {
                worst = worst.max(m);
            }
        }
    }
    (worst, own)
}

/// Metrics rows without the wall-clock column.
pub fn metrics_without_wall_time(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let headers = rd.headers().unwrap().clone();
    let wall = headers.iter().position(|h| h == "wall_time").unwrap();
    rd.records()
        .map(|r| r.unwrap().iter().enumerate().filter(|(i, _)| *i != wall).map(|(_, v)| v.to_string()).collect())
        .collect()
}

/// Single-worker end-to-end determinism: two fresh runs, and a run resumed
/// from its midpoint checkpoint, must leave identical final checkpoints and
/// metrics (wall time aside). Returns a description of the first mismatch.
pub fn resume_determinism(method: Method, env: EnvConfig, steps: u64, seed: u64) -> Result<(), String> {
    use emcomm::harness::{train_seed, RunConfig, CHECKPOINT_DIR, FINAL_CHECKPOINT, METRICS_FILE};
    let root = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new("det", method, env);
    cfg.train = TrainConfig {
        method,
        workers: 1,
        total_steps: steps,
        eval_every: steps / 4,
        eval_episodes: 2,
        checkpoint_every: steps / 2,
        ..TrainConfig::default()
    };
    let run = |sub: &str, resume: Option<&std::path::Path>| {
        let mut c = cfg.clone();
        c.run.output_dir = Some(root.path().join(sub));
        train_seed(&c, seed, resume).map_err(|e| e.to_string())
    };
    let a = run("a", None)?;
    let b = run("b", None)?;
    let bytes = |d: &std::path::Path| std::fs::read(d.join(FINAL_CHECKPOINT)).unwrap();
    if bytes(&a.dir) != bytes(&b.dir) {
        return Err("fresh runs differ".into());
    }
    let ma = metrics_without_wall_time(&a.dir.join(METRICS_FILE));
    if ma != metrics_without_wall_time(&b.dir.join(METRICS_FILE)) {
        return Err("fresh metrics differ".into());
    }
    let mid = a.dir.join(CHECKPOINT_DIR).join(format!("step_{:010}.ckpt", steps / 2));
    let c = run("c", Some(&mid))?;
    if bytes(&a.dir) != bytes(&c.dir) {
        return Err("resumed run differs from uninterrupted run".into());
    }
    let mc = metrics_without_wall_time(&c.dir.join(METRICS_FILE));
    if ma[ma.len() - mc.len()..] != mc[..] || mc.is_empty() {
        return Err(format!("resumed metrics differ ({} vs {} rows)", mc.len(), ma.len()));
    }
    Ok(())
}
