//! Versioned binary container for a complete training state.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "EMCOMMCK" | version u32 | section count u32
//! per section: name length u16 | name | payload length u64 | crc32 u32 | payload
//! ```
//!
//! Payloads are bincode. Sections: `meta` (configs, seed, counters),
//! `params` (agents with named parameter arrays), `optimizer` (Adam moments),
//! `rng` (learner random streams) and `trainer_state` (workers, buffers,
//! recent episodes).

use std::collections::VecDeque;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::grounding::{CaclConfig, MessageBuffer};
use crate::nets::AgentNet;
use crate::trainer::{EpisodeSummary, TrainConfig, Trainer, Worker};

pub const MAGIC: &[u8; 8] = b"EMCOMMCK";
pub const VERSION: u32 = 1;

const SECTIONS: [&str; 5] = ["meta", "params", "optimizer", "rng", "trainer_state"];

#[derive(Serialize, Deserialize)]
struct Meta {
    train: TrainConfig,
    env: EnvConfig,
    cacl: CaclConfig,
    seed: u64,
    env_steps: u64,
    updates: u64,
    episodes: u64,
    evaluations: u64,
    next_eval_at: u64,
    next_checkpoint_at: u64,
}

#[derive(Serialize, Deserialize)]
struct State {
    workers: Vec<Worker>,
    buffers: Vec<MessageBuffer>,
    recent: VecDeque<EpisodeSummary>,
}

fn ck_err(section: &str, reason: impl Into<String>) -> Error {
    Error::Checkpoint { section: section.to_string(), reason: reason.into() }
}

fn encode_section<T: Serialize>(name: &str, value: &T) -> Result<(String, Vec<u8>)> {
    let bytes = bincode::serialize(value).map_err(|e| ck_err(name, e.to_string()))?;
    Ok((name.to_string(), bytes))
}

fn decode_section<T: DeserializeOwned>(sections: &[(String, Vec<u8>)], name: &str) -> Result<T> {
    let (_, bytes) = sections
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| ck_err(name, "section missing"))?;
    bincode::deserialize(bytes).map_err(|e| ck_err(name, format!("cannot decode: {e}")))
}

/// Serializes the complete trainer state.
pub fn encode(trainer: &Trainer) -> Result<Vec<u8>> {
    let meta = Meta {
        train: trainer.train.clone(),
        env: trainer.env.clone(),
        cacl: trainer.cacl.clone(),
        seed: trainer.seed,
        env_steps: trainer.env_steps,
        updates: trainer.updates,
        episodes: trainer.episodes,
        evaluations: trainer.evaluations,
        next_eval_at: trainer.next_eval_at,
        next_checkpoint_at: trainer.next_checkpoint_at,
    };
    let state = State {
        workers: trainer.workers.clone(),
        buffers: trainer.buffers.clone(),
        recent: trainer.recent.clone(),
    };
    let sections = [
        encode_section("meta", &meta)?,
        encode_section("params", &trainer.agents)?,
        encode_section("optimizer", &trainer.optimizers)?,
        encode_section("rng", &trainer.learner_rngs)?,
        encode_section("trainer_state", &state)?,
    ];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, payload) in &sections {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        out.extend_from_slice(payload);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ck_err(section, "file truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, section: &str) -> Result<[u8; N]> {
        Ok(self.take(N, section)?.try_into().unwrap())
    }
}

fn split_sections(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "header")? != MAGIC {
        return Err(ck_err("header", "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.array("header")?);
    if version != VERSION {
        return Err(ck_err(
            "header",
            format!("format version {version} is not supported (this build reads version {VERSION})"),
        ));
    }
    let count = u32::from_le_bytes(r.array("header")?) as usize;
    if count > 64 {
        return Err(ck_err("header", format!("implausible section count {count}")));
    }
    let mut sections = Vec::with_capacity(count);
    for i in 0..count {
        let placeholder = format!("#{i}");
        let len = u16::from_le_bytes(r.array(&placeholder)?) as usize;
        let name = String::from_utf8(r.take(len, &placeholder)?.to_vec())
            .map_err(|_| ck_err(&placeholder, "section name is not utf-8"))?;
        let payload_len = u64::from_le_bytes(r.array(&name)?);
        let crc = u32::from_le_bytes(r.array(&name)?);
        let payload = r.take(usize::try_from(payload_len).map_err(|_| ck_err(&name, "bad length"))?, &name)?;
        if crc32fast::hash(payload) != crc {
            return Err(ck_err(&name, "checksum mismatch, data is corrupt"));
        }
        sections.push((name, payload.to_vec()));
    }
    if r.pos != bytes.len() {
        return Err(ck_err("trailer", format!("{} unexpected bytes after the last section", bytes.len() - r.pos)));
    }
    Ok(sections)
}

/// Rebuilds a trainer from bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let sections = split_sections(bytes)?;
    for name in SECTIONS {
        if !sections.iter().any(|(n, _)| n == name) {
            return Err(ck_err(name, "section missing"));
        }
    }
    let meta: Meta = decode_section(&sections, "meta")?;
    let agents: Vec<AgentNet> = decode_section(&sections, "params")?;
    let optimizers: Vec<AdamState> = decode_section(&sections, "optimizer")?;
    let learner_rngs: Vec<ChaCha8Rng> = decode_section(&sections, "rng")?;
    let state: State = decode_section(&sections, "trainer_state")?;
    let n = agents.len();
    if optimizers.len() != n || learner_rngs.len() != n || state.buffers.len() != n {
        return Err(ck_err("params", "agent, optimizer, rng and buffer counts disagree"));
    }
    if n != meta.env.n_agents {
        return Err(ck_err("params", format!("{n} agents for a {}-agent environment", meta.env.n_agents)));
    }
    Ok(Trainer {
        train: meta.train,
        env: meta.env,
        cacl: meta.cacl,
        seed: meta.seed,
        agents,
        optimizers,
        buffers: state.buffers,
        workers: state.workers,
        learner_rngs,
        env_steps: meta.env_steps,
        updates: meta.updates,
        episodes: meta.episodes,
        evaluations: meta.evaluations,
        next_eval_at: meta.next_eval_at,
        next_checkpoint_at: meta.next_checkpoint_at,
        recent: state.recent,
    })
}

/// Writes atomically through a temporary file in the same directory.
pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    let bytes = encode(trainer)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode(&bytes)
}
