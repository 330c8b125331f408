use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Message;

/// One timestep of an agent's trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    /// Message this agent sent at this step (as stored; recomputed at loss time).
    pub own_message: Message,
    /// Messages received this step from the other agents.
    pub received: Vec<Message>,
}

/// Everything one agent saw and said during one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn new(id: u64) -> Self {
        TrajectoryRecord { id, steps: Vec::new() }
    }

    /// Own plus received messages.
    pub fn message_count(&self) -> usize {
        self.steps.iter().map(|s| 1 + s.received.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Bounded FIFO of trajectory records for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageBuffer {
    capacity: usize,
    records: VecDeque<TrajectoryRecord>,
}

impl MessageBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        MessageBuffer { capacity, records: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends, evicting the oldest record when full.
    pub fn push(&mut self, record: TrajectoryRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn records(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter()
    }

    /// `k` distinct records drawn uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&TrajectoryRecord>> {
        if self.records.is_empty() {
            return Err(Error::EmptyBatch("sample from an empty message buffer".into()));
        }
        if k > self.records.len() {
            return Err(Error::Contract(format!("requested {k} trajectories, buffer holds {}", self.records.len())));
        }
        Ok(index::sample(rng, self.records.len(), k).into_iter().map(|i| &self.records[i]).collect())
    }
}
