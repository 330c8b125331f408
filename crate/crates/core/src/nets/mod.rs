//! Per-agent architecture: observation and message encoders, a GRU core,
//! and three-layer policy, value and message heads.

mod agent;
mod gru;
mod layers;

pub use agent::{log_softmax, sample_categorical, ActStep, AgentNet, Message, NetConfig, MESSAGE_DIM};
pub use gru::GruCell;
pub use layers::{Bound, Head, Linear};
